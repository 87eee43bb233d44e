"""Empty init file to make utils a package."""
