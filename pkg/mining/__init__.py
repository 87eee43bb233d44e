"""Empty init file to make mining a package."""
