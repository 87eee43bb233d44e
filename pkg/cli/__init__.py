"""Empty init file to make cli a package."""
