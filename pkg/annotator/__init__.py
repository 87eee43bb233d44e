"""Empty init file to make annotator a package."""
