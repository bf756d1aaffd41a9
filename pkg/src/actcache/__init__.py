"""Initialize the package."""
