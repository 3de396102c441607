"""Exception types shared across the package."""


class DataError(ValueError):
    """Malformed or unusable capture-history data."""


class FitError(RuntimeError):
    """A numerical fit could not be carried out."""
