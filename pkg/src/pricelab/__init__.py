"""Package initialization."""

__version__ = "0.3.0"  # managed by bump2version
