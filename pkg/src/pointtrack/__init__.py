"""Point-cloud single-object tracking by voting for target centers."""

__version__ = "0.1.0"
