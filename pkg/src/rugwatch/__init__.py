"""Pool-history reconstruction, rug-pull labeling, and detection models."""

__version__ = "0.1.0"
