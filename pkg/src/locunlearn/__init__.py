"""Localized machine unlearning on small numpy networks."""

__version__ = "0.1.0"
