"""Configuration-ensemble diagnosis prediction with plurality voting."""

__version__ = "0.1.0"
