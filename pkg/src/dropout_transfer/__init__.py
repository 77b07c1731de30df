"""Transfer learning for weekly MOOC dropout prediction from raw clickstream counts."""

__version__ = "0.1.0"
