"""Progressive multi-granularity training for a toy non-autoregressive translator."""

__version__ = "0.1.0"
