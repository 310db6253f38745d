"""Online batch selection by reducible holdout loss."""

__version__ = "0.1.0"
