"""Linear and non-linear regression with model-agnostic interpretation tools."""

__version__ = "0.1.0"
