"""Sum-of-squares stability and performance certificates for neural-network control loops."""

__version__ = "0.1.0"
