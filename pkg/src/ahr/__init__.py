"""Autoencoder-based hybrid replay for class-incremental learning."""

__version__ = "0.1.0"
