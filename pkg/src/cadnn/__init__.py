"""From-scratch convolutional network engine and MRI-style classification harness."""

__version__ = "0.1.0"
