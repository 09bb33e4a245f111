"""Multi-scale fully convolutional network engine for land-cover segmentation."""

__version__ = "0.1.0"
