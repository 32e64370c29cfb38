"""Pulmonary nodule detection with a recurrent convolutional network."""

__version__ = "0.1.0"
