"""Zero-free power-of-two (DenseShift) networks: training, conversion and inference."""

__version__ = "0.1.0"
