"""Hardware-aware 1D-CNN architecture search for encrypted traffic sessions."""

__version__ = "0.1.0"
