"""Audio-visual speech recognition with visually guided audio enhancement."""

__version__ = "0.1.0"
