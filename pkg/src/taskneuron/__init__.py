"""Task-based neurons: vectorized symbolic regression plus trainable polynomial neurons."""

__version__ = "0.1.0"
