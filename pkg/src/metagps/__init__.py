"""Few-shot node classification with prototype-guided graph meta-learning."""

__version__ = "0.1.0"
