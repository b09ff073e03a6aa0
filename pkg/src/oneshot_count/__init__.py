"""One-shot object counting with attention-based feature correlation, built on a small numpy autodiff engine."""

__version__ = "0.1.0"
