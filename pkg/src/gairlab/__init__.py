"""Adversarial training with per-example weights set by attack-step counts, on a small numpy engine."""

__version__ = "0.1.0"
