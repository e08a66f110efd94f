"""Desk-scale laboratory for subliminal trait transfer through distillation."""

__version__ = "0.1.0"
