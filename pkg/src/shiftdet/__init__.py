"""Frame-folded action detection: a small two-stage video detector with
temporal channel shifting, written on numpy."""

__version__ = "0.1.0"
