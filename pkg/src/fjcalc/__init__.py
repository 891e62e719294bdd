"""Network calculus for single-stage fork-join (parallel processing) systems."""
__version__ = "0.1.0"
