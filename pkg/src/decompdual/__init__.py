"""Decomposable Lagrangian duals for block-structured mixed-binary programs."""
__version__ = "0.1.0"
