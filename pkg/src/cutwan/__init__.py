"""Weak adversarial network PDE solvers with stabilized and cutoff-weighted losses."""
__version__ = "0.1.0"
