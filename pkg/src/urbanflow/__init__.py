"""Mall attraction and social mixing analysis from telecom event logs."""

__version__ = "0.1.0"
