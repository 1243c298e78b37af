"""Figure rendering for densyn comparison CSVs (fig 2a-2c style)."""

__version__ = "0.1.0"
