"""Safe optimal control synthesis via density/value-function duality."""

__version__ = "0.1.0"
