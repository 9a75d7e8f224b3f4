"""slicetwin: deterministic edge-twin 6G network slicing simulator."""

__version__ = "0.1.0"
