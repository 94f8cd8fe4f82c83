"""Grid laboratory for elliptic measure, capacity and Holder-scale norms."""

__version__ = "0.1.0"
