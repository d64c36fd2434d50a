"""Numerical tools for incremental stability and contraction analysis."""

__version__ = "0.1.0"

from . import sysdsl  # noqa: E402,F401  (loads before metricgeo, which it depends on)
