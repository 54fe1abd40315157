"""Diagonal self-affine measures: symbolic codings, approximate squares,
entropy estimators and projection-dimension experiments."""
from __future__ import annotations

__version__ = "0.1.0"
