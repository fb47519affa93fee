"""Dual-view mammogram classification with BI-RADS descriptor fusion."""

__version__ = "0.1.0"
