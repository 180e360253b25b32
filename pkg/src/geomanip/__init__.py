"""Geometry-aware learning and tracking of manipulability ellipsoids."""

__version__ = "0.1.0"
