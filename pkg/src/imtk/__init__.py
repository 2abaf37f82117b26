"""Desk-scale implicit motion transfer rendering and flow-matching motion
generation, built on a minimal numpy autodiff substrate."""

__version__ = "0.1.0"
