"""Skeleton sequences to enhanced pose/motion images, classified by a dense CNN."""

__version__ = "0.1.0"
