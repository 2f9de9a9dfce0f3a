"""Mask- and class-conditioned synthesis of corneal nerve images, from scratch in numpy."""

__version__ = "0.1.0"
