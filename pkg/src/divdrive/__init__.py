"""Diversity-regularized trajectory-guided control prediction at desk scale."""

__version__ = "0.1.0"
