"""Patch-density-prior reconstruction of undersampled MR k-space data."""

__version__ = "0.1.0"
