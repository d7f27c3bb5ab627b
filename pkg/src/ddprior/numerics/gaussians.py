"""Diagonal-Gaussian log densities and the closed-form KL to N(0, I)."""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def gaussian_logpdf_diag(x: np.ndarray, mean: np.ndarray, logvar: np.ndarray) -> float:
    """log N(x | mean, diag(exp(logvar))) summed over all elements."""
    x, mean, logvar = np.asarray(x), np.asarray(mean), np.asarray(logvar)
    if not (x.shape == mean.shape == logvar.shape):
        raise ValueError(f"shape mismatch: {x.shape}, {mean.shape}, {logvar.shape}")
    terms = -0.5 * LOG_2PI - 0.5 * logvar - 0.5 * (x - mean) ** 2 * np.exp(-logvar)
    return float(np.sum(terms))


def kl_to_standard_normal(mean: np.ndarray, logvar: np.ndarray) -> float:
    """KL( N(mean, diag(exp(logvar))) || N(0, I) ), always >= 0."""
    mean, logvar = np.asarray(mean), np.asarray(logvar)
    if mean.shape != logvar.shape:
        raise ValueError(f"shape mismatch: {mean.shape}, {logvar.shape}")
    return float(0.5 * np.sum(mean**2 + np.exp(logvar) - logvar - 1.0))
