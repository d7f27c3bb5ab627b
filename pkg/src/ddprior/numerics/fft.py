"""Orthonormal 2D Fourier transform on complex image grids."""

from __future__ import annotations

import numpy as np


def fft2(img: np.ndarray, direction: str = "forward") -> np.ndarray:
    """Unitary 2D DFT; scaling 1/sqrt(N) in both directions."""
    img = np.asarray(img)
    if img.ndim < 1:
        raise ValueError("fft2 needs at least one dimension")
    if not np.all(np.isfinite(img)):
        raise ValueError("fft2: non-finite input")
    if direction == "forward":
        return np.fft.fft2(img, norm="ortho")
    if direction == "inverse":
        return np.fft.ifft2(img, norm="ortho")
    raise ValueError(f"unknown direction {direction!r}")


def ifft2(img: np.ndarray) -> np.ndarray:
    return fft2(img, "inverse")
