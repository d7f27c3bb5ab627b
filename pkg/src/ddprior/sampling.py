"""Undersampling pattern generation.

Cartesian masks undersample along the phase-encode axis only: lines are drawn
from a centered 1D Gaussian over line indices, many candidate sets are scored
by the point-spread-function peak-to-side ratio, the best one is kept, and
the 15 central profiles are always included so the low frequencies are fully
sampled.  Radial trajectories are deterministic uniformly-rotated spokes
through the k-space origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics.rng import Rng

CENTER_LINES = 15
PSR_SENTINEL = 1e18  # stands in for +inf when the psf has no side lobe


class CenterTooWideError(ValueError):
    """Requested line budget cannot even hold the fully sampled center."""


@dataclass(frozen=True)
class CartesianMask:
    """Phase-encode line mask; the readout direction is fully sampled."""

    height: int
    width: int
    sampled_lines: frozenset[int]
    net_ratio: float
    seed: int = 0

    @property
    def line_count(self) -> int:
        return len(self.sampled_lines)

    def indicator(self) -> np.ndarray:
        """0/1 vector over phase-encode indices."""
        ind = np.zeros(self.width, dtype=np.float64)
        ind[sorted(self.sampled_lines)] = 1.0
        return ind

    def to_image(self) -> np.ndarray:
        """0/1 image of shape (height, width)."""
        return np.tile(self.indicator(), (self.height, 1))


@dataclass(frozen=True)
class RadialTrajectory:
    """Uniformly rotated spokes; coordinates in cycles/pixel in [-0.5, 0.5)."""

    spokes: int
    samples_per_spoke: int
    coordinates: np.ndarray = field(repr=False)  # (spokes*samples, 2) as (kx, ky)


def center_line_indices(width: int) -> range:
    """The 15 central profiles, symmetric around floor(width/2)."""
    mid = width // 2
    return range(mid - (CENTER_LINES - 1) // 2, mid + (CENTER_LINES - 1) // 2 + 1)


def _psr_of_indicators(ind: np.ndarray) -> np.ndarray:
    """Peak-to-side ratio per row of a (n, width) stack of 0/1 indicators."""
    psf = np.abs(np.fft.ifft(ind, axis=-1, norm="ortho"))
    peak = psf[..., 0]
    side = psf[..., 1:].max(axis=-1) if ind.shape[-1] > 1 else np.zeros_like(peak)
    out = np.full(peak.shape, PSR_SENTINEL)
    ok = side > 0
    out[ok] = peak[ok] / side[ok]
    return np.minimum(out, PSR_SENTINEL)


def peak_to_side_ratio(mask: CartesianMask) -> float:
    """|psf(0)| / max_{k != 0} |psf(k)| of the line indicator's inverse DFT."""
    if mask.line_count == 0:
        raise ValueError("empty mask")
    return float(_psr_of_indicators(mask.indicator()[None])[0])


def _draw_gaussian_lines(width: int, count: int, std: float, excluded: set[int], rng: Rng) -> set[int]:
    """Sample `count` distinct non-excluded line indices from N(center, std)."""
    center = (width - 1) / 2.0
    chosen: set[int] = set()
    while len(chosen) < count:
        draws = np.rint(rng.normal((4 * count + 16,), loc=center, scale=std)).astype(int)
        for d in draws:
            if 0 <= d < width and d not in excluded and d not in chosen:
                chosen.add(int(d))
                if len(chosen) == count:
                    break
    return chosen


def draw_mask_candidates(
    width: int,
    R: float,
    n_candidates: int,
    rng: Rng,
    height: int | None = None,
    gaussian_std: float | None = None,
) -> list[CartesianMask]:
    """The candidate cohort one mask draw selects from.

    Every candidate holds the 15 central lines plus round(width/R) - 15
    Gaussian-drawn lines, so the net ratio including the center is R.
    """
    if R < 1:
        raise ValueError(f"undersampling ratio must be >= 1, got {R}")
    total = int(round(width / R))
    if total < CENTER_LINES:
        raise CenterTooWideError(
            f"round({width}/{R}) = {total} lines cannot hold the {CENTER_LINES} central profiles"
        )
    height = width if height is None else height
    std = width / 6.0 if gaussian_std is None else gaussian_std
    center = set(center_line_indices(width))
    candidates = []
    for _ in range(max(1, n_candidates)):
        lines = center | _draw_gaussian_lines(width, total - CENTER_LINES, std, center, rng)
        candidates.append(
            CartesianMask(height, width, frozenset(lines), net_ratio=float(R), seed=rng.seed)
        )
    return candidates


def gen_cartesian_mask(
    width: int,
    R: float,
    n_candidates: int = 1000,
    rng: Rng | None = None,
    height: int | None = None,
    gaussian_std: float | None = None,
) -> CartesianMask:
    """Best-peak-to-side-ratio mask among `n_candidates` Gaussian draws."""
    rng = Rng(0) if rng is None else rng
    candidates = draw_mask_candidates(width, R, n_candidates, rng, height, gaussian_std)
    ind = np.stack([c.indicator() for c in candidates])
    scores = _psr_of_indicators(ind)
    # ties break to the lowest candidate index for determinism
    return candidates[int(np.argmax(scores))]


def gen_radial_trajectory(size: int, R: float) -> RadialTrajectory:
    """ceil((pi/2) * size / R) spokes of `size` samples through the origin."""
    if size < 4:
        raise ValueError(f"size must be >= 4, got {size}")
    if R < 1:
        raise ValueError(f"undersampling ratio must be >= 1, got {R}")
    spokes = int(math.ceil((math.pi / 2.0) * size / R))
    radii = (np.arange(size) - size // 2) / size  # in [-0.5, 0.5), hits 0
    angles = np.arange(spokes) * math.pi / spokes
    kx = np.outer(np.cos(angles), radii).ravel()
    ky = np.outer(np.sin(angles), radii).ravel()
    coords = np.stack([kx, ky], axis=1)
    return RadialTrajectory(spokes=spokes, samples_per_spoke=size, coordinates=coords)
