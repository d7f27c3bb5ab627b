"""The encoding operator E = U F S and its adjoint.

Cartesian sampling selects full readout columns of the orthonormal 2D FFT at
the masked phase-encode lines.  Non-uniform (radial) sampling evaluates an
exact direct-summation DFT at the trajectory coordinates with the same
1/sqrt(N) scaling, factorized along the two axes so it stays O(M*(H+W))
instead of O(M*H*W) per application.

`apply_EH` folds in the Roemer combination (pixelwise division by the coil
sum-of-squares); `apply_EH_raw` is the mathematical adjoint used by the
dot-product tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics.fft import fft2, ifft2
from .numerics.rng import Rng
from .sampling import CartesianMask, RadialTrajectory


@dataclass(frozen=True)
class EncodingOperator:
    kind: str  # cartesian | nonuniform
    height: int
    width: int
    coil_maps: np.ndarray = field(repr=False)  # (gamma, H, W) complex
    sigma: float = 0.0
    mask: CartesianMask | None = None
    trajectory: RadialTrajectory | None = None
    # cached NUDFT phase factors, (M, H) and (M, W)
    _phase_y: np.ndarray | None = field(default=None, repr=False, compare=False)
    _phase_x: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def gamma(self) -> int:
        return self.coil_maps.shape[0]

    @property
    def n_samples(self) -> int:
        if self.kind == "cartesian":
            return self.mask.line_count * self.height
        return self.trajectory.spokes * self.trajectory.samples_per_spoke

    def sos(self) -> np.ndarray:
        """Coil sum of squares, the Roemer normalizer."""
        return np.sum(np.abs(self.coil_maps) ** 2, axis=0)


@dataclass
class KSpaceData:
    samples: np.ndarray  # (M, gamma) complex
    operator: EncodingOperator


def cartesian_operator(mask: CartesianMask, coil_maps: np.ndarray, sigma: float = 0.0) -> EncodingOperator:
    coil_maps = np.asarray(coil_maps, dtype=np.complex128)
    if coil_maps.shape[1:] != (mask.height, mask.width):
        raise ValueError(f"coil maps {coil_maps.shape[1:]} do not match mask dims {(mask.height, mask.width)}")
    return EncodingOperator(
        kind="cartesian", height=mask.height, width=mask.width,
        coil_maps=coil_maps, sigma=float(sigma), mask=mask,
    )


def nonuniform_operator(
    trajectory: RadialTrajectory, height: int, width: int, coil_maps: np.ndarray, sigma: float = 0.0
) -> EncodingOperator:
    coil_maps = np.asarray(coil_maps, dtype=np.complex128)
    if coil_maps.shape[1:] != (height, width):
        raise ValueError(f"coil maps {coil_maps.shape[1:]} do not match dims {(height, width)}")
    kx = trajectory.coordinates[:, 0]
    ky = trajectory.coordinates[:, 1]
    phase_y = np.exp(-2j * np.pi * np.outer(ky, np.arange(height)))
    phase_x = np.exp(-2j * np.pi * np.outer(kx, np.arange(width)))
    return EncodingOperator(
        kind="nonuniform", height=height, width=width,
        coil_maps=coil_maps, sigma=float(sigma), trajectory=trajectory,
        _phase_y=phase_y, _phase_x=phase_x,
    )


def _sampled_columns(mask: CartesianMask) -> np.ndarray:
    return np.array(sorted(mask.sampled_lines), dtype=np.intp)


def _nudft_forward(op: EncodingOperator, img: np.ndarray) -> np.ndarray:
    # y_k = (1/sqrt(N)) sum_{y,x} img[y,x] e^{-2pi i (ky*y + kx*x)}
    partial = op._phase_x @ img.T  # (M, H)
    scale = 1.0 / np.sqrt(op.height * op.width)
    return scale * np.sum(op._phase_y * partial, axis=1)


def _nudft_adjoint(op: EncodingOperator, samples: np.ndarray) -> np.ndarray:
    scale = 1.0 / np.sqrt(op.height * op.width)
    return scale * (op._phase_y.conj().T @ (samples[:, None] * op._phase_x.conj()))


def apply_E(op: EncodingOperator, m: np.ndarray) -> KSpaceData:
    """Noiseless per-coil sampling of U F (S_c * m)."""
    m = np.asarray(m, dtype=np.complex128)
    if m.shape != (op.height, op.width):
        raise ValueError(f"image {m.shape} does not match operator dims {(op.height, op.width)}")
    out = np.empty((op.n_samples, op.gamma), dtype=np.complex128)
    if op.kind == "cartesian":
        cols = _sampled_columns(op.mask)
        for c in range(op.gamma):
            out[:, c] = fft2(op.coil_maps[c] * m)[:, cols].ravel()
    else:
        for c in range(op.gamma):
            out[:, c] = _nudft_forward(op, op.coil_maps[c] * m)
    return KSpaceData(samples=out, operator=op)


def apply_EH_raw(op: EncodingOperator, y: KSpaceData | np.ndarray) -> np.ndarray:
    """Mathematical adjoint sum_c S_c^* F^H U^H y_c, no coil normalization."""
    samples = y.samples if isinstance(y, KSpaceData) else np.asarray(y)
    if samples.shape != (op.n_samples, op.gamma):
        raise ValueError(f"samples {samples.shape} do not match operator ({op.n_samples}, {op.gamma})")
    acc = np.zeros((op.height, op.width), dtype=np.complex128)
    if op.kind == "cartesian":
        cols = _sampled_columns(op.mask)
        for c in range(op.gamma):
            k = np.zeros((op.height, op.width), dtype=np.complex128)
            k[:, cols] = samples[:, c].reshape(op.height, cols.size)
            acc += op.coil_maps[c].conj() * ifft2(k)
    else:
        for c in range(op.gamma):
            acc += op.coil_maps[c].conj() * _nudft_adjoint(op, samples[:, c])
    return acc


def apply_EH(op: EncodingOperator, y: KSpaceData | np.ndarray) -> np.ndarray:
    """Adjoint with Roemer combination: divide pixelwise by sum_c |S_c|^2."""
    return apply_EH_raw(op, y) / op.sos()


def simulate_coil_maps(height: int, width: int, gamma: int, rng: Rng) -> np.ndarray:
    """Smooth synthetic sensitivities: Gaussian bumps with gentle phase ramps.

    Single coil is the constant map 1.  The stack is globally scaled so the
    sum of squares is at least 0.1 at every pixel.
    """
    if gamma < 1:
        raise ValueError("need at least one coil")
    if gamma == 1:
        return np.ones((1, height, width), dtype=np.complex128)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    radius = 0.38 * min(height, width)
    bump_sigma = 0.7 * min(height, width)
    maps = np.empty((gamma, height, width), dtype=np.complex128)
    for c in range(gamma):
        angle = 2 * np.pi * c / gamma + rng.uniform(None, -0.2, 0.2)
        cy = height / 2.0 + radius * np.sin(angle)
        cx = width / 2.0 + radius * np.cos(angle)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * bump_sigma**2))
        ramp = (
            rng.uniform(None, -0.5, 0.5) * (yy / height - 0.5)
            + rng.uniform(None, -0.5, 0.5) * (xx / width - 0.5)
            + rng.uniform(None, -np.pi, np.pi)
        )
        maps[c] = mag * np.exp(1j * ramp)
    sos = np.sum(np.abs(maps) ** 2, axis=0)
    maps /= np.sqrt(sos.max())
    sos_min = (np.sum(np.abs(maps) ** 2, axis=0)).min()
    if sos_min < 0.1:
        maps *= np.sqrt(0.1 / sos_min)
    return maps


def add_noise(y: KSpaceData, sigma: float, rng: Rng) -> KSpaceData:
    """i.i.d. N(0, sigma^2) on real and imaginary parts independently."""
    if sigma < 0:
        raise ValueError("noise std must be >= 0")
    if sigma == 0:
        return KSpaceData(samples=y.samples.copy(), operator=y.operator)
    noise = rng.normal(y.samples.shape, scale=sigma) + 1j * rng.normal(y.samples.shape, scale=sigma)
    return KSpaceData(samples=y.samples + noise, operator=y.operator)
