"""Patch-prior model: encoder, decoder, ELBO training, checkpoints, sampling.

The encoder maps a nonnegative magnitude patch to the mean and log-variance
of a diagonal Gaussian over the latent code; the decoder maps a latent code
to per-pixel mean and log-variance maps for the patch.  Both networks are
stacks of 3x3 same-padded convolutions with a single dense layer, ReLU
activations, and log-variance outputs; log-variances are clamped to
[-10, 10] before exponentiation as a hard numerical guard.

Training maximizes the per-patch evidence lower bound with the closed-form
KL term and one reparameterized latent sample per datum.  All gradients are
hand-written reverse mode over this fixed topology.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .numerics.adam import AdamState, adam_step
from .numerics.container import ContainerError, read_tensors, write_tensors
from .numerics.gaussians import LOG_2PI, gaussian_logpdf_diag, kl_to_standard_normal
from .numerics.layers import (
    LayerParams,
    conv3x3_backward_cl,
    conv3x3_forward_cl,
    dense_backward,
    dense_forward,
    relu,
    relu_backward,
)
from .numerics.rng import Rng, truncated_normal

LOGVAR_CLAMP = 10.0


class ArchMismatchError(ValueError):
    """Checkpoint header architecture disagrees with its tensor shapes."""


class CheckpointError(ValueError):
    """Checkpoint container is missing entries or otherwise unusable."""


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class VaeArch:
    patch: int = 16
    latent: int = 16
    enc_channels: tuple[int, ...] = (32, 64, 64)
    dec_channels: tuple[int, ...] = (64, 64, 64)

    def __post_init__(self):
        if self.patch < 2 or self.latent < 1:
            raise ValueError("patch side must be >= 2 and latent dim >= 1")


# base-model scale used for the published configuration
PAPER_ARCH = VaeArch(patch=28, latent=60)


@dataclass
class TrainConfig:
    batch: int = 32
    iterations: int = 5000
    lr: float = 5e-4
    init_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if min(self.batch, self.iterations) < 1 or self.lr <= 0 or self.init_std <= 0:
            raise ValueError("batch, iterations, lr and init_std must be positive")


PAPER_TRAIN = TrainConfig(batch=50, iterations=200_000, lr=5e-4)


@dataclass
class VaeModel:
    arch: VaeArch
    enc: list[LayerParams]
    dec: list[LayerParams]

    def named_params(self) -> dict[str, np.ndarray]:
        """Live views of every parameter array, keyed by stable names."""
        out = {}
        for side, layers in (("enc", self.enc), ("dec", self.dec)):
            for i, lp in enumerate(layers):
                out[f"{side}.{i}.weights"] = lp.weights
                out[f"{side}.{i}.bias"] = lp.bias
        return out

    def copy(self) -> "VaeModel":
        return VaeModel(
            self.arch,
            [replace(lp, weights=lp.weights.copy(), bias=lp.bias.copy()) for lp in self.enc],
            [replace(lp, weights=lp.weights.copy(), bias=lp.bias.copy()) for lp in self.dec],
        )


def _layer_shapes(arch: VaeArch) -> tuple[list[tuple], list[tuple]]:
    p, L = arch.patch, arch.latent
    enc = []
    cin = 1
    for c in arch.enc_channels:
        enc.append(("conv3x3", "relu", (c, cin, 3, 3), (c,)))
        cin = c
    enc.append(("dense", "none", (2 * L, cin * p * p), (2 * L,)))
    d0 = arch.dec_channels[0]
    dec = [("dense", "relu", (d0 * p * p, L), (d0 * p * p,))]
    cin = d0
    for c in arch.dec_channels[1:]:
        dec.append(("conv3x3", "relu", (c, cin, 3, 3), (c,)))
        cin = c
    dec.append(("conv3x3", "none", (2, cin, 3, 3), (2,)))
    return enc, dec


def init_model(arch: VaeArch, rng: Rng, init_std: float = 0.05) -> VaeModel:
    """Truncated-normal weights (|w| <= 2*std), zero biases."""
    enc_shapes, dec_shapes = _layer_shapes(arch)

    def build(shapes):
        return [
            LayerParams(
                weights=truncated_normal(rng, wshape, std=init_std),
                bias=np.zeros(bshape),
                kind=kind,
                activation=act,
            )
            for kind, act, wshape, bshape in shapes
        ]

    return VaeModel(arch, build(enc_shapes), build(dec_shapes))


def _clamp_logvar(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    clamped = np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    mask = (raw > -LOGVAR_CLAMP) & (raw < LOGVAR_CLAMP)
    return clamped, mask


# ---------------------------------------------------------------------------
# batched network passes (B, p, p) <-> (B, L); caches feed the backward calls.
# Conv activations run channels-last, so the dense layers see p*p*C flats.
# ---------------------------------------------------------------------------

def encoder_forward(model: VaeModel, patches: np.ndarray):
    """patches (B, p, p) -> (mu_z (B, L), logvar_z (B, L), cache)."""
    b = patches.shape[0]
    h = patches[:, :, :, None]
    convs = []
    for lp in model.enc[:-1]:
        pre, cols = conv3x3_forward_cl(h, lp.weights, lp.bias, want_cache=True)
        convs.append((h, pre, cols))
        h = relu(pre)
    flat = h.reshape(b, -1)
    out = dense_forward(flat, model.enc[-1].weights, model.enc[-1].bias)
    L = model.arch.latent
    mu = out[:, :L]
    logvar, mask = _clamp_logvar(out[:, L:])
    return mu, logvar, (convs, flat, h.shape, mask)


def encoder_backward(model: VaeModel, cache, d_mu: np.ndarray, d_logvar: np.ndarray,
                     want_param_grads: bool = True):
    """Returns (d_patches (B, p, p), grads {name: array} or None)."""
    convs, flat, hshape, mask = cache
    d_out = np.concatenate([d_mu, d_logvar * mask], axis=1)
    dense = model.enc[-1]
    d_flat, dw, db = dense_backward(flat, dense.weights, d_out, want_param_grads)
    grads = {} if want_param_grads else None
    if want_param_grads:
        grads[f"enc.{len(model.enc) - 1}.weights"] = dw
        grads[f"enc.{len(model.enc) - 1}.bias"] = db
    d_h = d_flat.reshape(hshape)
    for i in range(len(model.enc) - 2, -1, -1):
        x_in, pre, cols = convs[i]
        d_pre = relu_backward(pre, d_h)
        d_h, dw, db = conv3x3_backward_cl(
            x_in, model.enc[i].weights, d_pre, want_param_grads, cols=cols
        )
        if want_param_grads:
            grads[f"enc.{i}.weights"] = dw
            grads[f"enc.{i}.bias"] = db
    return d_h[:, :, :, 0], grads


def decoder_forward(model: VaeModel, z: np.ndarray):
    """z (B, L) -> (mu_x (B, p, p), logvar_x (B, p, p), cache)."""
    b = z.shape[0]
    p = model.arch.patch
    d0 = model.arch.dec_channels[0]
    dense = model.dec[0]
    pre_d = dense_forward(z, dense.weights, dense.bias)
    h = relu(pre_d).reshape(b, p, p, d0)
    convs = []
    for lp in model.dec[1:-1]:
        pre, cols = conv3x3_forward_cl(h, lp.weights, lp.bias, want_cache=True)
        convs.append((h, pre, cols))
        h = relu(pre)
    last = model.dec[-1]
    out, last_cols = conv3x3_forward_cl(h, last.weights, last.bias, want_cache=True)
    mu = out[:, :, :, 0]
    logvar, mask = _clamp_logvar(out[:, :, :, 1])
    return mu, logvar, (z, pre_d, convs, h, last_cols, mask)


def decoder_backward(model: VaeModel, cache, d_mu: np.ndarray, d_logvar: np.ndarray,
                     want_param_grads: bool = True):
    """Returns (d_z (B, L), grads {name: array} or None)."""
    z, pre_d, convs, h_last, last_cols, mask = cache
    d_out = np.stack([d_mu, d_logvar * mask], axis=3)
    last = model.dec[-1]
    d_h, dw, db = conv3x3_backward_cl(h_last, last.weights, d_out, want_param_grads, cols=last_cols)
    grads = {} if want_param_grads else None
    if want_param_grads:
        grads[f"dec.{len(model.dec) - 1}.weights"] = dw
        grads[f"dec.{len(model.dec) - 1}.bias"] = db
    for i in range(len(model.dec) - 2, 0, -1):
        x_in, pre, cols = convs[i - 1]
        d_pre = relu_backward(pre, d_h)
        d_h, dw, db = conv3x3_backward_cl(
            x_in, model.dec[i].weights, d_pre, want_param_grads, cols=cols
        )
        if want_param_grads:
            grads[f"dec.{i}.weights"] = dw
            grads[f"dec.{i}.bias"] = db
    d_pre_d = relu_backward(pre_d, d_h.reshape(z.shape[0], -1))
    dense = model.dec[0]
    d_z, dw, db = dense_backward(z, dense.weights, d_pre_d, want_param_grads)
    if want_param_grads:
        grads["dec.0.weights"] = dw
        grads["dec.0.bias"] = db
    return d_z, grads


# ---------------------------------------------------------------------------
# public single-patch operations
# ---------------------------------------------------------------------------

def _check_patch(model: VaeModel, patch: np.ndarray) -> np.ndarray:
    patch = np.asarray(patch)
    if np.iscomplexobj(patch):
        raise ValueError("the prior is over magnitudes; patch must be real")
    p = model.arch.patch
    if patch.shape != (p, p):
        raise ValueError(f"patch shape {patch.shape} != ({p}, {p})")
    if np.any(patch < 0):
        raise ValueError("the prior is over magnitudes; patch must be nonnegative")
    return patch.astype(np.float64, copy=False)


def encode(model: VaeModel, patch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    patch = _check_patch(model, patch)
    mu, logvar, _ = encoder_forward(model, patch[None])
    return mu[0], logvar[0]


def decode(model: VaeModel, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.arch.latent,):
        raise ValueError(f"latent vector shape {z.shape} != ({model.arch.latent},)")
    mu, logvar, _ = decoder_forward(model, z[None])
    return mu[0], logvar[0]


def elbo_mc_samples(model: VaeModel, patch: np.ndarray, J: int, rng: Rng) -> np.ndarray:
    """The J Monte Carlo terms of the per-patch ELBO, z^j ~ q(z | patch)."""
    if J < 1:
        raise ValueError("need at least one Monte Carlo sample")
    patch = _check_patch(model, patch)
    mu_z, lv_z, _ = encoder_forward(model, patch[None])
    mu_z, lv_z = mu_z[0], lv_z[0]
    eps = rng.normal((J, model.arch.latent))
    z = mu_z + np.exp(0.5 * lv_z) * eps
    mu_x, lv_x, _ = decoder_forward(model, z)
    zeros = np.zeros_like(mu_z)
    out = np.empty(J)
    for j in range(J):
        recon = gaussian_logpdf_diag(patch, mu_x[j], lv_x[j])
        log_p = gaussian_logpdf_diag(z[j], zeros, zeros)
        log_q = gaussian_logpdf_diag(z[j], mu_z, lv_z)
        out[j] = recon + log_p - log_q
    return out


def elbo_mc(model: VaeModel, patch: np.ndarray, J: int, rng: Rng) -> float:
    """Monte Carlo ELBO estimate, deterministic for a given rng seed."""
    return float(np.mean(elbo_mc_samples(model, patch, J, rng)))


def sample_prior(model: VaeModel, n: int, rng: Rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """Decode n latent draws from N(0, I); returns (mean, logvar) pairs."""
    out = []
    for _ in range(n):
        z = rng.normal((model.arch.latent,))
        out.append(decode(model, z))
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train_step(
    model: VaeModel,
    batch: np.ndarray,
    state: AdamState,
    rng: Rng,
    lr: float = 5e-4,
) -> float:
    """One negative-ELBO descent step over a (B, p, p) magnitude batch.

    Loss is the batch mean of [closed-form KL - reparameterized
    reconstruction log-likelihood]; returns the loss before the update.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[1:] != (model.arch.patch,) * 2:
        raise ValueError(f"batch shape {batch.shape} incompatible with patch {model.arch.patch}")
    if np.any(batch < 0):
        raise ValueError("training patches must be nonnegative magnitudes")
    b = batch.shape[0]

    mu_z, lv_z, enc_cache = encoder_forward(model, batch)
    sig = np.exp(0.5 * lv_z)
    eps = rng.normal(mu_z.shape)
    z = mu_z + sig * eps
    mu_x, lv_x, dec_cache = decoder_forward(model, z)

    diff = batch - mu_x
    e_neg = np.exp(-lv_x)
    recon = np.sum(-0.5 * LOG_2PI - 0.5 * lv_x - 0.5 * diff**2 * e_neg, axis=(1, 2))
    kl = 0.5 * np.sum(mu_z**2 + np.exp(lv_z) - lv_z - 1.0, axis=1)
    loss = float(np.mean(kl - recon))
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss (kl mean {np.mean(kl):.3g}, recon mean {np.mean(recon):.3g})"
        )

    inv_b = 1.0 / b
    d_mu_x = -inv_b * diff * e_neg
    d_lv_x = -inv_b * (-0.5 + 0.5 * diff**2 * e_neg)
    d_z, dec_grads = decoder_backward(model, dec_cache, d_mu_x, d_lv_x)
    d_mu_z = inv_b * mu_z + d_z
    d_lv_z = inv_b * 0.5 * (np.exp(lv_z) - 1.0) + d_z * (0.5 * sig * eps)
    _, enc_grads = encoder_backward(model, enc_cache, d_mu_z, d_lv_z)

    grads = {**enc_grads, **dec_grads}
    adam_step(state, model.named_params(), grads, lr=lr)
    return loss


def train_prior(
    patches: np.ndarray,
    arch: VaeArch,
    cfg: TrainConfig,
    on_step=None,
) -> tuple[VaeModel, list[float]]:
    """Train a fresh model on a (N, p, p) patch set; returns (model, losses).

    On divergence the partially trained model from the last finite step is
    attached to the raised error as `last_good`.
    """
    patches = np.asarray(patches, dtype=np.float64)
    rng = Rng(cfg.seed)
    model = init_model(arch, rng.child(0), init_std=cfg.init_std)
    state = AdamState(model.named_params())
    losses: list[float] = []
    last_good = model.copy()
    for it in range(cfg.iterations):
        step_rng = rng.child(1, it)
        idx = step_rng.integers(0, patches.shape[0], (cfg.batch,))
        try:
            loss = train_step(model, patches[idx], state, step_rng.child(1), lr=cfg.lr)
        except TrainingDivergedError as err:
            err.last_good = last_good  # type: ignore[attr-defined]
            err.losses = losses  # type: ignore[attr-defined]
            raise
        losses.append(loss)
        last_good = model.copy()
        if on_step is not None:
            on_step(it, loss)
    return model, losses


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_save(model: VaeModel, path) -> None:
    meta = {
        "kind": "vae_checkpoint",
        "arch": {
            "patch": model.arch.patch,
            "latent": model.arch.latent,
            "enc_channels": list(model.arch.enc_channels),
            "dec_channels": list(model.arch.dec_channels),
        },
    }
    write_tensors(path, model.named_params(), meta=meta)


def checkpoint_load(path) -> VaeModel:
    try:
        tensors, meta = read_tensors(path)
    except ContainerError as e:
        raise CheckpointError(str(e)) from e
    if meta.get("kind") != "vae_checkpoint" or "arch" not in meta:
        raise CheckpointError(f"{path}: not a model checkpoint")
    a = meta["arch"]
    try:
        arch = VaeArch(
            patch=int(a["patch"]),
            latent=int(a["latent"]),
            enc_channels=tuple(int(c) for c in a["enc_channels"]),
            dec_channels=tuple(int(c) for c in a["dec_channels"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: bad arch header: {e}") from e
    enc_shapes, dec_shapes = _layer_shapes(arch)

    def build(side, shapes):
        layers = []
        for i, (kind, act, wshape, bshape) in enumerate(shapes):
            wkey, bkey = f"{side}.{i}.weights", f"{side}.{i}.bias"
            if wkey not in tensors or bkey not in tensors:
                raise CheckpointError(f"{path}: missing tensor {wkey}")
            w, b = tensors[wkey], tensors[bkey]
            if w.shape != wshape or b.shape != bshape:
                raise ArchMismatchError(
                    f"{path}: {wkey} has shape {w.shape}, header arch implies {wshape}"
                )
            layers.append(LayerParams(weights=w, bias=b, kind=kind, activation=act))
        return layers

    return VaeModel(arch, build("enc", enc_shapes), build("dec", dec_shapes))
