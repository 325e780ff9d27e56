"""Convolutional masked autoencoder in numpy with hand-written backprop.

Encoder: conv 1->8 (3x3, s1) -> ReLU -> conv 8->16 (3x3, s2) -> ReLU -> dense -> latent.
Decoder: dense -> ReLU -> transposed conv 16->8 (3x3, s2, output pad 1) -> ReLU
-> conv 8->1 (3x3, s1). All convolutions pad by 1. The latent layer and the
output layer are linear.

Arrays are NCHW float64. Images enter the network scaled to [0, 1].
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, NumericalError
from .serialize import FORMAT_VERSION, check_version, decode_array, dump_json, encode_array, load_json

logger = logging.getLogger(__name__)

KERNEL = 3
C1, C2 = 8, 16
PARAM_NAMES = (
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "enc_w", "enc_b",
    "dec_w", "dec_b", "tconv_w", "tconv_b", "out_w", "out_b",
)


@dataclass(frozen=True)
class MaeConfig:
    grid_size: int = 8
    latent_dim: int = 16
    mask_ratio: float = 0.75
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    # "all": mask over every cell; "occupied": only cells holding a feature
    mask_scope: str = "all"

    def __post_init__(self) -> None:
        if self.grid_size < 2 or self.grid_size % 2:
            raise ConfigError(f"grid_size must be even and >= 2, got {self.grid_size}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.latent_dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("latent_dim, epochs and batch_size must be >= 1")
        if self.mask_scope not in ("all", "occupied"):
            raise ConfigError(f"mask_scope must be 'all' or 'occupied', got {self.mask_scope!r}")

    @property
    def bottleneck_side(self) -> int:
        return self.grid_size // 2

    @property
    def flat_dim(self) -> int:
        return C2 * self.bottleneck_side**2


# --------------------------------------------------------------------------
# layer primitives


def _im2col(xp: np.ndarray, stride: int, ho: int, wo: int) -> np.ndarray:
    """Rows of flattened (C, k, k) patches, ordered (n, ho, wo)."""
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))[:, :, : stride * ho : stride, : stride * wo : stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(xp.shape[0] * ho * wo, -1)


def _col2im(dcols: np.ndarray, n: int, c: int, hp: int, wp: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`; returns the padded NCHW gradient."""
    d6 = dcols.reshape(n, ho, wo, c, KERNEL, KERNEL)
    out = np.zeros((n, hp, wp, c))
    for i in range(KERNEL):
        for j in range(KERNEL):
            out[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += d6[:, :, :, :, i, j]
    return out.transpose(0, 3, 1, 2)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """3x3 convolution with padding 1. Returns (output, cached columns)."""
    n, c, h, wd = x.shape
    ho = (h + 2 - KERNEL) // stride + 1
    wo = (wd + 2 - KERNEL) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(xp, stride, ho, wo)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2), cols


def conv2d_backward(
    dout: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape: tuple, stride: int, need_dx: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    n, c, h, wd = x_shape
    o, ho, wo = dout.shape[1:]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dxp = _col2im(d2 @ w.reshape(o, -1), n, c, h + 2, wd + 2, stride, ho, wo)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def conv_transpose2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-2 transposed convolution, padding 1, output padding 1 (doubles H, W).

    ``w`` has shape (C_in, C_out, 3, 3). This is the input-gradient of a
    stride-2 convolution, so it reuses :func:`_col2im`.
    """
    n, cin, h, wd = x.shape
    cout = w.shape[1]
    contrib = x.transpose(0, 2, 3, 1).reshape(-1, cin) @ w.reshape(cin, -1)
    full = _col2im(contrib, n, cout, 2 * h + 2, 2 * wd + 2, 2, h, wd)
    return full[:, :, 1 : 1 + 2 * h, 1 : 1 + 2 * wd] + b[None, :, None, None]


def conv_transpose2d_backward(
    dout: np.ndarray, x: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, cin, h, wd = x.shape
    cout = w.shape[1]
    dfull = np.zeros((n, cout, 2 * h + 2, 2 * wd + 2))
    dfull[:, :, 1 : 1 + 2 * h, 1 : 1 + 2 * wd] = dout
    dcols = _im2col(dfull, 2, h, wd)
    x2 = x.transpose(0, 2, 3, 1).reshape(-1, cin)
    dx = (dcols @ w.reshape(cin, -1).T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2)
    dw = (x2.T @ dcols).reshape(w.shape)
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw, db


# --------------------------------------------------------------------------
# model


@dataclass
class MaeModel:
    config: MaeConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self) -> None:
        if not self.adam_m:
            self.adam_m = {k: np.zeros_like(v) for k, v in self.params.items()}
        if not self.adam_v:
            self.adam_v = {k: np.zeros_like(v) for k, v in self.params.items()}

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "kind": "mae",
            "version": FORMAT_VERSION,
            "config": asdict(self.config),
            "step": self.step,
            "params": {k: encode_array(self.params[k]) for k in PARAM_NAMES},
            "adam_m": {k: encode_array(self.adam_m[k]) for k in PARAM_NAMES},
            "adam_v": {k: encode_array(self.adam_v[k]) for k in PARAM_NAMES},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MaeModel":
        check_version(obj, "mae")
        return cls(
            MaeConfig(**obj["config"]),
            {k: decode_array(obj["params"][k]) for k in PARAM_NAMES},
            {k: decode_array(obj["adam_m"][k]) for k in PARAM_NAMES},
            {k: decode_array(obj["adam_v"][k]) for k in PARAM_NAMES},
            int(obj["step"]),
        )

    def save(self, path: str | Path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path: str | Path) -> "MaeModel":
        return cls.from_dict(load_json(path))


def _param_shapes(cfg: MaeConfig) -> dict[str, tuple[int, ...]]:
    f = cfg.flat_dim
    return {
        "conv1_w": (C1, 1, KERNEL, KERNEL), "conv1_b": (C1,),
        "conv2_w": (C2, C1, KERNEL, KERNEL), "conv2_b": (C2,),
        "enc_w": (cfg.latent_dim, f), "enc_b": (cfg.latent_dim,),
        "dec_w": (f, cfg.latent_dim), "dec_b": (f,),
        "tconv_w": (C2, C1, KERNEL, KERNEL), "tconv_b": (C1,),
        "out_w": (1, C1, KERNEL, KERNEL), "out_b": (1,),
    }


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 2:  # dense (out, in)
        return shape[1], shape[0]
    rf = shape[2] * shape[3]
    if name == "tconv_w":  # (in, out, k, k)
        return shape[0] * rf, shape[1] * rf
    return shape[1] * rf, shape[0] * rf


def init_mae(cfg: MaeConfig) -> MaeModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[0])
    params = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in, fan_out = _fans(name, shape)
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return MaeModel(cfg, params)


def _as_batch(images: np.ndarray, grid_size: int) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (grid_size, grid_size):
        raise DataError(f"expected images of shape (n, {grid_size}, {grid_size}), got {np.shape(images)}")
    return x


def _forward(params: dict, x: np.ndarray, cfg: MaeConfig):
    n = x.shape[0]
    x4 = x[:, None]
    z1, cols1 = conv2d(x4, params["conv1_w"], params["conv1_b"], 1)
    a1 = np.maximum(z1, 0.0)
    z2, cols2 = conv2d(a1, params["conv2_w"], params["conv2_b"], 2)
    a2 = np.maximum(z2, 0.0)
    flat = a2.reshape(n, -1)
    latent = flat @ params["enc_w"].T + params["enc_b"]
    z3 = latent @ params["dec_w"].T + params["dec_b"]
    a3 = np.maximum(z3, 0.0)
    s = cfg.bottleneck_side
    a3_img = a3.reshape(n, C2, s, s)
    z4 = conv_transpose2d(a3_img, params["tconv_w"], params["tconv_b"])
    a4 = np.maximum(z4, 0.0)
    recon, cols5 = conv2d(a4, params["out_w"], params["out_b"], 1)
    cache = dict(x4=x4, z1=z1, cols1=cols1, a1=a1, z2=z2, cols2=cols2, flat=flat,
                 latent=latent, z3=z3, a3_img=a3_img, z4=z4, a4=a4, cols5=cols5)
    return recon[:, 0], latent, cache


def forward(model: MaeModel, masked_input: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction (n, d', d') and latent (n, d'') for inputs in [0, 1]."""
    x = _as_batch(masked_input, model.config.grid_size)
    recon, latent, _ = _forward(model.params, x, model.config)
    return recon, latent


def encode(model: MaeModel, images: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Latent vectors of unmasked images already scaled to [0, 1]."""
    x = _as_batch(images, model.config.grid_size)
    parts = [_forward(model.params, x[i : i + batch_size], model.config)[1] for i in range(0, len(x), batch_size)]
    return np.concatenate(parts) if parts else np.zeros((0, model.config.latent_dim))


def _backward(params: dict, cache: dict, drecon: np.ndarray, cfg: MaeConfig) -> dict[str, np.ndarray]:
    g: dict[str, np.ndarray] = {}
    n = drecon.shape[0]
    da4, g["out_w"], g["out_b"] = conv2d_backward(drecon[:, None], cache["cols5"], params["out_w"], cache["a4"].shape, 1)
    dz4 = da4 * (cache["z4"] > 0)
    da3_img, g["tconv_w"], g["tconv_b"] = conv_transpose2d_backward(dz4, cache["a3_img"], params["tconv_w"])
    dz3 = da3_img.reshape(n, -1) * (cache["z3"] > 0)
    g["dec_w"] = dz3.T @ cache["latent"]
    g["dec_b"] = dz3.sum(axis=0)
    dlatent = dz3 @ params["dec_w"]
    g["enc_w"] = dlatent.T @ cache["flat"]
    g["enc_b"] = dlatent.sum(axis=0)
    dflat = dlatent @ params["enc_w"]
    dz2 = dflat.reshape(cache["z2"].shape) * (cache["z2"] > 0)
    da1, g["conv2_w"], g["conv2_b"] = conv2d_backward(dz2, cache["cols2"], params["conv2_w"], cache["a1"].shape, 2)
    dz1 = da1 * (cache["z1"] > 0)
    _, g["conv1_w"], g["conv1_b"] = conv2d_backward(dz1, cache["cols1"], params["conv1_w"], cache["x4"].shape, 1, need_dx=False)
    return g


# --------------------------------------------------------------------------
# masking and loss


@dataclass(frozen=True)
class MaskedBatch:
    originals: np.ndarray
    masked_inputs: np.ndarray
    masks: np.ndarray


def mask_count(n_cells: int, ratio: float) -> int:
    # guard against float products like 0.75 * 64 landing a hair above 48
    return int(math.ceil(round(ratio * n_cells, 9)))


def make_masks(
    n: int, grid_size: int, mask_ratio: float, rng: np.random.Generator, candidates: np.ndarray | None = None
) -> np.ndarray:
    """``n`` binary masks (1 = masked), each with exactly ``ceil(ratio * cells)``
    ones drawn uniformly without replacement from ``candidates`` (flat cell
    indices; every cell when None)."""
    if not 0.0 < mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    cells = grid_size * grid_size
    pool = np.arange(cells) if candidates is None else np.asarray(candidates, dtype=np.int64)
    m = mask_count(len(pool), mask_ratio)
    keys = rng.random((n, len(pool)))
    chosen = pool[np.argpartition(keys, m - 1, axis=1)[:, :m]] if m < len(pool) else np.tile(pool, (n, 1))
    masks = np.zeros((n, cells), dtype=np.uint8)
    np.put_along_axis(masks, chosen, 1, axis=1)
    return masks.reshape(n, grid_size, grid_size)


def make_mask(grid_size: int, mask_ratio: float, rng: np.random.Generator) -> np.ndarray:
    return make_masks(1, grid_size, mask_ratio, rng)[0]


def apply_masks(originals: np.ndarray, masks: np.ndarray) -> MaskedBatch:
    originals = np.asarray(originals, dtype=np.float64)
    return MaskedBatch(originals, originals * (1 - masks), masks)


def masked_mse(recon: np.ndarray, original: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared error over masked cells only."""
    recon, original, mask = np.asarray(recon), np.asarray(original), np.asarray(mask)
    if recon.shape != original.shape or recon.shape != mask.shape:
        raise ValueError("recon, original and mask must share a shape")
    total = mask.sum()
    if total == 0:
        raise ValueError("mask selects no cells")
    sel = mask.astype(bool)
    diff = recon[sel] - original[sel]
    return float(np.dot(diff, diff) / total)


def loss_and_gradients(model: MaeModel, batch: MaskedBatch) -> tuple[float, dict[str, np.ndarray]]:
    recon, _, cache = _forward(model.params, batch.masked_inputs, model.config)
    total = batch.masks.sum()
    if total == 0:
        raise ValueError("mask selects no cells")
    diff = (recon - batch.originals) * batch.masks
    loss = float(np.sum(diff * diff) / total)
    drecon = 2.0 * diff / total
    return loss, _backward(model.params, cache, drecon, model.config)


def adam_step(model: MaeModel, grads: dict[str, np.ndarray]) -> None:
    cfg = model.config
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            bad = int(np.sum(~np.isfinite(grad)))
            raise NumericalError(f"non-finite gradient in {name} ({bad} entries) at step {model.step + 1}", stage="mae")
    model.step += 1
    t = model.step
    b1, b2, lr, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate, cfg.adam_epsilon
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, grad in grads.items():
        m = model.adam_m[name]
        v = model.adam_v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        model.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def backward_and_step(model: MaeModel, batch: MaskedBatch) -> float:
    """One Adam update on ``batch``; returns the loss before the update."""
    loss, grads = loss_and_gradients(model, batch)
    adam_step(model, grads)
    return loss


def train(
    model: MaeModel, images: np.ndarray, occupied: np.ndarray | None = None, labels: np.ndarray | None = None
) -> tuple[MaeModel, list[float]]:
    """Train in place on uint8 (0-255) normal-traffic images.

    Every epoch draws a fresh mask per sample and a fresh batch order, both
    from streams derived from ``config.seed``.

    Args:
        model: Initialized model; updated in place and returned.
        images: (n, d', d') array of 0-255 intensities.
        occupied: Optional (d', d') boolean map of cells holding a feature,
            required when ``config.mask_scope == "occupied"``.
        labels: Optional labels; any non-zero label is rejected.

    Returns:
        The model and the mean masked loss of every epoch.
    """
    cfg = model.config
    if labels is not None and np.any(np.asarray(labels) != 0):
        raise DataError("MAE training accepts normal (label 0) images only", stage="mae")
    x = _as_batch(images, cfg.grid_size) / 255.0
    n = len(x)
    if n == 0:
        raise DataError("no training images", stage="mae")
    candidates = None
    if cfg.mask_scope == "occupied":
        if occupied is None:
            raise ConfigError("mask_scope='occupied' needs the occupied-cell map")
        candidates = np.flatnonzero(np.asarray(occupied).ravel())
    _, shuffle_ss, mask_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    mask_rng = np.random.default_rng(mask_ss)
    history = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            masks = make_masks(len(idx), cfg.grid_size, cfg.mask_ratio, mask_rng, candidates)
            total += backward_and_step(model, apply_masks(x[idx], masks)) * len(idx)
        history.append(total / n)
        logger.info("epoch %d/%d masked mse %.6f", epoch + 1, cfg.epochs, history[-1])
    return model, history
