"""Per-pixel neighborhood MLP for RGB -> spectrum reconstruction, with exact gradients.

Every pixel is mapped independently from its (2p+1)^2 RGB neighborhood
(edge-replicated at the borders) through two tanh hidden layers and a
logistic output, so predictions lie in (0, 1).

Parameters live in one flat float64 vector; the layer matrices are views into
it. Layout, which the SPAD checkpoint format also uses::

    W1 (n_in x h1, row-major), b1 (h1), W2 (h1 x h2), b2 (h2), W3 (h2 x C), b3 (C)

with ``n_in = 3 * (2p+1)^2`` and input features ordered channel-major, then
row offset, then column offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import RgbImage, SpectralCube
from .errors import CacheMismatch, ImageTooSmall, ShapeMismatch
from .metrics import _ssim_constants


@dataclass(frozen=True)
class Architecture:
    patch_radius: int = 1
    hidden: tuple[int, ...] = (64, 64)
    bands: int = 31

    @property
    def n_inputs(self) -> int:
        return 3 * (2 * self.patch_radius + 1) ** 2

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.n_inputs, *self.hidden, self.bands]
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)


@dataclass
class ModelParams:
    arch: Architecture
    vector: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (self.arch.n_params,):
            raise ShapeMismatch(
                f"parameter vector has shape {self.vector.shape}, "
                f"architecture needs ({self.arch.n_params},)"
            )

    @classmethod
    def zeros(cls, arch: Architecture) -> "ModelParams":
        return cls(arch, np.zeros(arch.n_params))

    @classmethod
    def init(cls, arch: Architecture, seed=0) -> "ModelParams":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        parts = []
        for fan_in, fan_out in arch.layer_shapes:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            parts.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
            parts.append(np.zeros(fan_out))
        return cls(arch, np.concatenate(parts))

    def layers(self, dtype=np.float64) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self.vector if dtype == np.float64 else self.vector.astype(dtype)
        out, pos = [], 0
        for fan_in, fan_out in self.arch.layer_shapes:
            w = v[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = v[pos : pos + fan_out]
            pos += fan_out
            out.append((w, b))
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.vector.copy())

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.vector)))


Gradients = ModelParams


@dataclass
class ForwardCache:
    arch: Architecture
    layers: list[tuple[np.ndarray, np.ndarray]]
    out_shape: tuple[int, ...]
    inputs: np.ndarray
    activations: list[np.ndarray]


def _as_batch(img) -> np.ndarray:
    if isinstance(img, RgbImage):
        return img.data[None]
    a = np.asarray(img)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[1] != 3:
        raise ShapeMismatch(f"expected RGB input of shape (B, 3, H, W), got {a.shape}")
    return a


def pad_edges(batch: np.ndarray, p: int) -> np.ndarray:
    return np.pad(batch, ((0, 0), (0, 0), (p, p), (p, p)), mode="edge")


def _patches(padded: np.ndarray, p: int, h: int, w: int) -> np.ndarray:
    k = 2 * p + 1
    shifts = [padded[:, :, dy : dy + h, dx : dx + w] for dy in range(k) for dx in range(k)]
    x = np.stack(shifts, axis=2)  # B, 3, k*k, H, W
    b = x.shape[0]
    return x.transpose(0, 3, 4, 1, 2).reshape(b * h * w, 3 * k * k)


def forward_padded(params: ModelParams, padded, dtype=np.float64):
    """Forward pass on input already padded by ``patch_radius`` on each side."""
    p = params.arch.patch_radius
    padded = np.asarray(padded, dtype=dtype)
    b, _, hp, wp = padded.shape
    h, w = hp - 2 * p, wp - 2 * p
    if h < 1 or w < 1:
        raise ImageTooSmall(f"padded input {hp}x{wp} too small for patch radius {p}")
    x = _patches(padded, p, h, w)
    acts = [x]
    layers = params.layers(dtype)
    a = x
    for i, (wt, bias) in enumerate(layers):
        z = a @ wt
        z += bias
        if i < len(layers) - 1:
            a = np.tanh(z)
        else:
            a = 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic without overflow
        acts.append(a)
    c = params.arch.bands
    out = a.reshape(b, h, w, c).transpose(0, 3, 1, 2)
    cache = ForwardCache(params.arch, layers, out.shape, x, acts[1:])
    return np.ascontiguousarray(out), cache


def forward(params: ModelParams, img, dtype=np.float64):
    """Predict spectra for an RGB image or a (B, 3, H, W) batch.

    Returns the prediction (B, C, H, W) and a cache for :func:`backward`.
    """
    batch = _as_batch(img)
    p = params.arch.patch_radius
    k = 2 * p + 1
    if batch.shape[2] * batch.shape[3] < k * k:
        raise ImageTooSmall(
            f"{batch.shape[2]}x{batch.shape[3]} image has fewer than {k * k} pixels"
        )
    return forward_padded(params, pad_edges(batch, p), dtype)


def predict_cube(params: ModelParams, img: RgbImage, wavelengths=None) -> SpectralCube:
    out, _ = forward(params, img)
    return SpectralCube.ingest(out[0], wavelengths)


def backward(cache: ForwardCache, output_grad) -> Gradients:
    """Reverse-mode gradient of the scalar loss whose output gradient is ``output_grad``."""
    g = np.asarray(output_grad)
    if g.ndim == 3:
        g = g[None]
    if g.shape != cache.out_shape:
        raise CacheMismatch(f"output gradient {g.shape} does not match forward output {cache.out_shape}")
    dtype = cache.inputs.dtype
    b, c, h, w = g.shape
    delta = g.transpose(0, 2, 3, 1).reshape(b * h * w, c).astype(dtype, copy=False)
    layers = cache.layers
    acts = [cache.inputs, *cache.activations]
    out = acts[-1]
    delta = delta * out * (1.0 - out)
    grads: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        wt, _ = layers[i]
        a_in = acts[i]
        grads.append(delta.sum(axis=0))
        grads.append((a_in.T @ delta).ravel())
        if i > 0:
            delta = delta @ wt.T
            delta *= 1.0 - a_in * a_in
    vec = np.concatenate([np.asarray(x, dtype=np.float64) for x in reversed(grads)])
    return Gradients(cache.arch, vec)


# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class LossWeights:
    lambda_sup: float = 0.4
    lambda_un: float = 0.3

    def __post_init__(self):
        for name in ("lambda_sup", "lambda_un"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = pred.data if isinstance(pred, SpectralCube) else np.asarray(pred)
    gt = gt.data if isinstance(gt, SpectralCube) else np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {gt.shape}")
    return pred.astype(np.float64), gt.astype(np.float64)


def l1_with_grad(pred, target) -> tuple[float, np.ndarray]:
    """Mean |pred - target| and its gradient w.r.t. ``pred`` (subgradient 0 at ties)."""
    pred, target = _pair(pred, target)
    d = pred - target
    return float(np.mean(np.abs(d))), np.sign(d) / d.size


def ssim_with_grad(pred, gt, dynamic_range: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean global SSIM over all planes (last two axes) and its gradient w.r.t. ``pred``."""
    x, y = _pair(pred, gt)
    c1, c2 = _ssim_constants(dynamic_range)
    n = x.shape[-1] * x.shape[-2]
    mx = x.mean(axis=(-2, -1), keepdims=True)
    my = y.mean(axis=(-2, -1), keepdims=True)
    dx, dy = x - mx, y - my
    vx = (dx * dx).mean(axis=(-2, -1), keepdims=True)
    vy = (dy * dy).mean(axis=(-2, -1), keepdims=True)
    cov = (dx * dy).mean(axis=(-2, -1), keepdims=True)
    a = 2 * mx * my + c1
    bb = 2 * cov + c2
    cc = mx * mx + my * my + c1
    dd = vx + vy + c2
    s = a * bb / (cc * dd)
    # d s / d x_i with d mu = 1/n, d var = 2 dx_i / n, d cov = dy_i / n
    grad = (
        (2 * my * bb + 2 * a * dy) / (cc * dd)
        - s * (2 * mx / cc + 2 * dx / dd)
    ) / n
    planes = s.size
    return float(s.mean()), grad / planes


def sup_loss(pred, gt, w: LossWeights = LossWeights()) -> tuple[float, np.ndarray]:
    """lambda * L1 + (1 - lambda) * (1 - SSIM), with gradient w.r.t. ``pred``."""
    l1v, gl1 = l1_with_grad(pred, gt)
    if w.lambda_sup == 1.0:
        return l1v, gl1
    ssim, gssim = ssim_with_grad(pred, gt)
    loss = w.lambda_sup * l1v + (1.0 - w.lambda_sup) * (1.0 - ssim)
    return loss, w.lambda_sup * gl1 - (1.0 - w.lambda_sup) * gssim


def con_loss(student_pred, teacher_pred) -> tuple[float, np.ndarray]:
    """L1 consistency; the teacher is a constant, so only the student gets a gradient."""
    return l1_with_grad(student_pred, teacher_pred)


def total_loss(parts: dict[str, float], w: LossWeights = LossWeights()) -> float:
    sup = parts["sup_src"] + parts["sup_tgt"]
    un = w.lambda_un * parts["con"] + (1.0 - w.lambda_un) * parts["sera"]
    return float(sup + un)
