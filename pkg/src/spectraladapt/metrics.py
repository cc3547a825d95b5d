"""Reconstruction-quality metrics: SAM, SSIM, PSNR, L1 and per-pixel error maps.

SSIM uses whole-plane moments (no sliding window) with population
variances, and a cube's SSIM is the mean over its bands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SpectralCube, cube_to_matrix
from .errors import ShapeMismatch

K1 = 0.01
K2 = 0.03
SAM_EPS = 1e-8


@dataclass(frozen=True)
class MetricReport:
    ssim: float
    sam: float  # radians
    psnr: float  # dB, math.inf when MSE == 0
    l1: float

    @property
    def sam_percent(self) -> float:
        """SAM on the ``100 * radians`` scale used in reports."""
        return 100.0 * self.sam


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, SpectralCube) else np.asarray(x)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} does not match {b.shape}")


def sam_per_row(a, b, eps: float = SAM_EPS) -> np.ndarray:
    """arccos(a.b / (|a||b| + eps)) per row, evaluated through the half-angle form.

    Writing 1 - cos as eps/(|a||b| + eps) + s|u - v|^2/2 with unit rows u, v and
    s = |a||b|/(|a||b| + eps) avoids the loss of precision of arccos near 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(na > 0, a / na, 0.0)
        v = np.where(nb > 0, b / nb, 0.0)
        prod = (na * nb)[..., 0]
        denom = prod + eps
        s = np.where(denom > 0, prod / denom, 0.0)
    half_chord = 0.5 * np.einsum("...c,...c->...", u - v, u - v)
    one_minus_cos = (1.0 - s) + s * half_chord
    return 2.0 * np.arcsin(np.sqrt(np.clip(0.5 * one_minus_cos, 0.0, 1.0)))


def sam(a, b, eps: float = SAM_EPS) -> float:
    """Mean spectral angle (radians) between corresponding rows of two N x C matrices."""
    return float(sam_per_row(a, b, eps).mean())


def sam_cube(x, y, eps: float = SAM_EPS) -> float:
    x, y = _data(x), _data(y)
    _same_shape(x, y)
    return sam(cube_to_matrix(x), cube_to_matrix(y), eps)


def _ssim_constants(dynamic_range: float) -> tuple[float, float]:
    return (K1 * dynamic_range) ** 2, (K2 * dynamic_range) ** 2


def ssim_planes(x, y, dynamic_range: float = 1.0) -> np.ndarray:
    """Global SSIM of every plane along the last two axes."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x, y)
    c1, c2 = _ssim_constants(dynamic_range)
    mx = x.mean(axis=(-2, -1), keepdims=True)
    my = y.mean(axis=(-2, -1), keepdims=True)
    dx, dy = x - mx, y - my
    vx = (dx * dx).mean(axis=(-2, -1))
    vy = (dy * dy).mean(axis=(-2, -1))
    cov = (dx * dy).mean(axis=(-2, -1))
    mx, my = mx[..., 0, 0], my[..., 0, 0]
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return num / den


def ssim_global(x, y, dynamic_range: float = 1.0) -> float:
    x, y = np.asarray(x), np.asarray(y)
    _same_shape(x, y)
    if x.ndim != 2:
        raise ShapeMismatch(f"ssim_global expects a 2-D plane, got {x.ndim}-D")
    if np.array_equal(x, y):
        return 1.0
    return float(ssim_planes(x, y, dynamic_range))


def ssim_cube(x, y, dynamic_range: float = 1.0) -> float:
    x, y = _data(x), _data(y)
    _same_shape(x, y)
    if np.array_equal(x, y):
        return 1.0
    return float(ssim_planes(x, y, dynamic_range).mean())


def mse(x, y) -> float:
    x, y = _data(x), _data(y)
    _same_shape(x, y)
    d = x.astype(np.float64) - y
    return float(np.mean(d * d))


def psnr(x, y, peak: float = 1.0) -> float:
    err = mse(x, y)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def l1(x, y) -> float:
    x, y = _data(x), _data(y)
    _same_shape(x, y)
    return float(np.mean(np.abs(x.astype(np.float64) - y)))


def error_map(pred, gt, kind: str = "l1") -> np.ndarray:
    """Per-pixel H x W error: spectral angle (``sam``) or band-mean |diff| (``l1``)."""
    pred, gt = _data(pred), _data(gt)
    _same_shape(pred, gt)
    if kind == "l1":
        return np.mean(np.abs(pred.astype(np.float64) - gt), axis=0)
    if kind == "sam":
        c, h, w = pred.shape
        return sam_per_row(cube_to_matrix(pred), cube_to_matrix(gt)).reshape(h, w)
    raise ValueError(f"unknown error map kind {kind!r}; expected 'sam' or 'l1'")


def report(pred, gt) -> MetricReport:
    return MetricReport(
        ssim=ssim_cube(pred, gt), sam=sam_cube(pred, gt), psnr=psnr(pred, gt), l1=l1(pred, gt)
    )
