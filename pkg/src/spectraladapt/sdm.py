"""Spectral density masking.

Each visible region (blue, green, red) is scored by how far the spectra move,
in spectral angle, when that region's bands are flattened to their spatial
mean. Scores are min-max mapped to per-channel masking ratios, and the RGB
student input is masked with square blocks at those ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BandPartition, RgbImage, SpectralCube, cube_to_matrix, partition_from_wavelengths
from .errors import IndexOutOfRange, InvalidBlockSize, InvalidRange, ShapeMismatch
from .metrics import SAM_EPS, sam

CHANNELS = ("red", "green", "blue")  # RGB plane order


@dataclass(frozen=True)
class SpectralDensity:
    d_blue: float
    d_green: float
    d_red: float

    def as_rgb(self) -> np.ndarray:
        return np.array([self.d_red, self.d_green, self.d_blue])

    @classmethod
    def mean(cls, densities: list["SpectralDensity"]) -> "SpectralDensity":
        stacked = np.array([d.as_rgb() for d in densities]).mean(axis=0)
        return cls(d_blue=float(stacked[2]), d_green=float(stacked[1]), d_red=float(stacked[0]))


@dataclass(frozen=True)
class MaskRatios:
    r_red: float
    r_green: float
    r_blue: float

    def as_rgb(self) -> np.ndarray:
        return np.array([self.r_red, self.r_green, self.r_blue])

    @classmethod
    def uniform(cls, r: float) -> "MaskRatios":
        return cls(r, r, r)


@dataclass(frozen=True)
class MaskPlan:
    """Channel-wise block mask; 1 marks a masked entry."""

    block_size: int
    blocks: np.ndarray  # (3, ceil(H/s), ceil(W/s)) uint8
    mask: np.ndarray  # (3, H, W) uint8

    @property
    def masked_fraction(self) -> np.ndarray:
        return self.mask.reshape(3, -1).mean(axis=1)

    @property
    def masked_block_counts(self) -> np.ndarray:
        return self.blocks.reshape(3, -1).sum(axis=1)


def perturb_region(m, region) -> np.ndarray:
    """Replace the columns listed in ``region`` by their column means."""
    m = np.asarray(m)
    idx = np.asarray(list(region), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= m.shape[1]):
        raise IndexOutOfRange(f"region indices {idx.tolist()} outside 0..{m.shape[1] - 1}")
    out = m.copy()
    if idx.size:
        out[:, idx] = m[:, idx].mean(axis=0)
    return out


def spectral_density(
    cube: SpectralCube, part: BandPartition | None = None, eps: float = SAM_EPS
) -> SpectralDensity:
    if part is None:
        part = partition_from_wavelengths(cube.wavelengths)
    s = cube_to_matrix(cube).astype(np.float64)
    d = {name: sam(perturb_region(s, idx), s, eps) for name, idx in part.regions().items()}
    return SpectralDensity(d_blue=d["blue"], d_green=d["green"], d_red=d["red"])


def masking_ratios(d: SpectralDensity, r_min: float = 0.5, r_max: float = 0.9) -> MaskRatios:
    if not 0.0 <= r_min <= r_max <= 1.0:
        raise InvalidRange(f"need 0 <= r_min <= r_max <= 1, got r_min={r_min}, r_max={r_max}")
    dens = d.as_rgb()
    lo, hi = dens.min(), dens.max()
    if hi == lo:
        r = np.full(3, 0.5 * (r_min + r_max))
    else:
        r = r_min + (dens - lo) / (hi - lo) * (r_max - r_min)
        r = np.clip(r, r_min, r_max)
    return MaskRatios(r_red=float(r[0]), r_green=float(r[1]), r_blue=float(r[2]))


def block_count(ratio: float, n_blocks: int) -> int:
    """round(ratio * n_blocks) with halves rounded up."""
    return int(np.floor(ratio * n_blocks + 0.5))


def generate_mask(
    h: int, w: int, ratios: MaskRatios, block_size: int = 8, seed=0
) -> MaskPlan:
    if block_size < 1 or block_size > min(h, w):
        raise InvalidBlockSize(f"block size {block_size} invalid for a {h}x{w} image")
    rng = np.random.default_rng(seed)
    gh, gw = -(-h // block_size), -(-w // block_size)
    n = gh * gw
    blocks = np.zeros((3, n), dtype=np.uint8)
    for ch, r in enumerate(ratios.as_rgb()):
        k = block_count(r, n)
        blocks[ch, rng.permutation(n)[:k]] = 1
    blocks = blocks.reshape(3, gh, gw)
    full = np.repeat(np.repeat(blocks, block_size, axis=1), block_size, axis=2)[:, :h, :w]
    return MaskPlan(block_size=block_size, blocks=blocks, mask=np.ascontiguousarray(full))


def apply_mask_array(rgb: np.ndarray, plan: MaskPlan) -> np.ndarray:
    if rgb.shape != plan.mask.shape:
        raise ShapeMismatch(f"mask shape {plan.mask.shape} does not match image {rgb.shape}")
    return np.where(plan.mask.astype(bool), np.zeros((), dtype=rgb.dtype), rgb)


def apply_mask(img: RgbImage, plan: MaskPlan) -> RgbImage:
    return RgbImage(apply_mask_array(img.data, plan))


def centered_bounds(rate: float, d: SpectralDensity, width: float = 0.4) -> tuple[float, float]:
    """(r_min, r_max) whose min-max mapped ratios average to ``rate``.

    The window is ``width`` wide where possible and narrowed just enough to
    stay inside [0, 1]. Its position accounts for where the middle density
    falls between the extremes, so the realized mean mask rate is ``rate``
    rather than the window center.
    """
    if not 0.0 <= rate <= 1.0:
        raise InvalidRange(f"mask rate must lie in [0, 1], got {rate}")
    dens = np.sort(d.as_rgb())
    span = dens[2] - dens[0]
    t_mid = 0.5 if span == 0 else (dens[1] - dens[0]) / span
    f = 0.5 if span == 0 else (1.0 + t_mid) / 3.0  # mean position of the three ratios
    limits = [width]
    if f > 0:
        limits.append(rate / f)
    if f < 1:
        limits.append((1.0 - rate) / (1.0 - f))
    w = max(0.0, min(limits))
    r_min = float(np.clip(rate - w * f, 0.0, 1.0))
    return r_min, float(min(1.0, r_min + w))


def mean_mask_rate(ratios: MaskRatios, n_blocks: int) -> float:
    """Masked fraction averaged over channels after block-count rounding."""
    return float(np.mean([block_count(r, n_blocks) / n_blocks for r in ratios.as_rgb()]))
