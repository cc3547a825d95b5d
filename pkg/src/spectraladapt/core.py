"""Spectral data model: cubes, RGB images, band partitions and camera response.

Arrays are stored band-major, i.e. ``data[c, y, x]``. A flattened view of a
cube therefore has the band-0 plane first, each plane in row-major order,
which is also the on-disk layout of the HSC1 format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionMismatch, PartitionEmpty, ShapeMismatch

FloatArray = NDArray[np.floating]

DEFAULT_WAVELENGTHS = np.arange(400.0, 701.0, 10.0)

BLUE_UPPER_NM = 500.0
GREEN_UPPER_NM = 580.0

# Default RGB camera: Gaussian rows in R, G, B order.
DEFAULT_RESPONSE_CENTERS = (600.0, 550.0, 450.0)
DEFAULT_RESPONSE_SIGMA = 40.0


def check_wavelengths(values) -> FloatArray:
    w = np.asarray(values, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("wavelengths must be a nonempty 1-D sequence")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("wavelengths must be finite and positive")
    if np.any(np.diff(w) <= 0):
        raise ValueError("wavelengths must be strictly increasing")
    return w


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpectralCube:
    """H x W x C reflectance volume stored as ``data[c, y, x]``."""

    data: FloatArray
    wavelengths: FloatArray

    def __post_init__(self):
        data = np.array(self.data, copy=True)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if data.ndim != 3:
            raise ShapeMismatch(f"cube data must be 3-D (C, H, W), got shape {data.shape}")
        w = check_wavelengths(self.wavelengths)
        if w.size != data.shape[0]:
            raise DimensionMismatch(
                f"{w.size} wavelengths for a cube with {data.shape[0]} bands"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("cube data must be finite")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "wavelengths", _freeze(w))

    @classmethod
    def ingest(cls, data, wavelengths=None) -> "SpectralCube":
        """Build a cube from raw reflectance, clamping into [0, 1]."""
        data = np.asarray(data)
        if wavelengths is None:
            wavelengths = DEFAULT_WAVELENGTHS[: data.shape[0]]
        return cls(np.clip(data, 0.0, 1.0), wavelengths)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        """(H, W, C), the conventional ordering."""
        return self.height, self.width, self.bands


@dataclass(frozen=True)
class RgbImage:
    """Three-channel image in R, G, B plane order, values in [0, 1]."""

    data: FloatArray

    def __post_init__(self):
        data = np.array(self.data, copy=True)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if data.ndim != 3 or data.shape[0] != 3:
            raise ShapeMismatch(f"RGB data must have shape (3, H, W), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("RGB data must be finite")
        object.__setattr__(self, "data", _freeze(data))

    @classmethod
    def ingest(cls, data) -> "RgbImage":
        return cls(np.clip(np.asarray(data), 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class BandPartition:
    blue: tuple[int, ...]
    green: tuple[int, ...]
    red: tuple[int, ...]

    def regions(self) -> dict[str, tuple[int, ...]]:
        return {"blue": self.blue, "green": self.green, "red": self.red}


@dataclass(frozen=True)
class CameraResponse:
    """3 x C spectral response; row i produces RGB channel i (R, G, B)."""

    matrix: FloatArray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64, copy=True)
        if m.ndim != 2 or m.shape[0] != 3:
            raise ShapeMismatch(f"camera response must be 3 x C, got {m.shape}")
        if np.any(m < 0):
            raise ValueError("camera response entries must be nonnegative")
        if not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("camera response rows must sum to 1")
        object.__setattr__(self, "matrix", _freeze(m))

    @classmethod
    def gaussian(
        cls,
        wavelengths=DEFAULT_WAVELENGTHS,
        centers=DEFAULT_RESPONSE_CENTERS,
        sigma: float = DEFAULT_RESPONSE_SIGMA,
    ) -> "CameraResponse":
        w = check_wavelengths(wavelengths)
        rows = np.exp(-0.5 * ((w[None, :] - np.asarray(centers)[:, None]) / sigma) ** 2)
        return cls(rows / rows.sum(axis=1, keepdims=True))


def cube_to_matrix(cube: SpectralCube | np.ndarray) -> FloatArray:
    """Reshape to an N x C matrix, one row per pixel in row-major pixel order."""
    data = cube.data if isinstance(cube, SpectralCube) else np.asarray(cube)
    c = data.shape[0]
    return data.reshape(c, -1).T.copy()


def matrix_to_cube(matrix, height: int, width: int, wavelengths=None) -> SpectralCube:
    m = np.asarray(matrix)
    if m.shape[0] != height * width:
        raise ShapeMismatch(f"{m.shape[0]} rows cannot fill a {height}x{width} image")
    data = m.T.reshape(m.shape[1], height, width)
    if wavelengths is None:
        wavelengths = DEFAULT_WAVELENGTHS[: m.shape[1]]
    return SpectralCube(data, wavelengths)


def partition_from_wavelengths(wavelengths) -> BandPartition:
    w = check_wavelengths(wavelengths)
    idx = np.arange(w.size)
    blue = tuple(int(i) for i in idx[w <= BLUE_UPPER_NM])
    green = tuple(int(i) for i in idx[(w > BLUE_UPPER_NM) & (w <= GREEN_UPPER_NM)])
    red = tuple(int(i) for i in idx[w > GREEN_UPPER_NM])
    empty = [name for name, s in (("blue", blue), ("green", green), ("red", red)) if not s]
    if empty:
        raise PartitionEmpty(f"no bands fall in region(s): {', '.join(empty)}")
    return BandPartition(blue, green, red)


def rgb_from_cube(cube: SpectralCube, resp: CameraResponse | None = None) -> RgbImage:
    if resp is None:
        resp = CameraResponse.gaussian(cube.wavelengths)
    if resp.matrix.shape[1] != cube.bands:
        raise DimensionMismatch(
            f"response has {resp.matrix.shape[1]} columns, cube has {cube.bands} bands"
        )
    rgb = np.tensordot(resp.matrix, cube.data, axes=(1, 0))
    # rows sum to 1, so only rounding can push values outside [0, 1]
    return RgbImage(np.clip(rgb, 0.0, 1.0).astype(cube.data.dtype, copy=False))


def l2_normalize_rows(m) -> FloatArray:
    """Scale each row to unit Euclidean norm; zero rows stay zero."""
    m = np.asarray(m, dtype=np.float64)
    # pre-scale by the largest magnitude so tiny rows do not underflow when squared
    peak = np.max(np.abs(m), axis=-1, keepdims=True) if m.shape[-1] else np.zeros(m.shape[:-1] + (1,))
    scaled = m / np.where(peak > 0, peak, 1.0)
    norms = np.linalg.norm(scaled, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, scaled / safe, 0.0)


def global_average_pool(cube: SpectralCube | np.ndarray) -> FloatArray:
    data = cube.data if isinstance(cube, SpectralCube) else np.asarray(cube)
    return data.reshape(data.shape[0], -1).mean(axis=1, dtype=np.float64)
