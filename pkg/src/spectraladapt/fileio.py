"""Binary and text file formats.

HSC1 (cubes and RGB images)::

    b"HSC1" | u32 H | u32 W | u32 C | C x f32 wavelengths | H*W*C x f32 data

all little-endian, data band-major planar (plane 0 first, each plane row-major).
RGB images use C = 3 with the camera response centers as wavelengths.

SPAD (model checkpoints)::

    b"SPAD" | u32 version | u32 patch_radius | u32 n_hidden | n_hidden x u32 widths
    | u32 C | u32 n_params | n_params x f32 parameters

with parameters in the layer order documented in :mod:`spectraladapt.model`.

Pixel maps are written as binary 8-bit PGM (P5), min-max scaled, next to a
CSV holding the raw values.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .core import DEFAULT_RESPONSE_CENTERS, RgbImage, SpectralCube
from .errors import FormatError
from .model import Architecture, ModelParams

HSC_MAGIC = b"HSC1"
SPAD_MAGIC = b"SPAD"
SPAD_VERSION = 1

_HSC_HEADER = struct.Struct("<4sIII")
_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def _encode_hsc(data: np.ndarray, wavelengths) -> bytes:
    c, h, w = data.shape
    return b"".join(
        (
            _HSC_HEADER.pack(HSC_MAGIC, h, w, c),
            np.asarray(wavelengths, dtype="<f4").tobytes(),
            np.ascontiguousarray(data, dtype="<f4").tobytes(),
        )
    )


def _decode_hsc(raw: bytes, source: str) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) < _HSC_HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(raw)} bytes)")
    magic, h, w, c = _HSC_HEADER.unpack_from(raw)
    if magic != HSC_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {HSC_MAGIC!r}")
    if c == 0 or h == 0 or w == 0:
        raise FormatError(f"{source}: empty dimensions H={h} W={w} C={c}")
    expected = _HSC_HEADER.size + 4 * (c + h * w * c)
    if len(raw) != expected:
        kind = "truncated" if len(raw) < expected else "trailing bytes in"
        raise FormatError(f"{source}: {kind} file ({len(raw)} bytes, expected {expected})")
    off = _HSC_HEADER.size
    wl = np.frombuffer(raw, dtype="<f4", count=c, offset=off).astype(np.float32)
    data = np.frombuffer(raw, dtype="<f4", count=h * w * c, offset=off + 4 * c)
    data = data.astype(np.float32).reshape(c, h, w)
    if not (np.all(np.isfinite(wl)) and np.all(np.isfinite(data))):
        raise FormatError(f"{source}: non-finite values in payload")
    return wl, data


def _read_bytes(path) -> bytes:
    return Path(path).read_bytes()


def write_cube(path, cube: SpectralCube) -> None:
    """Write ``cube`` as HSC1. Values are stored as float32."""
    Path(path).write_bytes(_encode_hsc(cube.data, cube.wavelengths))


def read_cube(path) -> SpectralCube:
    wl, data = _decode_hsc(_read_bytes(path), str(path))
    try:
        return SpectralCube.ingest(data, wl)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_rgb(path, img: RgbImage) -> None:
    Path(path).write_bytes(_encode_hsc(img.data, DEFAULT_RESPONSE_CENTERS))


def read_rgb(path) -> RgbImage:
    _, data = _decode_hsc(_read_bytes(path), str(path))
    if data.shape[0] != 3:
        raise FormatError(f"{path}: expected 3 channels, found {data.shape[0]}")
    return RgbImage.ingest(data)


def write_checkpoint(path, params: ModelParams) -> None:
    arch = params.arch
    head = [SPAD_MAGIC, struct.pack("<III", SPAD_VERSION, arch.patch_radius, len(arch.hidden))]
    head.append(struct.pack(f"<{len(arch.hidden)}I", *arch.hidden))
    head.append(struct.pack("<II", arch.bands, arch.n_params))
    Path(path).write_bytes(b"".join(head) + params.vector.astype("<f4").tobytes())


def read_checkpoint(path) -> ModelParams:
    raw = _read_bytes(path)
    try:
        if raw[:4] != SPAD_MAGIC:
            raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {SPAD_MAGIC!r}")
        version, radius, n_hidden = struct.unpack_from("<III", raw, 4)
        if version != SPAD_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        off = 16
        hidden = struct.unpack_from(f"<{n_hidden}I", raw, off)
        off += 4 * n_hidden
        bands, n_params = struct.unpack_from("<II", raw, off)
        off += 8
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint header") from exc
    arch = Architecture(radius, tuple(hidden), bands)
    if n_params != arch.n_params or len(raw) != off + 4 * n_params:
        raise FormatError(f"{path}: parameter block does not match architecture {arch}")
    vec = np.frombuffer(raw, dtype="<f4", count=n_params, offset=off).astype(np.float64)
    if not np.all(np.isfinite(vec)):
        raise FormatError(f"{path}: non-finite parameters")
    return ModelParams(arch, vec)


def write_pgm(path, plane: np.ndarray) -> None:
    plane = np.asarray(plane, dtype=np.float64)
    lo, hi = float(plane.min()), float(plane.max())
    scaled = np.zeros_like(plane) if hi == lo else (plane - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = _read_bytes(path)
    m = _PGM_HEADER.match(raw)
    if m is None:
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported")
    body = raw[m.end() :]
    if len(body) != w * h:
        raise FormatError(f"{path}: pixel payload has {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def write_map(stem, plane: np.ndarray) -> tuple[Path, Path]:
    """Write ``stem.pgm`` and ``stem.csv`` (raw values, one image row per line)."""
    stem = Path(stem)
    pgm, csv = stem.with_suffix(".pgm"), stem.with_suffix(".csv")
    write_pgm(pgm, plane)
    np.savetxt(csv, np.asarray(plane, dtype=np.float64), delimiter=",", fmt="%.17g")
    return pgm, csv
