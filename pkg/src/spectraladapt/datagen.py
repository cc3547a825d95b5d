"""Synthetic two-domain dataset with covariate shift.

Both domains mix the same Gaussian-bump endmembers linearly (shared
spectrum-given-abundance law); they differ in how abundances are distributed,
how smooth the abundance fields are, and the illumination curve. The target
domain also has amplified spatial variation in its red bands.

Every cube draws from its own RNG stream keyed by (seed, role, index), so the
bytes on disk do not depend on generation order.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_WAVELENGTHS,
    GREEN_UPPER_NM,
    CameraResponse,
    RgbImage,
    SpectralCube,
    rgb_from_cube,
)
from .errors import ManifestError
from .fileio import read_cube, read_rgb, write_cube, write_rgb

log = logging.getLogger(__name__)

ROLES = ("labeled_source", "labeled_target", "unlabeled_target", "target_validation")
_ROLE_KEYS = {role: i for i, role in enumerate(ROLES)}


@dataclass(frozen=True)
class DomainSpec:
    true_endmembers: np.ndarray  # K0 x C, entries in [0, 1]
    abundance_concentration: np.ndarray  # K0 Dirichlet parameters of the per-image mixture
    illumination: np.ndarray  # C, positive
    noise_sigma: float = 0.0
    spatial_smoothness: float = 2.0  # Gaussian blur sigma in pixels
    variance_gain: np.ndarray | None = None  # per-band std multiplier around the band mean
    pixel_concentration: float = 4.0  # spread of pixel abundances around the image mixture
    wavelengths: np.ndarray = field(default_factory=lambda: DEFAULT_WAVELENGTHS.copy())

    def __post_init__(self):
        e = np.asarray(self.true_endmembers, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 2:
            raise ValueError("need at least two endmembers")
        if np.any(e < 0) or np.any(e > 1):
            raise ValueError("endmember reflectances must lie in [0, 1]")
        if np.any(np.asarray(self.illumination) <= 0):
            raise ValueError("illumination must be positive")
        if np.asarray(self.abundance_concentration).shape != (e.shape[0],):
            raise ValueError("one concentration parameter per endmember")

    @property
    def bands(self) -> int:
        return self.true_endmembers.shape[1]


def gaussian_blur(field_: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the last two axes, edge-replicated."""
    if sigma <= 0:
        return field_
    radius = int(np.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    out = field_
    for axis in (-2, -1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, weight in enumerate(k):
            acc += weight * np.take(padded, np.arange(i, i + n), axis=axis)
        out = acc
    return out


def synth_cube(spec: DomainSpec, h: int, w: int, seed=0) -> SpectralCube:
    rng = np.random.default_rng(seed)
    image_mix = rng.dirichlet(spec.abundance_concentration)
    alpha = spec.pixel_concentration * image_mix * image_mix.size + 1e-3
    ab = rng.dirichlet(alpha, size=(h, w))  # H, W, K0
    ab = gaussian_blur(ab.transpose(2, 0, 1), spec.spatial_smoothness)  # K0, H, W
    cube = np.tensordot(spec.true_endmembers.T, ab, axes=(1, 0))  # C, H, W
    if spec.variance_gain is not None:
        mean = cube.mean(axis=(1, 2), keepdims=True)
        cube = mean + np.asarray(spec.variance_gain)[:, None, None] * (cube - mean)
    cube = cube * np.asarray(spec.illumination)[:, None, None]
    if spec.noise_sigma > 0:
        cube = cube + rng.normal(0.0, spec.noise_sigma, size=cube.shape)
    return SpectralCube.ingest(np.clip(cube, 0.0, 1.0).astype(np.float32), spec.wavelengths)


def gaussian_bump_endmembers(rng: np.random.Generator, k0: int, wavelengths) -> np.ndarray:
    w = np.asarray(wavelengths, dtype=np.float64)
    rows = []
    for _ in range(k0):
        base = rng.uniform(0.05, 0.3)
        s = np.full(w.shape, base)
        for _ in range(rng.integers(1, 4)):
            center = rng.uniform(400, 700)
            width = rng.uniform(20, 80)
            s = s + rng.uniform(0.2, 0.6) * np.exp(-0.5 * ((w - center) / width) ** 2)
        rows.append(np.clip(s, 0.0, 0.95))
    return np.array(rows)


def make_domains(seed=0, n_endmembers: int = 6, wavelengths=DEFAULT_WAVELENGTHS):
    """Source and target specs sharing endmembers but with shifted input statistics."""
    rng = np.random.default_rng(seed)
    w = np.asarray(wavelengths, dtype=np.float64)
    e = gaussian_bump_endmembers(rng, n_endmembers, w)
    e.flags.writeable = False
    t = (w - w[0]) / (w[-1] - w[0])
    # diverse object-like source scenes; homogeneous target scenes dominated by one material
    src_conc = np.full(n_endmembers, 0.5)
    tgt_conc = rng.uniform(1.0, 3.0, n_endmembers)
    tgt_conc[rng.integers(n_endmembers)] = 20.0
    source = DomainSpec(
        true_endmembers=e,
        abundance_concentration=src_conc,
        illumination=np.full(w.shape, 1.0),
        noise_sigma=0.005,
        spatial_smoothness=1.5,
        wavelengths=w,
    )
    red = w > GREEN_UPPER_NM
    target = DomainSpec(
        true_endmembers=e,
        abundance_concentration=tgt_conc,
        illumination=0.4 + 0.6 * t,  # warm light: dim blue, full red
        noise_sigma=0.005,
        spatial_smoothness=3.0,
        variance_gain=np.where(red, 2.0, 1.0),  # x4 variance in the red region
        wavelengths=w,
    )
    return source, target


# ---------------------------------------------------------------------------
# manifest


@dataclass
class ManifestEntry:
    role: str
    rgb_path: Path
    cube_path: Path | None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    path: Path | None = None

    def paths(self, role: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.role == role]

    @property
    def counts(self) -> dict[str, int]:
        return {role: len(self.paths(role)) for role in ROLES}

    def validate(self, enforce_ratio: bool = True) -> None:
        """Check role counts and that every referenced file exists.

        ``enforce_ratio`` requires the labeled target count to be at most a
        tenth of the unlabeled count, the regime training assumes.
        """
        c = self.counts
        if c["labeled_source"] < 1 and c["labeled_target"] < 1:
            raise ManifestError("manifest has no labeled data")
        if c["labeled_target"] < 1:
            raise ManifestError("at least one labeled target sample is required")
        if c["unlabeled_target"] < 1:
            raise ManifestError("manifest has no unlabeled target samples")
        if enforce_ratio and c["labeled_target"] * 10 > c["unlabeled_target"]:
            raise ManifestError(
                f"labeled target count {c['labeled_target']} must be at most a tenth "
                f"of the unlabeled count {c['unlabeled_target']}"
            )
        for e in self.entries:
            if not e.rgb_path.is_file():
                raise ManifestError(f"missing RGB file {e.rgb_path}")
            if e.cube_path is not None and not e.cube_path.is_file():
                raise ManifestError(f"missing cube file {e.cube_path}")
            if e.role != "unlabeled_target" and e.cube_path is None:
                raise ManifestError(f"{e.role} entry {e.rgb_path} has no cube")

    def write(self, path) -> None:
        path = Path(path)
        base = path.parent
        lines = []
        for e in self.entries:
            cube = "-" if e.cube_path is None else _rel(e.cube_path, base)
            lines.append(f"{e.role}\t{_rel(e.rgb_path, base)}\t{cube}")
        path.write_text("\n".join(lines) + "\n")
        self.path = path

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise ManifestError(f"manifest {path} not found")
        base = path.parent
        entries = []
        for n, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3 or fields[0] not in ROLES:
                raise ManifestError(f"{path}:{n}: malformed record {line!r}")
            role, rgb, cube = fields
            entries.append(
                ManifestEntry(role, base / rgb, None if cube == "-" else base / cube)
            )
        return cls(entries, path)


def _rel(p: Path, base: Path) -> str:
    try:
        return str(Path(p).relative_to(base))
    except ValueError:
        return str(p)


@dataclass
class LoadedData:
    """In-memory arrays for training; RGB (3, H, W) and cubes (C, H, W)."""

    source: list[tuple[np.ndarray, np.ndarray]]
    target_labeled: list[tuple[np.ndarray, np.ndarray]]
    target_unlabeled: list[np.ndarray]
    target_validation: list[tuple[np.ndarray, np.ndarray]]
    wavelengths: np.ndarray


def load_manifest(manifest: DatasetManifest | str | Path, enforce_ratio: bool = True) -> LoadedData:
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.read(manifest)
    manifest.validate(enforce_ratio)
    wavelengths = None

    def pairs(role):
        nonlocal wavelengths
        out = []
        for e in manifest.paths(role):
            cube = read_cube(e.cube_path)
            wavelengths = cube.wavelengths if wavelengths is None else wavelengths
            out.append((read_rgb(e.rgb_path).data, cube.data))
        return out

    return LoadedData(
        source=pairs("labeled_source"),
        target_labeled=pairs("labeled_target"),
        target_unlabeled=[read_rgb(e.rgb_path).data for e in manifest.paths("unlabeled_target")],
        target_validation=pairs("target_validation"),
        wavelengths=np.asarray(wavelengths, dtype=np.float64),
    )


def build_manifest(
    out_dir,
    counts: dict[str, int] | tuple[int, int, int, int],
    seed=0,
    size: int = 64,
) -> DatasetManifest:
    """Generate all cubes and RGB renderings under ``out_dir`` and write ``manifest.tsv``.

    ``counts`` maps roles to sample counts, or is a (src, tgt_labeled,
    tgt_unlabeled, tgt_val) tuple.
    """
    if not isinstance(counts, dict):
        counts = dict(zip(ROLES, counts))
    for role in ROLES:
        if counts.get(role, 0) < 1:
            raise ValueError(f"count for {role} must be >= 1, got {counts.get(role, 0)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    source, target = make_domains(seed)
    resp = CameraResponse.gaussian(source.wavelengths)
    entries = []
    for role in ROLES:
        spec = source if role == "labeled_source" else target
        for i in range(counts[role]):
            ss = np.random.SeedSequence([int(seed), _ROLE_KEYS[role], i])
            cube = synth_cube(spec, size, size, seed=ss)
            rgb: RgbImage = rgb_from_cube(cube, resp)
            stem = f"{role}_{i:04d}"
            rgb_path = out / f"{stem}.rgb.hsc"
            write_rgb(rgb_path, rgb)
            cube_path = None
            if role != "unlabeled_target":
                cube_path = out / f"{stem}.cube.hsc"
                write_cube(cube_path, cube)
            entries.append(ManifestEntry(role, rgb_path, cube_path))
    manifest = DatasetManifest(entries)
    manifest.write(out / "manifest.tsv")
    log.info("wrote %d records to %s", len(entries), out / "manifest.tsv")
    return manifest


def checksum_dir(path) -> dict[str, str]:
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(Path(path).iterdir())
        if p.is_file()
    }
