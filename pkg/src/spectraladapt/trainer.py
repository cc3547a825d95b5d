"""Mean-teacher semi-supervised training loop.

One step trains the student on labeled source and labeled target crops, asks
it to agree with the EMA teacher on two augmented views of unlabeled target
crops (the student view optionally block-masked by spectral density), and
pulls pooled prediction spectra toward an endmember bank.

Randomness is stateless: every draw comes from a generator seeded with
``(cfg.seed, iteration, stream)``, so switching a module off never shifts the
random numbers seen by the others.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import sera as sera_mod
from .core import RgbImage, SpectralCube, partition_from_wavelengths
from .datagen import LoadedData
from .errors import EmptyInput, InvalidWindow, NonFiniteLoss, ShapeMismatch
from .metrics import MetricReport, report
from .model import (
    Architecture,
    LossWeights,
    ModelParams,
    backward,
    con_loss,
    forward,
    forward_padded,
    pad_edges,
    sup_loss,
    total_loss,
)
from .sdm import SpectralDensity, apply_mask_array, generate_mask, masking_ratios, spectral_density

log = logging.getLogger(__name__)

# stream ids for per-iteration generators
_STREAM_BATCH, _STREAM_AUG, _STREAM_LABELED_AUG = 1, 2, 3
_SEED_INIT, _SEED_BANK = 11, 12


@dataclass
class TrainConfig:
    iterations: int = 1000
    lr_init: float = 3e-3  # desk-scale value for the small per-pixel model
    lr_final: float = 1e-6
    batch_src: int = 8
    batch_unlabeled: int = 8
    batch_labeled_tgt: int = 1
    m_ema: float = 0.99
    m_end: float = 0.9
    lambda_sup: float = 0.4
    lambda_un: float = 0.3
    r_min: float = 0.5
    r_max: float = 0.9
    block_size: int = 8
    k_endmembers: int = 16
    n_sample: int = 4096
    sigma_weak: float = 0.01
    sigma_strong: float = 0.05
    crop: int = 64
    stride: int | None = None
    seed: int = 0
    enable_sdm: bool = True
    enable_sera: bool = True
    eval_every: int = 100
    eval_model: str = "teacher"
    dtype: str = "float32"
    hidden: tuple[int, ...] = (64, 64)
    patch_radius: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.stride is None:
            self.stride = max(1, self.crop // 2)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        for name in ("m_ema", "m_end", "lambda_sup", "lambda_un", "r_min", "r_max"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.r_min > self.r_max:
            raise ValueError("r_min must not exceed r_max")
        for name in ("batch_src", "batch_unlabeled", "batch_labeled_tgt", "crop", "block_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 1 <= self.stride <= self.crop:
            raise ValueError("stride must lie in [1, crop]")
        if self.eval_model not in ("teacher", "student"):
            raise ValueError("eval_model must be 'teacher' or 'student'")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_sup, self.lambda_un)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_text(self) -> str:
        """Config echo as ``key=value`` lines."""
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "on" if v else "off"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: "TrainConfig | None" = None) -> "TrainConfig":
        """Build a config from string values (config files, CLI flags)."""
        types = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = dataclasses.asdict(base) if base is not None else {}
        keys = {k.strip().replace("-", "_") for k in values}
        if "crop" in keys and "stride" not in keys:
            kwargs.pop("stride", None)  # re-derive from the new crop
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _parse_value(key, str(raw).strip(), types[key].default)
        return cls(**kwargs)


def _parse_value(key: str, raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("on", "true", "1", "yes"):
            return True
        if low in ("off", "false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected on/off, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.split(",") if x)
    if key == "stride":
        return None if raw.lower() in ("", "none") else int(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cosine_lr(cfg: TrainConfig, iteration: int) -> float:
    """Cosine decay from lr_init at iteration 0 to lr_final at the last iteration."""
    span = max(cfg.iterations - 1, 1)
    frac = min(iteration, span) / span
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + math.cos(math.pi * frac))


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, (RgbImage, SpectralCube)) else np.asarray(x)


def _rng(cfg: TrainConfig, iteration: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, iteration, stream, *extra])


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class Geom:
    rot90: int = 0
    flip_h: bool = False
    flip_v: bool = False

    def apply(self, a: np.ndarray) -> np.ndarray:
        if self.flip_h:
            a = a[..., :, ::-1]
        if self.flip_v:
            a = a[..., ::-1, :]
        return np.rot90(a, self.rot90, axes=(-2, -1))

    def invert(self, a: np.ndarray) -> np.ndarray:
        a = np.rot90(a, -self.rot90, axes=(-2, -1))
        if self.flip_v:
            a = a[..., ::-1, :]
        if self.flip_h:
            a = a[..., :, ::-1]
        return a

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Geom":
        rot, fh, fv = rng.integers(0, 4), rng.integers(0, 2), rng.integers(0, 2)
        return cls(int(rot), bool(fh), bool(fv))


@dataclass
class AugmentView:
    geom: Geom
    sigma: float
    mask: object | None = None  # MaskPlan


def augment_pair(rgb, cfg: TrainConfig, density: SpectralDensity | None, seed, geom: Geom | None = None):
    """Student and teacher views of one RGB crop sharing one geometric transform.

    Returns ``(student_view, teacher_view, geom, student_aug)``.
    """
    rgb = _array(rgb)
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    geo_ss, noise_t, noise_s, mask_ss = ss.spawn(4)
    if geom is None:
        geom = Geom.random(np.random.default_rng(geo_ss))
    base = np.ascontiguousarray(geom.apply(rgb))
    teacher = base + np.random.default_rng(noise_t).normal(0.0, cfg.sigma_weak, base.shape)
    student = base + np.random.default_rng(noise_s).normal(0.0, cfg.sigma_strong, base.shape)
    plan = None
    if cfg.enable_sdm:
        if density is None:
            raise ValueError("SDM needs a spectral density")
        ratios = masking_ratios(density, cfg.r_min, cfg.r_max)
        plan = generate_mask(base.shape[-2], base.shape[-1], ratios, cfg.block_size, seed=mask_ss)
        student = apply_mask_array(student, plan)
    student = np.clip(student, 0.0, 1.0).astype(rgb.dtype, copy=False)
    teacher = np.clip(teacher, 0.0, 1.0).astype(rgb.dtype, copy=False)
    return student, teacher, geom, AugmentView(geom, cfg.sigma_strong, plan)


# ---------------------------------------------------------------------------
# state


def ema_update(teacher: ModelParams, student: ModelParams, m_ema: float) -> ModelParams:
    if teacher.arch != student.arch or teacher.vector.shape != student.vector.shape:
        raise ShapeMismatch("teacher and student architectures differ")
    return ModelParams(teacher.arch, m_ema * teacher.vector + (1.0 - m_ema) * student.vector)


@dataclass
class TrainState:
    student: ModelParams
    teacher: ModelParams
    adam_m: np.ndarray
    adam_v: np.ndarray
    bank: sera_mod.EndmemberBank | None
    density: SpectralDensity | None
    iteration: int = 0
    seed: int = 0

    def copy(self) -> "TrainState":
        return dataclasses.replace(
            self,
            student=self.student.copy(),
            teacher=self.teacher.copy(),
            adam_m=self.adam_m.copy(),
            adam_v=self.adam_v.copy(),
        )


@dataclass
class StepBreakdown:
    iteration: int
    lr: float
    sup_src: float
    sup_tgt: float
    con: float
    sera: float
    total: float

    def parts(self) -> dict[str, float]:
        return {"sup_src": self.sup_src, "sup_tgt": self.sup_tgt, "con": self.con, "sera": self.sera}


def dataset_density(data: LoadedData) -> SpectralDensity:
    """Mean density over labeled target cubes, falling back to labeled source cubes."""
    cubes = [c for _, c in data.target_labeled] or [c for _, c in data.source]
    if not cubes:
        raise EmptyInput("no labeled cubes to estimate spectral density from")
    part = partition_from_wavelengths(data.wavelengths)
    return SpectralDensity.mean(
        [spectral_density(SpectralCube(c, data.wavelengths), part) for c in cubes]
    )


def init_state(cfg: TrainConfig, data: LoadedData) -> TrainState:
    bands = data.wavelengths.size
    arch = Architecture(cfg.patch_radius, cfg.hidden, bands)
    student = ModelParams.init(arch, seed=[cfg.seed, _SEED_INIT])
    labeled = [SpectralCube(c, data.wavelengths) for _, c in data.source + data.target_labeled]
    bank = None
    if cfg.enable_sera:
        bank = sera_mod.init_bank(
            labeled, cfg.k_endmembers, cfg.n_sample, cfg.m_end, seed=[cfg.seed, _SEED_BANK]
        )
    density = dataset_density(data) if cfg.enable_sdm else None
    zeros = np.zeros(arch.n_params)
    return TrainState(student, student.copy(), zeros, zeros.copy(), bank, density, 0, cfg.seed)


# ---------------------------------------------------------------------------
# batching


def _random_crop(rng: np.random.Generator, arrays: list[np.ndarray], crop: int) -> list[np.ndarray]:
    h, w = arrays[0].shape[-2:]
    if crop > min(h, w):
        raise InvalidWindow(f"crop {crop} exceeds image size {h}x{w}")
    y = int(rng.integers(0, h - crop + 1))
    x = int(rng.integers(0, w - crop + 1))
    return [a[..., y : y + crop, x : x + crop] for a in arrays]


def sample_batch(cfg: TrainConfig, data: LoadedData, iteration: int) -> dict[str, np.ndarray]:
    rng = _rng(cfg, iteration, _STREAM_BATCH)
    aug = _rng(cfg, iteration, _STREAM_LABELED_AUG)

    def labeled(pairs, n):
        rgbs, cubes = [], []
        for i in rng.integers(0, len(pairs), size=n):
            rgb, cube = _random_crop(rng, list(pairs[int(i)]), cfg.crop)
            g = Geom.random(aug)
            rgbs.append(g.apply(rgb))
            cubes.append(g.apply(cube))
        return np.stack(rgbs), np.stack(cubes)

    src_rgb, src_cube = labeled(data.source, cfg.batch_src) if data.source else (None, None)
    tgt_rgb, tgt_cube = labeled(data.target_labeled, cfg.batch_labeled_tgt)
    unl = []
    for i in rng.integers(0, len(data.target_unlabeled), size=cfg.batch_unlabeled):
        (crop,) = _random_crop(rng, [data.target_unlabeled[int(i)]], cfg.crop)
        unl.append(crop)
    return {
        "src_rgb": src_rgb,
        "src_cube": src_cube,
        "tgt_rgb": tgt_rgb,
        "tgt_cube": tgt_cube,
        "unl_rgb": np.stack(unl),
    }


# ---------------------------------------------------------------------------
# step


def train_step(state: TrainState, batch: dict, cfg: TrainConfig) -> tuple[TrainState, StepBreakdown]:
    dtype = cfg.np_dtype
    t = state.iteration
    w = cfg.weights

    students, teachers = [], []
    for j, rgb in enumerate(batch["unl_rgb"]):
        s, te, _, _ = augment_pair(
            rgb, cfg, state.density, np.random.SeedSequence([cfg.seed, t, _STREAM_AUG, j])
        )
        students.append(s)
        teachers.append(te)
    stu_view, tea_view = np.stack(students), np.stack(teachers)

    streams = []
    if batch.get("src_rgb") is not None:
        streams.append(("src", batch["src_rgb"], batch["src_cube"]))
    streams.append(("tgt", batch["tgt_rgb"], batch["tgt_cube"]))
    streams.append(("unl", stu_view, None))
    sizes = [s[1].shape[0] for s in streams]
    inputs = np.concatenate([s[1] for s in streams]).astype(dtype, copy=False)

    pred, cache = forward(state.student, inputs, dtype)
    teacher_pred, _ = forward(state.teacher, tea_view.astype(dtype, copy=False), dtype)
    pred64 = pred.astype(np.float64)
    grad = np.zeros_like(pred64)

    parts = {"sup_src": 0.0, "sup_tgt": 0.0, "con": 0.0, "sera": 0.0}
    offs = np.cumsum([0, *sizes])
    for (name, _, gt), a, b in zip(streams, offs[:-1], offs[1:]):
        if name == "unl":
            loss, g = con_loss(pred64[a:b], teacher_pred)
            parts["con"] = loss
            grad[a:b] += w.lambda_un * g
        else:
            loss, g = sup_loss(pred64[a:b], gt, w)
            parts[f"sup_{name}"] = loss
            grad[a:b] += g

    features = assignment = None
    if cfg.enable_sera and state.bank is not None:
        loss, gs, features, assignment = sera_mod.sera_with_grad(pred64, state.bank)
        parts["sera"] = loss
        grad += (1.0 - w.lambda_un) * gs

    total = total_loss(parts, w)
    lr = cosine_lr(cfg, t)
    if not math.isfinite(total):
        raise NonFiniteLoss(
            f"non-finite loss at iteration {t}: {parts}",
            dump={"iteration": t, "lr": lr, **parts, "total": total},
        )

    g = backward(cache, grad).vector
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = b1 * state.adam_m + (1.0 - b1) * g
    v = b2 * state.adam_v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** (t + 1))
    v_hat = v / (1.0 - b2 ** (t + 1))
    student = ModelParams(state.student.arch, state.student.vector - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps))
    if not student.all_finite():
        raise NonFiniteLoss(f"non-finite parameters after iteration {t}", dump={"iteration": t, **parts})
    teacher = ema_update(state.teacher, student, cfg.m_ema)

    bank = state.bank
    if features is not None:
        bank = sera_mod.momentum_update(bank, features, assignment)

    new_state = TrainState(student, teacher, m, v, bank, state.density, t + 1, state.seed)
    return new_state, StepBreakdown(t, lr, **parts, total=total)


# ---------------------------------------------------------------------------
# inference and evaluation


def window_starts(size: int, crop: int, stride: int) -> list[int]:
    starts = list(range(0, size - crop + 1, stride))
    if starts[-1] != size - crop:
        starts.append(size - crop)
    return starts


def sliding_window_predict(params: ModelParams, img, crop: int, stride: int, dtype=np.float64) -> np.ndarray:
    """Tile the image with ``crop`` windows, predict each, and average overlaps.

    Each tile is cut from the edge-padded full image with a halo of
    ``patch_radius`` pixels, so tile-border pixels see their true neighbors.
    Returns a (C, H, W) array.
    """
    rgb = _array(img)
    _, h, w = rgb.shape
    if crop < 1 or stride < 1 or crop > min(h, w) or stride > crop:
        raise InvalidWindow(f"crop={crop}, stride={stride} invalid for a {h}x{w} image")
    p = params.arch.patch_radius
    padded = pad_edges(rgb[None], p)[0]
    ys, xs = window_starts(h, crop, stride), window_starts(w, crop, stride)
    tiles = np.stack([padded[:, y : y + crop + 2 * p, x : x + crop + 2 * p] for y in ys for x in xs])
    preds, _ = forward_padded(params, tiles, dtype)
    total = np.zeros((params.arch.bands, h, w))
    count = np.zeros((1, h, w))
    for k, (y, x) in enumerate((y, x) for y in ys for x in xs):
        total[:, y : y + crop, x : x + crop] += preds[k]
        count[:, y : y + crop, x : x + crop] += 1.0
    return total / count


def evaluate_pairs(
    params: ModelParams, pairs, cfg: TrainConfig, predictor=None
) -> list[MetricReport]:
    if not pairs:
        raise EmptyInput("evaluation needs at least one (RGB, cube) pair")
    out = []
    for rgb, cube in pairs:
        rgb, cube = _array(rgb), _array(cube)
        if predictor is None:
            crop = min(cfg.crop, *rgb.shape[-2:])
            stride = min(cfg.stride, crop)
            pred = sliding_window_predict(params, rgb, crop, stride, cfg.np_dtype)
        else:
            pred = predictor(rgb, cube)
        out.append(report(pred, cube))
    return out


def mean_report(reports: list[MetricReport]) -> MetricReport:
    return MetricReport(
        ssim=float(np.mean([r.ssim for r in reports])),
        sam=float(np.mean([r.sam for r in reports])),
        psnr=float(np.mean([r.psnr for r in reports])),
        l1=float(np.mean([r.l1 for r in reports])),
    )


def evaluate(params: ModelParams, pairs, cfg: TrainConfig, predictor=None) -> MetricReport:
    return mean_report(evaluate_pairs(params, pairs, cfg, predictor))


@dataclass
class HistoryRow:
    iteration: int
    lr: float
    sup_src: float
    sup_tgt: float
    con: float
    sera: float
    total: float
    ssim: float
    sam: float
    psnr: float
    l1: float


@dataclass
class TrainResult:
    state: TrainState
    history: list[HistoryRow] = field(default_factory=list)
    losses: list[StepBreakdown] = field(default_factory=list)

    @property
    def final_params(self) -> ModelParams:
        return self.state.teacher


def train_loop(cfg: TrainConfig, data: LoadedData, callback=None) -> TrainResult:
    """Run ``cfg.iterations`` steps, evaluating on target validation every ``eval_every``."""
    state = init_state(cfg, data)
    result = TrainResult(state)
    window: list[StepBreakdown] = []
    for t in range(cfg.iterations):
        batch = sample_batch(cfg, data, t)
        state, parts = train_step(state, batch, cfg)
        result.losses.append(parts)
        window.append(parts)
        if (t + 1) % cfg.eval_every == 0:
            params = state.teacher if cfg.eval_model == "teacher" else state.student
            rep = evaluate(params, data.target_validation, cfg) if data.target_validation else None
            means = {k: float(np.mean([getattr(p, k) for p in window])) for k in ("sup_src", "sup_tgt", "con", "sera", "total")}
            row = HistoryRow(
                iteration=t + 1,
                lr=parts.lr,
                **means,
                ssim=rep.ssim if rep else math.nan,
                sam=rep.sam if rep else math.nan,
                psnr=rep.psnr if rep else math.nan,
                l1=rep.l1 if rep else math.nan,
            )
            result.history.append(row)
            window = []
            log.info(
                "iter %d total=%.4f ssim=%.4f sam=%.4f psnr=%.2f",
                row.iteration, row.total, row.ssim, row.sam, row.psnr,
            )
            if callback is not None:
                callback(state, row)
    result.state = state
    return result
