"""Command-line entry point: ``spectraladapt <command> [flags]``.

Exit codes: 0 on success, 2 on usage errors, 1 on runtime failures. Data goes
to files or standard output; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import SpectralCube
from .datagen import ROLES, DatasetManifest, LoadedData, build_manifest, load_manifest
from .errors import SpectralAdaptError
from .fileio import read_checkpoint, read_cube, write_checkpoint, write_map, write_pgm
from .metrics import MetricReport, error_map, report
from .reporting import RunReport, fmt
from .sdm import (
    centered_bounds,
    generate_mask,
    masking_ratios,
    mean_mask_rate,
    spectral_density,
)
from .sera import init_bank
from .trainer import (
    TrainConfig,
    dataset_density,
    evaluate,
    parse_config_text,
    sliding_window_predict,
    train_loop,
)

log = logging.getLogger("spectraladapt")

METRIC_COLUMNS = ["iteration", "lr", "sup_src_loss", "sup_tgt_loss", "con_loss", "sera_loss",
                  "total_loss", "ssim", "sam", "psnr", "l1"]
ABLATIONS = (
    ("baseline", False, False),
    ("baseline+sdm", True, False),
    ("baseline+sera", False, True),
    ("baseline+sdm+sera", True, True),
)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# shared helpers


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _on_off(text: str) -> bool:
    low = text.lower()
    if low not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")
    return low == "on"


def _config(args, **overrides) -> TrainConfig:
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(parse_config_text(Path(args.config).read_text()))
    for key in ("iterations", "seed", "crop", "stride"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    for key, v in overrides.items():
        if v is not None:
            values[key] = "on" if v is True else "off" if v is False else str(v)
    return TrainConfig.from_mapping(values)


def _load(args) -> LoadedData:
    data = load_manifest(args.manifest)
    n = getattr(args, "labeled_target", None)
    if n is not None:
        if n > len(data.target_labeled):
            raise UsageError(
                f"--labeled-target {n} exceeds the {len(data.target_labeled)} labeled target samples"
            )
        data.target_labeled = data.target_labeled[:n]
    return data


def _write_rows(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _final_report(cfg: TrainConfig, data: LoadedData, result) -> MetricReport:
    params = result.state.teacher if cfg.eval_model == "teacher" else result.state.student
    return evaluate(params, data.target_validation, cfg)


def _cubes(args) -> list[tuple[str, SpectralCube]]:
    if args.cubes:
        return [(Path(p).name, read_cube(p)) for p in args.cubes]
    if not args.manifest:
        raise UsageError("give cube files or --manifest")
    m = DatasetManifest.read(args.manifest)
    roles = ("labeled_target",) if args.command == "density" else ("labeled_source", "labeled_target")
    out = [(e.cube_path.name, read_cube(e.cube_path)) for r in roles for e in m.paths(r)]
    if not out:
        raise UsageError("manifest has no labeled cubes")
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    counts = args.counts
    if len(counts) != 4:
        raise UsageError("--counts needs four values: source,labeled_target,unlabeled_target,validation")
    m = build_manifest(args.out, tuple(counts), seed=args.seed, size=args.size)
    print(m.path)
    return 0


def cmd_density(args) -> int:
    rows, dens = [], []
    for name, cube in _cubes(args):
        d = spectral_density(cube)
        dens.append(d)
        r = masking_ratios(d, args.r_min, args.r_max)
        rows.append([name, d.d_blue, d.d_green, d.d_red, r.r_red, r.r_green, r.r_blue])
    if len(dens) > 1:
        from .sdm import SpectralDensity

        d = SpectralDensity.mean(dens)
        r = masking_ratios(d, args.r_min, args.r_max)
        rows.append(["mean", d.d_blue, d.d_green, d.d_red, r.r_red, r.r_green, r.r_blue])
    w = csv.writer(sys.stdout)
    w.writerow(["cube", "D_B", "D_G", "D_R", "r_R", "r_G", "r_B"])
    w.writerows([[row[0], *(fmt(v) for v in row[1:])] for row in rows])
    return 0


def cmd_endmembers(args) -> int:
    cubes = [c for _, c in _cubes(args)]
    bank = init_bank(cubes, k=args.k, n_sample=args.n_sample, seed=args.seed)
    header = [f"{w:g}" for w in cubes[0].wavelengths]
    rows = [[fmt(v) for v in e] for e in bank.endmembers]
    if args.out:
        _write_rows(Path(args.out), header, rows)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)
    return 0


def cmd_mask_preview(args) -> int:
    data = load_manifest(args.manifest, enforce_ratio=False)
    if not 0 <= args.index < len(data.target_unlabeled):
        raise UsageError(f"--index must lie in [0, {len(data.target_unlabeled) - 1}]")
    rgb = data.target_unlabeled[args.index]
    ratios = masking_ratios(dataset_density(data), args.r_min, args.r_max)
    plan = generate_mask(rgb.shape[1], rgb.shape[2], ratios, args.block_size, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for ch, name in enumerate(("red", "green", "blue")):
        write_pgm(out / f"mask_{name}.pgm", plan.mask[ch].astype(np.float64))
        write_pgm(out / f"masked_{name}.pgm", np.where(plan.mask[ch], 0.0, rgb[ch]))
    w = csv.writer(sys.stdout)
    w.writerow(["channel", "ratio", "masked_blocks", "masked_fraction"])
    for ch, name in enumerate(("red", "green", "blue")):
        w.writerow([name, fmt(ratios.as_rgb()[ch]), int(plan.masked_block_counts[ch]),
                    fmt(plan.masked_fraction[ch])])
    return 0


def cmd_train(args) -> int:
    cfg = _config(args, enable_sdm=args.sdm, enable_sera=args.sera)
    data = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(
        cfg.to_text() + f"labeled_target={len(data.target_labeled)}\nmanifest={args.manifest}\n"
    )
    result = train_loop(cfg, data)
    _write_rows(
        out / "metrics.csv",
        METRIC_COLUMNS,
        [[r.iteration, fmt(r.lr), fmt(r.sup_src), fmt(r.sup_tgt), fmt(r.con), fmt(r.sera),
          fmt(r.total), fmt(r.ssim), fmt(r.sam), fmt(r.psnr), fmt(r.l1)] for r in result.history],
    )
    write_checkpoint(out / "student.spad", result.state.student)
    write_checkpoint(out / "teacher.spad", result.state.teacher)
    log.info("wrote %s", out)
    return 0


def cmd_eval(args) -> int:
    if not args.checkpoint and not args.oracle:
        raise UsageError("give at least one --checkpoint or --oracle")
    cfg = _config(args)
    data = load_manifest(args.manifest, enforce_ratio=False)
    pairs = data.target_validation
    labeled = args.labeled_target if args.labeled_target is not None else len(data.target_labeled)
    methods = []
    if args.oracle:
        methods.append(("oracle", None))
    for spec in args.checkpoint or []:
        name, _, path = spec.rpartition("=")
        methods.append((name or Path(path).stem, read_checkpoint(path)))
    out = Path(args.out)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    rep, image_rows = RunReport(), []
    for name, params in methods:
        reports = []
        for i, (rgb, cube) in enumerate(pairs):
            if params is None:
                pred = cube
            else:
                crop = min(cfg.crop, *rgb.shape[-2:])
                pred = sliding_window_predict(params, rgb, crop, min(cfg.stride, crop), cfg.np_dtype)
            r = report(pred, cube)
            reports.append(r)
            image_rows.append([name, i, fmt(r.ssim), fmt(r.sam_percent), fmt(r.psnr), fmt(r.l1)])
            for kind in ("sam", "l1"):
                write_map(out / "maps" / f"{name}_{i:03d}_{kind}", error_map(pred, cube, kind))
        rep.add(name, labeled, reports)
    rep.write_csv(out / "report.csv")
    _write_rows(out / "images.csv", ["method", "image", "ssim", "sam_pct", "psnr", "l1"], image_rows)
    print(rep.table())
    return 0


def cmd_sweep_maskrate(args) -> int:
    data = _load(args)
    base = _config(args)
    density = dataset_density(data)
    n_blocks = (-(-base.crop // base.block_size)) ** 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, by_rate = [], {r: [] for r in sorted(args.rates)}
    for seed in args.seeds:
        for rate in sorted(args.rates):
            r_min, r_max = centered_bounds(rate / 100.0, density)
            realized = mean_mask_rate(masking_ratios(density, r_min, r_max), n_blocks)
            cfg = _config(args, seed=seed, r_min=r_min, r_max=r_max, enable_sdm=True)
            result = train_loop(cfg, data)
            rep = _final_report(cfg, data, result)
            by_rate[rate].append(rep)
            rows.append([seed, rate, fmt(r_min), fmt(r_max), fmt(100 * realized),
                         fmt(rep.ssim), fmt(rep.sam_percent), fmt(rep.psnr), fmt(rep.l1)])
            log.info("seed %d rate %d%%: ssim=%.4f", seed, rate, rep.ssim)
    _write_rows(out / "sweep.csv",
                ["seed", "rate", "r_min", "r_max", "realized_rate", "ssim", "sam_pct", "psnr", "l1"], rows)
    summary = RunReport()
    for rate, reps in by_rate.items():
        summary.add(f"rate={rate}", len(data.target_labeled), reps)
    summary.write_csv(out / "summary.csv")
    print(summary.table())
    return 0


def cmd_ablate(args) -> int:
    data = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, summary = [], RunReport()
    for name, sdm, sera in ABLATIONS:
        reps = []
        for seed in args.seeds:
            cfg = _config(args, seed=seed, enable_sdm=sdm, enable_sera=sera)
            rep = _final_report(cfg, data, train_loop(cfg, data))
            reps.append(rep)
            rows.append([name, seed, fmt(rep.ssim), fmt(rep.sam_percent), fmt(rep.psnr), fmt(rep.l1)])
            log.info("%s seed %d: sam=%.5f", name, seed, rep.sam)
        summary.add(name, len(data.target_labeled), reps)
    _write_rows(out / "ablation.csv", ["method", "seed", "ssim", "sam_pct", "psnr", "l1"], rows)
    summary.write_csv(out / "report.csv")
    print(summary.table())
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectraladapt", description="Semi-supervised RGB to HSI adaptation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def train_flags(sp, seeds=False):
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--config", help="key=value lines overriding training defaults")
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--crop", type=int)
        sp.add_argument("--stride", type=int)
        sp.add_argument("--labeled-target", type=int, help="use the first N labeled target samples")
        if seeds:
            sp.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
        else:
            sp.add_argument("--seed", type=int)

    g = sub.add_parser("gen-data", help="generate the synthetic two-domain dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--counts", type=_int_list, default=[40, 3, 40, 8],
                   help="source,labeled_target,unlabeled_target,validation")
    g.add_argument("--size", type=int, default=64)
    g.set_defaults(func=cmd_gen_data)

    d = sub.add_parser("density", help="spectral density and masking ratios as CSV")
    d.add_argument("cubes", nargs="*")
    d.add_argument("--manifest")
    d.add_argument("--r-min", type=float, default=0.5)
    d.add_argument("--r-max", type=float, default=0.9)
    d.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    d.set_defaults(func=cmd_density)

    e = sub.add_parser("endmembers", help="extract an ATGP endmember bank as CSV")
    e.add_argument("cubes", nargs="*")
    e.add_argument("--manifest")
    e.add_argument("--k", type=int, default=16)
    e.add_argument("--n-sample", type=int, default=4096)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_endmembers)

    mp = sub.add_parser("mask-preview", help="write per-channel SDM masks as PGM")
    mp.add_argument("--manifest", required=True)
    mp.add_argument("--out", required=True)
    mp.add_argument("--index", type=int, default=0)
    mp.add_argument("--block-size", type=int, default=8)
    mp.add_argument("--r-min", type=float, default=0.5)
    mp.add_argument("--r-max", type=float, default=0.9)
    mp.add_argument("--seed", type=int, default=0)
    mp.set_defaults(func=cmd_mask_preview)

    t = sub.add_parser("train", help="train one configuration")
    train_flags(t)
    t.add_argument("--sdm", type=_on_off)
    t.add_argument("--sera", type=_on_off)
    t.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate checkpoints on target validation")
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--checkpoint", action="append", help="PATH or NAME=PATH; repeatable")
    ev.add_argument("--oracle", action="store_true", help="also score ground truth against itself")
    ev.add_argument("--config")
    ev.add_argument("--crop", type=int)
    ev.add_argument("--stride", type=int)
    ev.add_argument("--labeled-target", type=int, help="label count recorded in the report")
    ev.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    ev.set_defaults(func=cmd_eval)

    sw = sub.add_parser("sweep-maskrate", help="train across mean masking rates")
    train_flags(sw, seeds=True)
    sw.add_argument("--rates", type=_int_list, default=[10, 30, 50, 70, 90])
    sw.set_defaults(func=cmd_sweep_maskrate)

    ab = sub.add_parser("ablate", help="run the four SDM/SERA ablation configurations")
    train_flags(ab, seeds=True)
    ab.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    for name in ("labeled_target", "iterations", "crop", "stride"):
        v = getattr(args, name, None)
        if v is not None and v < (0 if name == "iterations" else 1):
            parser.error(f"--{name.replace('_', '-')} must be positive")
    if getattr(args, "rates", None) and any(not 0 <= r <= 100 for r in args.rates):
        parser.error("--rates must lie in [0, 100]")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (SpectralAdaptError, OSError, ValueError) as exc:
        print(f"spectraladapt: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
