"""Mean and standard deviation summaries of metric reports over seeds or images."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import MetricReport

FIELDS = ("ssim", "sam", "psnr", "l1")


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value or identical values)."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to summarize")
    if np.all(v == v[0]):
        return float(v[0]), 0.0
    mean = float(v.mean())
    std = float(v.std(ddof=1)) if v.size > 1 and np.all(np.isfinite(v)) else 0.0
    return mean, std


@dataclass(frozen=True)
class RunRow:
    method: str
    labeled: int
    n: int
    stats: dict[str, tuple[float, float]]

    def mean(self, name: str) -> float:
        return self.stats[name][0]

    def std(self, name: str) -> float:
        return self.stats[name][1]


@dataclass
class RunReport:
    """One row per (method, labeled count); SAM is reported as 100 x radians."""

    rows: list[RunRow] = field(default_factory=list)

    def add(self, method: str, labeled: int, reports: list[MetricReport]) -> RunRow:
        if any(r.method == method and r.labeled == labeled for r in self.rows):
            raise ValueError(f"duplicate report row ({method}, {labeled})")
        stats = {}
        for name in FIELDS:
            vals = [getattr(r, name) for r in reports]
            if name == "sam":
                vals = [100.0 * v for v in vals]
            stats[name] = mean_std(vals)
        row = RunRow(method, labeled, len(reports), stats)
        self.rows.append(row)
        return row

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["method", "labeled", "n", "ssim_mean", "ssim_std", "sam_pct_mean", "sam_pct_std",
                 "psnr_mean", "psnr_std", "l1_mean", "l1_std"]
            )
            for r in self.rows:
                cells = [r.method, r.labeled, r.n]
                for name in FIELDS:
                    cells += [fmt(r.mean(name)), fmt(r.std(name))]
                w.writerow(cells)
        return path

    def table(self) -> str:
        lines = [f"{'method':<22} {'L_T':>3}  {'SSIM':>17}  {'SAM(%)':>15}  {'PSNR':>15}"]
        for r in self.rows:
            lines.append(
                f"{r.method:<22} {r.labeled:>3}  "
                f"{r.mean('ssim'):.4f} ± {r.std('ssim'):.4f}  "
                f"{r.mean('sam'):.3f} ± {r.std('sam'):.3f}  "
                f"{r.mean('psnr'):.2f} ± {r.std('psnr'):.2f}"
            )
        return "\n".join(lines)


def fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))
