"""Spectral endmember representation alignment.

An endmember bank is extracted from labeled pixel spectra with ATGP, kept on
the unit sphere, and used as a set of anchors: each predicted image's pooled,
normalized spectrum is pulled toward its most similar endmember, while the
bank itself drifts toward the features assigned to it by momentum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SpectralCube, cube_to_matrix, global_average_pool, l2_normalize_rows
from .errors import DimensionMismatch, EmptyInput, InsufficientRows, RankDeficient

RESIDUAL_FLOOR = 1e-10


@dataclass(frozen=True)
class EndmemberBank:
    endmembers: np.ndarray  # K x C, unit rows
    momentum: float = 0.9

    def __post_init__(self):
        e = np.array(self.endmembers, dtype=np.float64, copy=True)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ValueError(f"endmember bank must be K x C with K >= 1, got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("endmembers must be finite")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")
        e.flags.writeable = False
        object.__setattr__(self, "endmembers", e)

    @property
    def k(self) -> int:
        return self.endmembers.shape[0]

    @property
    def bands(self) -> int:
        return self.endmembers.shape[1]


@dataclass(frozen=True)
class Assignment:
    index: np.ndarray  # per-feature endmember index
    similarity: np.ndarray  # cosine with the assigned endmember


def sample_pixels(cubes: list[SpectralCube], n: int, seed=0) -> np.ndarray:
    """Draw ``n`` pixel spectra with replacement from the pooled cubes, unit-normalized."""
    if not cubes or n < 1:
        raise EmptyInput("need at least one cube and n >= 1")
    pool = np.concatenate([cube_to_matrix(c).astype(np.float64) for c in cubes], axis=0)
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, pool.shape[0], size=n)
    return l2_normalize_rows(pool[rows])


def atgp_indices(s, k: int) -> list[int]:
    """Row indices chosen by ATGP, in selection order.

    The residual against the span of the selected rows is maintained with an
    incrementally grown orthonormal basis (Gram-Schmidt, re-orthogonalized
    once), which avoids inverting the Gram matrix of the selected rows.
    """
    s = np.asarray(s, dtype=np.float64)
    n, c = s.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise InsufficientRows(f"{n} rows cannot supply {k} endmembers")
    if k > c:
        raise RankDeficient(f"cannot select {k} independent endmembers in {c} dimensions")
    residual = s.copy()
    chosen: list[int] = []
    for step in range(k):
        norms = np.linalg.norm(residual, axis=1)
        best = int(np.argmax(norms))  # first maximum = lowest index
        if norms[best] < RESIDUAL_FLOOR:
            raise RankDeficient(
                f"residual subspace collapsed after {step} of {k} selections"
            )
        chosen.append(best)
        q = residual[best] / norms[best]
        residual -= np.outer(residual @ q, q)
        # second pass keeps the basis orthogonal to working precision
        residual -= np.outer(residual @ q, q)
    return chosen


def atgp(s, k: int) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return s[atgp_indices(s, k)].copy()


def init_bank(
    labeled_cubes: list[SpectralCube],
    k: int = 16,
    n_sample: int = 4096,
    m_end: float = 0.9,
    seed=0,
) -> EndmemberBank:
    sample = sample_pixels(labeled_cubes, n_sample, seed)
    return EndmemberBank(l2_normalize_rows(atgp(sample, k)), momentum=m_end)


def spectral_feature(pred) -> np.ndarray:
    return l2_normalize_rows(global_average_pool(pred))


def assign(features, bank: EndmemberBank) -> Assignment:
    z = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if z.shape[1] != bank.bands:
        raise DimensionMismatch(f"feature dim {z.shape[1]} != bank dim {bank.bands}")
    sims = z @ bank.endmembers.T
    idx = np.argmax(sims, axis=1)
    return Assignment(index=idx, similarity=sims[np.arange(z.shape[0]), idx])


def sera_loss(features, bank: EndmemberBank) -> tuple[float, np.ndarray, Assignment]:
    """Mean (1 - max cosine) over the batch, its gradient w.r.t. each feature, and the assignment.

    The assigned endmember is held constant, so the gradient of feature i is
    ``-e[a_i] / batch``.
    """
    a = assign(features, bank)
    b = a.index.size
    loss = float(np.mean(1.0 - a.similarity))
    grad = -bank.endmembers[a.index] / b
    return loss, grad, a


def momentum_update(bank: EndmemberBank, features, assignment: Assignment) -> EndmemberBank:
    z = np.atleast_2d(np.asarray(features, dtype=np.float64))
    e = bank.endmembers.copy()
    m = bank.momentum
    for k in np.unique(assignment.index):
        zbar = z[assignment.index == k].mean(axis=0)
        e[k] = l2_normalize_rows(m * e[k] + (1.0 - m) * zbar)
    return EndmemberBank(e, momentum=m)


def feature_backward(pooled: np.ndarray, feature_grad: np.ndarray) -> np.ndarray:
    """Pull a gradient on ``Norm(v)`` back to the pooled vector ``v`` (rows are samples)."""
    pooled = np.atleast_2d(pooled)
    feature_grad = np.atleast_2d(feature_grad)
    norms = np.linalg.norm(pooled, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    z = pooled / safe
    proj = feature_grad - z * np.sum(z * feature_grad, axis=1, keepdims=True)
    return np.where(norms > 0, proj / safe, 0.0)


def sera_with_grad(pred, bank: EndmemberBank):
    """SERA loss of a (B, C, H, W) prediction batch and its gradient w.r.t. every pixel.

    Also returns the features and assignment so the caller can update the bank.
    """
    pred = np.asarray(pred, dtype=np.float64)
    n_pix = pred.shape[2] * pred.shape[3]
    pooled = pred.reshape(pred.shape[0], pred.shape[1], -1).mean(axis=2)
    features = l2_normalize_rows(pooled)
    loss, gz, assignment = sera_loss(features, bank)
    gpool = feature_backward(pooled, gz)
    grad = np.broadcast_to(gpool[:, :, None, None] / n_pix, pred.shape)
    return loss, grad, features, assignment
