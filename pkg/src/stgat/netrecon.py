"""Bilateral exposure reconstruction (RAS), LGD edge weights, and the macro
stress multiplier applied to them."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConvergenceError, DataError

log = logging.getLogger(__name__)

PRUNE_THRESHOLD = 0.001
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000
MARGINAL_MISMATCH_TOL = 1e-6

# fixed affine scaling for the macro vector: (centre, scale) per series
MACRO_REFERENCE = (
    (20.0, 8.0),    # vix
    (1.0, 1.0),     # 10y-2y spread
    (2.0, 2.0),     # fed funds
    (2.0, 3.0),     # gdp growth
    (6.0, 6.0),     # m2 growth
    (2.0, 1.0),     # credit spread
    (5.5, 2.0),     # unemployment
)


@dataclass
class ExposureMatrix:
    a: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    residual_history: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.a.shape[0]


@dataclass
class EdgeList:
    n: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.weight = np.asarray(self.weight, dtype=float)

    def __len__(self):
        return len(self.weight)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(s), int(d), float(w)) for s, d, w in zip(self.src, self.dst, self.weight)]

    @classmethod
    def empty(cls, n: int) -> "EdgeList":
        return cls(n, np.zeros(0), np.zeros(0), np.zeros(0))

    def density(self) -> float:
        return len(self) / (self.n * (self.n - 1)) if self.n > 1 else 0.0


def max_relative_violation(a: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> float:
    def rel(sums, target):
        diff = np.abs(sums - target)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(target > 0, diff / np.where(target > 0, target, 1.0), np.where(diff > 0, np.inf, 0.0))
        return float(r.max()) if r.size else 0.0

    return max(rel(a.sum(axis=1), rows), rel(a.sum(axis=0), cols))


def rescale_columns(rows, cols) -> np.ndarray:
    """Scale column marginals so their total matches the row total."""
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    total_r, total_c = rows.sum(), cols.sum()
    if total_c <= 0:
        return cols
    if total_r > 0 and abs(total_r - total_c) / total_r > MARGINAL_MISMATCH_TOL:
        log.warning("interbank totals differ (assets %.6g vs liabilities %.6g); rescaling liabilities",
                    total_r, total_c)
    return cols * (total_r / total_c)


def ras_reconstruct(row_marginals, col_marginals, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER) -> ExposureMatrix:
    """Maximum-entropy exposure matrix with zero diagonal via iterative proportional fitting.

    Starts from the independence prior r_i c_j / S off the diagonal and alternates
    row and column scaling until the largest relative marginal violation is
    within ``tol``.
    """
    rows = np.asarray(row_marginals, dtype=float)
    cols = np.asarray(col_marginals, dtype=float)
    n = rows.shape[0]
    if rows.ndim != 1 or cols.shape != rows.shape:
        raise DataError(f"marginal shapes differ: {rows.shape} vs {cols.shape}")
    if (rows < 0).any() or (cols < 0).any():
        raise DataError("marginals must be non-negative")
    total = rows.sum()
    if n < 2:
        if total == 0 and cols.sum() == 0:
            return ExposureMatrix(np.zeros((n, n)), rows, cols)
        raise DataError("need at least 2 institutions for an off-diagonal exposure matrix")
    if total == 0:
        if cols.sum() != 0:
            raise DataError("row marginals sum to zero but column marginals do not")
        return ExposureMatrix(np.zeros((n, n)), rows, cols)
    if abs(total - cols.sum()) / total > MARGINAL_MISMATCH_TOL:
        raise DataError(f"marginal totals differ: rows {total:.6g}, cols {cols.sum():.6g}; rescale first")

    a = np.outer(rows, cols) / total
    np.fill_diagonal(a, 0.0)
    history = []
    residual = max_relative_violation(a, rows, cols)
    history.append(residual)
    it = 0
    while residual > tol and it < max_iter:
        it += 1
        rs = a.sum(axis=1)
        a *= np.divide(rows, rs, out=np.zeros_like(rows), where=rs > 0)[:, None]
        cs = a.sum(axis=0)
        a *= np.divide(cols, cs, out=np.zeros_like(cols), where=cs > 0)[None, :]
        residual = max_relative_violation(a, rows, cols)
        history.append(residual)
    if residual > tol:
        raise ConvergenceError(
            f"RAS did not converge in {max_iter} iterations (residual {residual:.3e} > tol {tol:.1e})",
            residual=residual, iterations=it)
    return ExposureMatrix(a, rows, cols, it, residual, history)


def normalize_edges(mat: ExposureMatrix, tier1, threshold: float = PRUNE_THRESHOLD) -> EdgeList:
    """LGD weights a_ij / tier1_j; pairs below ``threshold`` are pruned."""
    tier1 = np.asarray(tier1, dtype=float)
    if tier1.shape != (mat.n,):
        raise DataError(f"tier1 has shape {tier1.shape}, expected ({mat.n},)")
    bad = np.flatnonzero(~(tier1 > 0))
    if bad.size:
        raise DataError(f"node {int(bad[0])} has non-positive tier1 capital {tier1[bad[0]]!r}")
    w = mat.a / tier1[None, :]
    keep = (w >= threshold) & (w > 0)
    np.fill_diagonal(keep, False)
    src, dst = np.nonzero(keep)
    return EdgeList(mat.n, src, dst, w[src, dst])


def normalize_macro(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    centre = np.array([c for c, _ in MACRO_REFERENCE])
    scale = np.array([s for _, s in MACRO_REFERENCE])
    return (z - centre) / scale


def macro_multiplier(z, params: dict) -> ad.Tensor:
    """sigmoid(MLP(z)) with a 7 -> 4 (tanh) -> 1 MLP; returns a scalar tensor.

    ``params`` holds tensors ``mac_w1`` (7, 4), ``mac_b1`` (4,), ``mac_w2`` (4, 1)
    and ``mac_b2`` (1,).
    """
    z = ad.as_tensor(np.asarray(z, dtype=float).reshape(1, -1))
    hidden = ad.tanh(z @ params["mac_w1"] + params["mac_b1"])
    return ad.sigmoid(hidden @ params["mac_w2"] + params["mac_b2"]).reshape(())


def condition_edges(edges: EdgeList, m: float) -> EdgeList:
    if not 0.0 < m <= 1.0:
        raise ValueError(f"multiplier must lie in (0, 1], got {m}")
    return EdgeList(edges.n, edges.src.copy(), edges.dst.copy(), edges.weight * m)


def permute_edges(edges: EdgeList, seed: int) -> EdgeList:
    """Same weights on uniformly drawn distinct off-diagonal pairs."""
    n, k = edges.n, len(edges)
    if n < 2:
        raise DataError("need at least 2 nodes to permute edges")
    slots = n * (n - 1)
    if k > slots:
        raise DataError(f"{k} edges cannot fit in {slots} off-diagonal pairs")
    rng = np.random.default_rng(seed)
    picks = rng.choice(slots, size=k, replace=False)
    src = picks // (n - 1)
    off = picks % (n - 1)
    dst = off + (off >= src)
    return EdgeList(n, src, dst, edges.weight.copy())


def dense_adjacency(edges: EdgeList) -> np.ndarray:
    """Matrix A with A[i, j] = weight of edge j -> i (i aggregates its in-neighbours)."""
    adj = np.zeros((edges.n, edges.n))
    adj[edges.dst, edges.src] = edges.weight
    return adj


def write_edges(path: str | Path, rows: list[tuple[str, list[str], EdgeList]]):
    """Dump ``quarter,src_cert,dst_cert,weight`` for each (quarter, certs, edges) triple."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quarter", "src_cert", "dst_cert", "weight"])
        for quarter, certs, edges in rows:
            for s, d, wt in zip(edges.src, edges.dst, edges.weight):
                w.writerow([quarter, certs[s], certs[d], repr(float(wt))])
