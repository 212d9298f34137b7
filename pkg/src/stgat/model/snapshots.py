"""Per-quarter graph snapshots and the cross-quarter history index."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .. import netrecon
from ..errors import DataError
from ..netrecon import EdgeList
from ..panel import (InstitutionQuarter, MacroState, group_by_quarter, impute, label,
                     parse_quarter, standardize, top_by_assets)

log = logging.getLogger(__name__)

TOP_K = 200


@dataclass
class GraphSnapshot:
    """One quarter of the graph universe.

    ``edges`` holds the pruned LGD weights before macro conditioning; the
    learned multiplier is applied inside the forward pass.
    """

    quarter: str
    certs: list[str]
    x: np.ndarray
    edges: EdgeList
    z: np.ndarray
    labels: np.ndarray
    macro: MacroState | None = None
    recon: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.certs)

    @property
    def qnum(self) -> int:
        return parse_quarter(self.quarter)

    def row_of(self, cert: str) -> int | None:
        idx = self.__dict__.get("_row_index")
        if idx is None:
            idx = {c: i for i, c in enumerate(self.certs)}
            self.__dict__["_row_index"] = idx
        return idx.get(cert)


def build_snapshot(records: list[InstitutionQuarter], macro: MacroState, top_k: int = TOP_K,
                   tol: float = netrecon.DEFAULT_TOL, max_iter: int = netrecon.DEFAULT_MAX_ITER,
                   prune: float = netrecon.PRUNE_THRESHOLD) -> GraphSnapshot:
    quarter = records[0].quarter
    # labels come from raw ratios, before imputation can fill a missing trigger
    raw_labels = {r.cert: label(r).distressed for r in records}
    filled = impute(records)
    chosen = top_by_assets(filled, top_k)
    if len(chosen) < 2:
        raise DataError(f"quarter {quarter} has fewer than 2 institutions")
    for r in chosen:
        if r.tier1_capital <= 0:
            raise DataError(f"cert {r.cert} in {quarter} has non-positive tier1_capital")
    x = standardize(np.array([r.features for r in chosen], dtype=float))
    rows = np.array([r.interbank_assets for r in chosen])
    cols = netrecon.rescale_columns(rows, np.array([r.interbank_liabilities for r in chosen]))
    mat = netrecon.ras_reconstruct(rows, cols, tol=tol, max_iter=max_iter)
    edges = netrecon.normalize_edges(mat, [r.tier1_capital for r in chosen], threshold=prune)
    return GraphSnapshot(
        quarter=quarter,
        certs=[r.cert for r in chosen],
        x=x,
        edges=edges,
        z=netrecon.normalize_macro(macro.z),
        labels=np.array([raw_labels[r.cert] for r in chosen], dtype=bool),
        macro=macro,
        recon={"iterations": mat.iterations, "residual": mat.residual,
               "n_edges": len(edges), "density": edges.density()},
    )


def build_snapshots(records: list[InstitutionQuarter], macro: list[MacroState], top_k: int = TOP_K,
                    tol: float = netrecon.DEFAULT_TOL, max_iter: int = netrecon.DEFAULT_MAX_ITER,
                    prune: float = netrecon.PRUNE_THRESHOLD) -> list[GraphSnapshot]:
    by_q = group_by_quarter(records)
    macro_by_q = {parse_quarter(m.quarter): m for m in macro}
    snaps = []
    for quarter, recs in by_q.items():
        m = macro_by_q.get(parse_quarter(quarter))
        if m is None:
            raise DataError(f"no macro state for quarter {quarter}")
        snaps.append(build_snapshot(recs, m, top_k, tol, max_iter, prune))
    return snaps


def with_permuted_edges(snapshots: list[GraphSnapshot], seed: int) -> list[GraphSnapshot]:
    return [replace(s, edges=netrecon.permute_edges(s.edges, seed * 1000 + s.qnum % 1000))
            for s in snapshots]


@dataclass
class History:
    """Right-aligned history for every node of one target quarter.

    ``quarters[k]`` is the snapshot position for window slot k (or -1 when
    that calendar quarter is absent); ``rows[i, k]`` is the row of node i in
    that snapshot and ``mask[i, k]`` marks slots that belong to node i's
    contiguous membership run ending at the target quarter.
    """

    target: int
    quarters: list[int]
    rows: np.ndarray
    mask: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1).astype(int)


def build_history(snapshots: list[GraphSnapshot], target: int, window: int) -> History:
    pos_by_q = {s.qnum: p for p, s in enumerate(snapshots)}
    tq = snapshots[target].qnum
    quarters = [pos_by_q.get(tq - (window - 1 - k), -1) for k in range(window)]
    snap = snapshots[target]
    rows = np.zeros((snap.n, window), dtype=np.int64)
    mask = np.zeros((snap.n, window))
    for i, cert in enumerate(snap.certs):
        for k in range(window - 1, -1, -1):
            p = quarters[k]
            r = snapshots[p].row_of(cert) if p >= 0 else None
            if r is None:
                break
            rows[i, k] = r
            mask[i, k] = 1.0
    return History(target, quarters, rows, mask)
