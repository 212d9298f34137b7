"""Institution-quarter panel: ingestion, distress labels, imputation,
standardization, and a synthetic generator with planted deterioration."""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

FEATURES = (
    "tier1_capital_ratio",
    "total_capital_ratio",
    "leverage_ratio",
    "npl_ratio",
    "provision_coverage_ratio",
    "cre_concentration_ratio",
    "liquidity_stress_ratio",
    "uninsured_deposit_share",
    "wholesale_funding_ratio",
    "loan_to_deposit_ratio",
    "roa",
    "net_interest_margin",
    "fair_value_loss_ratio",
)
N_FEATURES = len(FEATURES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURES)}

MACRO_FIELDS = (
    "vix",
    "yield_spread_10y2y",
    "fed_funds_rate",
    "gdp_growth",
    "m2_growth",
    "credit_spread",
    "unemployment_rate",
)

PANEL_HEADER = ("cert", "quarter", *FEATURES, "total_assets", "interbank_assets",
                "interbank_liabilities", "tier1_capital", "failed_within_4q")
MACRO_HEADER = ("quarter", *MACRO_FIELDS)

TIER1_FLOOR = 6.0
NPL_CEILING = 5.0
ROA_FLOOR = -1.0

_QUARTER_RE = re.compile(r"^(\d{4})Q([1-4])$")


def parse_quarter(tag: str) -> int:
    """'2023Q1' -> absolute quarter number (year*4 + q-1)."""
    m = _QUARTER_RE.match(tag.strip())
    if not m:
        raise DataError(f"bad quarter tag {tag!r}, expected YYYYQn")
    return int(m.group(1)) * 4 + int(m.group(2)) - 1


def format_quarter(n: int) -> str:
    return f"{n // 4}Q{n % 4 + 1}"


@dataclass(frozen=True)
class InstitutionQuarter:
    cert: str
    quarter: str
    features: tuple  # 13 floats, NaN = missing
    total_assets: float
    interbank_assets: float
    interbank_liabilities: float
    tier1_capital: float
    failed_within_4q: bool = False

    def feature(self, name: str) -> float:
        return self.features[FEATURE_INDEX[name]]


@dataclass(frozen=True)
class MacroState:
    quarter: str
    z: tuple  # 7 floats in MACRO_FIELDS order


class Trigger(str, Enum):
    FAILED = "FAILED"
    TIER1_LT_6 = "TIER1_LT_6"
    NPL_GT_5 = "NPL_GT_5"
    ROA_LT_NEG1 = "ROA_LT_NEG1"


@dataclass(frozen=True)
class DistressLabel:
    triggers: frozenset = frozenset()

    @property
    def distressed(self) -> bool:
        return bool(self.triggers)


# ------------------------------------------------------------------ ingestion


def _parse_float(text: str, row: int, col: str) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"row {row}, column {col}: not a number: {text!r}") from None


def ingest_panel(path: str | Path) -> list[InstitutionQuarter]:
    """Read a panel CSV. Rows with non-positive total_assets are dropped (counted in a warning)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"panel file not found: {path}")
    records = []
    seen = set()
    rejected = 0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PANEL_HEADER:
            raise DataError(f"{path}: header does not match panel schema")
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PANEL_HEADER):
                raise DataError(f"row {rownum}: expected {len(PANEL_HEADER)} columns, got {len(row)}")
            cert = row[0].strip()
            if not cert:
                raise DataError(f"row {rownum}, column cert: empty")
            try:
                parse_quarter(row[1])
            except DataError:
                raise DataError(f"row {rownum}, column quarter: bad tag {row[1]!r}") from None
            quarter = row[1].strip()
            feats = tuple(_parse_float(row[2 + i], rownum, name) for i, name in enumerate(FEATURES))
            base = 2 + N_FEATURES
            ta, ib_a, ib_l, t1 = (_parse_float(row[base + k], rownum, PANEL_HEADER[base + k]) for k in range(4))
            for k, value in enumerate((ta, ib_a, ib_l, t1)):
                if math.isnan(value):
                    raise DataError(f"row {rownum}, column {PANEL_HEADER[base + k]}: missing")
            failed_txt = row[base + 4].strip()
            if failed_txt not in ("", "0", "1"):
                raise DataError(f"row {rownum}, column failed_within_4q: expected 0/1, got {failed_txt!r}")
            if ib_a < 0 or ib_l < 0:
                raise DataError(f"row {rownum}, column interbank_assets/liabilities: negative")
            if (cert, quarter) in seen:
                raise DataError(f"row {rownum}: duplicate (cert, quarter) = ({cert}, {quarter})")
            seen.add((cert, quarter))
            if ta <= 0:
                rejected += 1
                continue
            records.append(InstitutionQuarter(cert, quarter, feats, ta, ib_a, ib_l, t1, failed_txt == "1"))
    if rejected:
        log.warning("rejected %d rows with non-positive total_assets", rejected)
    return records


def ingest_macro(path: str | Path) -> list[MacroState]:
    """Read the macro CSV, forward-filling gaps from the previous quarter."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"macro file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MACRO_HEADER:
            raise DataError(f"{path}: header does not match macro schema")
        rows = [(n, r) for n, r in enumerate(reader, start=2) if r]
    rows.sort(key=lambda nr: parse_quarter(nr[1][0]))
    states = []
    prev = None
    for rownum, row in rows:
        if len(row) != len(MACRO_HEADER):
            raise DataError(f"row {rownum}: expected {len(MACRO_HEADER)} columns, got {len(row)}")
        vals = [_parse_float(row[1 + i], rownum, name) for i, name in enumerate(MACRO_FIELDS)]
        for i, v in enumerate(vals):
            if math.isnan(v):
                if prev is None:
                    raise DataError(f"row {rownum}, column {MACRO_FIELDS[i]}: missing at series start")
                vals[i] = prev[i]
        if prev is not None and parse_quarter(row[0]) == parse_quarter(states[-1].quarter):
            raise DataError(f"row {rownum}: duplicate quarter {row[0]}")
        states.append(MacroState(row[0].strip(), tuple(vals)))
        prev = vals
    return states


def write_panel(path: str | Path, records: list[InstitutionQuarter]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_HEADER)
        for r in records:
            feats = ["" if math.isnan(v) else repr(v) for v in r.features]
            w.writerow([r.cert, r.quarter, *feats, repr(r.total_assets), repr(r.interbank_assets),
                        repr(r.interbank_liabilities), repr(r.tier1_capital), int(r.failed_within_4q)])


def write_macro(path: str | Path, states: list[MacroState]):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MACRO_HEADER)
        for s in states:
            w.writerow([s.quarter, *(repr(v) for v in s.z)])


# --------------------------------------------------------------------- labels


def label(rec: InstitutionQuarter) -> DistressLabel:
    # NaN comparisons are False, so a missing component cannot fire
    triggers = set()
    if rec.failed_within_4q:
        triggers.add(Trigger.FAILED)
    if rec.feature("tier1_capital_ratio") < TIER1_FLOOR:
        triggers.add(Trigger.TIER1_LT_6)
    if rec.feature("npl_ratio") > NPL_CEILING:
        triggers.add(Trigger.NPL_GT_5)
    if rec.feature("roa") < ROA_FLOOR:
        triggers.add(Trigger.ROA_LT_NEG1)
    return DistressLabel(frozenset(triggers))


# ------------------------------------------------------- impute / standardize


def group_by_quarter(records: list[InstitutionQuarter]) -> dict[str, list[InstitutionQuarter]]:
    out: dict[str, list[InstitutionQuarter]] = {}
    for r in records:
        out.setdefault(r.quarter, []).append(r)
    return dict(sorted(out.items(), key=lambda kv: parse_quarter(kv[0])))


def size_deciles(records: list[InstitutionQuarter]) -> np.ndarray:
    """Decile 0..9 per record by total_assets rank; ties broken by cert."""
    order = sorted(range(len(records)), key=lambda i: (records[i].total_assets, records[i].cert))
    n = len(records)
    dec = np.empty(n, dtype=int)
    for rank, i in enumerate(order):
        dec[i] = min(rank * 10 // n, 9)
    return dec


def impute(records: list[InstitutionQuarter]) -> list[InstitutionQuarter]:
    """Fill missing features with the median of same-quarter, same-size-decile peers.

    Falls back to the quarter-wide median when the whole decile is missing.
    """
    if not records:
        return []
    quarters = {r.quarter for r in records}
    if len(quarters) != 1:
        raise DataError(f"impute expects a single quarter, got {sorted(quarters)}")
    X = np.array([r.features for r in records], dtype=float)
    missing = np.isnan(X)
    if not missing.any():
        return list(records)
    dec = size_deciles(records)
    filled = X.copy()
    for f in np.flatnonzero(missing.any(axis=0)):
        col = X[:, f]
        present = ~np.isnan(col)
        if not present.any():
            raise DataError(f"feature {FEATURES[f]} missing for all of quarter {records[0].quarter}")
        fallback = float(np.median(col[present]))
        for d in np.unique(dec[~present]):
            peers = col[(dec == d) & present]
            fill = float(np.median(peers)) if peers.size else fallback
            filled[(dec == d) & ~present, f] = fill
    return [replace(r, features=tuple(filled[i])) if missing[i].any() else r
            for i, r in enumerate(records)]


def standardize(X: np.ndarray) -> np.ndarray:
    """Column z-scores with population variance; constant columns map to 0.

    Statistics ignore NaN entries, which pass through unchanged.
    """
    X = np.asarray(X, dtype=float)
    mu = np.nanmean(X, axis=0)
    sd = np.sqrt(np.nanmean((X - mu) ** 2, axis=0))
    # relative guard: a column is constant if its spread is at rounding level
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mu))
    out = (X - mu) / np.where(const, 1.0, sd)
    out[:, const] = np.where(np.isnan(X[:, const]), np.nan, 0.0)
    return out


def standardize_quarter(records: list[InstitutionQuarter], quarter: str) -> np.ndarray:
    rows = [r for r in records if r.quarter == quarter]
    if len(rows) < 2:
        raise DataError(f"quarter {quarter} has {len(rows)} records; need at least 2 to standardize")
    return standardize(np.array([r.features for r in rows], dtype=float))


def top_by_assets(records: list[InstitutionQuarter], k: int = 200) -> list[InstitutionQuarter]:
    return sorted(records, key=lambda r: (-r.total_assets, r.cert))[:k]


# ------------------------------------------------------------------ synthetic


@dataclass
class SynthConfig:
    n_institutions: int = 200
    n_quarters: int = 20
    distress_rate: float = 0.09
    start_quarter: str = "2010Q1"
    # latent health AR(1)
    health_phi: float = 0.7
    health_sigma: float = 0.3
    # episode shape
    decline_quarters: tuple = (3, 5)
    bottom_quarters: tuple = (1, 3)
    recovery_quarters: tuple = (3, 5)
    failure_share: float = 0.35
    macro_noise: float = 0.05
    extra: dict = field(default_factory=dict)


# per-feature (mean, between-bank sd, within-bank sd) for the non-driver ratios
_NOISE_FEATURES = {
    "tier1_capital_ratio": (13.0, 1.5, 0.3),
    "total_capital_ratio": (14.5, 2.0, 0.3),
    "leverage_ratio": (9.5, 1.2, 0.25),
    "provision_coverage_ratio": (120.0, 25.0, 6.0),
    "cre_concentration_ratio": (180.0, 60.0, 8.0),
    "liquidity_stress_ratio": (18.0, 5.0, 1.5),
    "uninsured_deposit_share": (35.0, 10.0, 2.0),
    "wholesale_funding_ratio": (12.0, 4.0, 1.0),
    "loan_to_deposit_ratio": (80.0, 10.0, 2.0),
    "net_interest_margin": (3.2, 0.5, 0.1),
    "fair_value_loss_ratio": (1.5, 0.8, 0.3),
}

_MACRO_LEVELS = (18.0, 1.2, 1.5, 2.2, 5.5, 1.9, 5.0)

ROA_LOADING = 0.45
NPL_LOADING = 0.75


def _episode_path(rng: np.random.Generator, cfg: SynthConfig, depth: float) -> np.ndarray:
    """Health offset over decline, bottom, and recovery phases (non-positive)."""
    d = int(rng.integers(cfg.decline_quarters[0], cfg.decline_quarters[1] + 1))
    b = int(rng.integers(cfg.bottom_quarters[0], cfg.bottom_quarters[1] + 1))
    r = int(rng.integers(cfg.recovery_quarters[0], cfg.recovery_quarters[1] + 1))
    down = -depth * np.arange(1, d + 1) / d
    bottom = np.full(b, -depth)
    up = -depth * (1.0 - np.arange(1, r + 1) / (r + 1))
    return np.concatenate([down, bottom, up])


IB_CONCENTRATION_CAP = 0.8


def _cap_concentration(a: np.ndarray, l: np.ndarray, cap: float = IB_CONCENTRATION_CAP):
    """Blend each quarter's interbank books toward the mean until no bank's
    assets plus liabilities exceed ``cap`` of the total.

    A bank holding more than that leaves too little counterparty volume for a
    zero-diagonal exposure matrix.  Blending toward the mean keeps both sums.
    """
    a, l = a.copy(), l.copy()
    n = a.shape[0]
    for t in range(a.shape[1]):
        S = a[:, t].sum()
        v = a[:, t] + l[:, t]
        target = max(cap, 2.0 / n) * S
        if v.max() <= target:
            continue
        m = 2.0 * S / n
        lam = float(((v - target) / (v - m))[v > target].max())
        a[:, t] = (1 - lam) * a[:, t] + lam * S / n
        l[:, t] = (1 - lam) * l[:, t] + lam * l[:, t].sum() / n
    return a, l


def synthesize_panel(cfg: SynthConfig, seed: int) -> tuple[list[InstitutionQuarter], list[MacroState]]:
    """Generate a panel whose distress comes from planted multi-quarter health declines.

    Each bank follows a latent AR(1) health process. Deterioration episodes
    add a declining offset over several quarters that pushes roa below -1%
    and/or npl above 5%. The deepest episodes end in failure: the bank is
    resolved, its ratios snap back to normal, and the failure flag keeps it
    labeled distressed for four quarters, which only its history reveals.
    Episodes are added until the realized distress rate reaches the target.
    """
    if not 0.0 < cfg.distress_rate < 0.5:
        raise DataError(f"infeasible distress rate {cfg.distress_rate}; must lie in (0, 0.5)")
    if cfg.n_institutions < 2 or cfg.n_quarters < 1:
        raise DataError("need at least 2 institutions and 1 quarter")
    rng = np.random.default_rng(seed)
    N, T = cfg.n_institutions, cfg.n_quarters
    q0 = parse_quarter(cfg.start_quarter)
    tags = [format_quarter(q0 + t) for t in range(T)]
    certs = [f"{10000 + 37 * i:05d}" for i in range(N)]

    # balance sheet scale
    log_ta = rng.normal(np.log(5e9), 2.0, N)
    growth = rng.normal(0.008, 0.004, N)
    ta = np.exp(log_ta[:, None] + growth[:, None] * np.arange(T)[None, :]
                + rng.normal(0, 0.01, (N, T)))
    ib_a_share = rng.uniform(0.02, 0.06, (N, 1)) + rng.normal(0, 0.002, (N, T))
    ib_l_share = rng.uniform(0.02, 0.06, (N, 1)) + rng.normal(0, 0.002, (N, T))
    ib_assets = ta * np.clip(ib_a_share, 0.02, 0.06)
    ib_liabs = ta * np.clip(ib_l_share, 0.02, 0.06)
    ib_liabs *= ib_assets.sum(axis=0, keepdims=True) / ib_liabs.sum(axis=0, keepdims=True)
    ib_assets, ib_liabs = _cap_concentration(ib_assets, ib_liabs)

    # latent health
    eps = rng.normal(0, cfg.health_sigma, (N, T))
    health = np.empty((N, T))
    health[:, 0] = eps[:, 0] / math.sqrt(1 - cfg.health_phi ** 2)
    for t in range(1, T):
        health[:, t] = cfg.health_phi * health[:, t - 1] + eps[:, t]

    roa_base = rng.normal(1.05, 0.22, N)
    npl_base = np.exp(rng.normal(np.log(1.1), 0.35, N))
    roa_noise = rng.normal(0, 0.08, (N, T))
    npl_noise = rng.normal(0, 0.15, (N, T))

    noise_feats = {}
    for name, (mu, between, within) in _NOISE_FEATURES.items():
        noise_feats[name] = rng.normal(mu, between, (N, 1)) + rng.normal(0, within, (N, T))

    offset = np.zeros((N, T))
    # asset-quality vs earnings emphasis per episode
    roa_tilt = np.ones((N, T))
    npl_tilt = np.ones((N, T))
    failed = np.zeros((N, T), dtype=bool)
    busy = np.zeros((N, T), dtype=bool)

    def ratios():
        h = health + offset
        roa = roa_base[:, None] + ROA_LOADING * h * roa_tilt + roa_noise
        npl = np.maximum(npl_base[:, None] - NPL_LOADING * h * npl_tilt + npl_noise, 0.05)
        return roa, npl

    def distress_rate():
        roa, npl = ratios()
        tier1 = noise_feats["tier1_capital_ratio"]
        d = failed | (roa < ROA_FLOOR) | (npl > NPL_CEILING) | (tier1 < TIER1_FLOOR)
        return d.mean()

    attempts = 0
    while distress_rate() < cfg.distress_rate:
        attempts += 1
        if attempts > 50 * N * T:
            raise DataError("could not reach the target distress rate")
        bank = int(rng.integers(N))
        fails = rng.random() < cfg.failure_share
        depth = rng.uniform(7.5, 9.5) if fails else rng.uniform(5.0, 7.0)
        path = _episode_path(rng, cfg, depth)
        start = int(rng.integers(-10, T))
        if fails:
            # resolved at the last bottom quarter; ratios snap back afterwards
            path = path[: int(np.flatnonzero(path == path.min())[-1]) + 1]
            end = start + len(path) + 4
        else:
            end = start + len(path)
        # one episode at a time per bank, with a quiet gap on either side
        lo, hi = max(start - 2, 0), min(end + 2, T)
        if lo >= hi or busy[bank, lo:hi].any():
            continue
        tilt = rng.choice([0.6, 1.0, 1.4])
        for t in range(max(start, 0), min(start + len(path), T)):
            offset[bank, t] = path[t - start]
            roa_tilt[bank, t] = tilt
            npl_tilt[bank, t] = 2.0 - tilt
        if fails:
            fail_at = start + len(path) - 1
            failed[bank, max(fail_at, 0):max(min(fail_at + 4, T), 0)] = True
        busy[bank, lo:hi] = True

    roa, npl = ratios()
    records = []
    for i in range(N):
        for t in range(T):
            feats = [0.0] * N_FEATURES
            for name, arr in noise_feats.items():
                feats[FEATURE_INDEX[name]] = float(arr[i, t])
            feats[FEATURE_INDEX["roa"]] = float(roa[i, t])
            feats[FEATURE_INDEX["npl_ratio"]] = float(npl[i, t])
            tier1_cap = float(ta[i, t] * feats[FEATURE_INDEX["leverage_ratio"]] / 100.0)
            records.append(InstitutionQuarter(
                cert=certs[i], quarter=tags[t], features=tuple(feats),
                total_assets=float(ta[i, t]), interbank_assets=float(ib_assets[i, t]),
                interbank_liabilities=float(ib_liabs[i, t]), tier1_capital=tier1_cap,
                failed_within_4q=bool(failed[i, t])))

    macro = []
    level = np.array(_MACRO_LEVELS)
    state = np.zeros(len(level))
    for t in range(T):
        state = 0.8 * state + rng.normal(0, cfg.macro_noise, len(level))
        macro.append(MacroState(tags[t], tuple(float(v) for v in level * (1 + state))))
    return records, macro
