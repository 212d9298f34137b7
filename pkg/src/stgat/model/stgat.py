"""The ST-GAT network: parameters, the per-quarter forward pass, and prediction."""

from __future__ import annotations

import hashlib
import zlib
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..netrecon import dense_adjacency, macro_multiplier
from ..panel import MACRO_FIELDS, N_FEATURES
from . import layers
from .snapshots import GraphSnapshot, History, build_history, with_permuted_edges

SEEDS = (42, 123, 456, 789, 1024)


class Ablation(str, Enum):
    FULL = "FULL"
    NO_MACRO = "NO_MACRO"
    NO_TEMPORAL = "NO_TEMPORAL"
    NO_ATTENTION = "NO_ATTENTION"
    PERM_EDGE = "PERM_EDGE"


@dataclass(frozen=True)
class ModelConfig:
    n_features: int = N_FEATURES
    macro_dim: int = len(MACRO_FIELDS)
    heads: int = 8
    head_dim: int = 8
    lstm_hidden: int = 64
    lstm_layers: int = 2
    attn_dim: int = 64
    head_hidden: int = 64
    macro_hidden: int = 4

    @property
    def spatial_dim(self) -> int:
        return self.heads * self.head_dim


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    patience: int = 8
    max_epochs: int = 200
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dropout: float = 0.3
    history_window: int = 8
    seeds: tuple = SEEDS
    ablation: Ablation = Ablation.FULL

    def __post_init__(self):
        self.ablation = Ablation(self.ablation)
        self.seeds = tuple(self.seeds)
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.history_window < 1:
            raise ValueError("history_window must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablation"] = self.ablation.value
        d["seeds"] = list(self.seeds)
        return d


def _shapes(cfg: ModelConfig, ablation: Ablation) -> dict[str, tuple[tuple, int]]:
    """name -> (shape, fan_in) for every learnable tensor of one variant."""
    K, dh, H = cfg.heads, cfg.head_dim, cfg.lstm_hidden
    s = {
        "gat1.W": ((cfg.n_features, K * dh), cfg.n_features),
        "gat1.att_self": ((K, dh), dh),
        "gat1.att_nbr": ((K, dh), dh),
        "gat2.W": ((K * dh, K * dh), K * dh),
        "gat2.att_self": ((K, dh), dh),
        "gat2.att_nbr": ((K, dh), dh),
    }
    if ablation != Ablation.NO_MACRO:
        s.update({
            "mac_w1": ((cfg.macro_dim, cfg.macro_hidden), cfg.macro_dim),
            "mac_b1": ((cfg.macro_hidden,), cfg.macro_dim),
            "mac_w2": ((cfg.macro_hidden, 1), cfg.macro_hidden),
            "mac_b2": ((1,), cfg.macro_hidden),
        })
    if ablation == Ablation.NO_TEMPORAL:
        context_dim = cfg.spatial_dim
    else:
        context_dim = 2 * H
        for layer in range(cfg.lstm_layers):
            in_dim = cfg.spatial_dim if layer == 0 else 2 * H
            for d in ("fwd", "bwd"):
                p = f"lstm.l{layer}.{d}"
                s[f"{p}.w_ih"] = ((in_dim, 4 * H), H)
                s[f"{p}.w_hh"] = ((H, 4 * H), H)
                s[f"{p}.b"] = ((4 * H,), H)
        if ablation != Ablation.NO_ATTENTION:
            s["attn.W_a"] = ((2 * H, cfg.attn_dim), 2 * H)
            s["attn.b_a"] = ((cfg.attn_dim,), 2 * H)
            s["attn.v"] = ((cfg.attn_dim, 1), cfg.attn_dim)
    head_in = context_dim + cfg.n_features + cfg.macro_dim
    s.update({
        "head.w1": ((head_in, cfg.head_hidden), head_in),
        "head.b1": ((cfg.head_hidden,), head_in),
        "head.w2": ((cfg.head_hidden, 1), cfg.head_hidden),
        "head.b2": ((1,), cfg.head_hidden),
    })
    return s


class ModelParams:
    """Named learnable tensors plus batchnorm running statistics."""

    def __init__(self, tensors: dict[str, Tensor], bn: ad.BatchNormState, cfg: ModelConfig,
                 ablation: Ablation, seed: int):
        self.tensors = tensors
        self.bn = bn
        self.cfg = cfg
        self.ablation = Ablation(ablation)
        self.seed = seed

    @classmethod
    def init(cls, cfg: ModelConfig, ablation: Ablation | str, seed: int) -> "ModelParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), each tensor on its own stream keyed by name.

        Tensors shared between ablation variants therefore start identical.
        """
        ablation = Ablation(ablation)
        tensors = {}
        for name, (shape, fan_in) in _shapes(cfg, ablation).items():
            rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True, name=name)
        tensors["head.bn_gamma"] = Tensor(np.ones(cfg.head_hidden), requires_grad=True, name="head.bn_gamma")
        tensors["head.bn_beta"] = Tensor(np.zeros(cfg.head_hidden), requires_grad=True, name="head.bn_beta")
        return cls(tensors, ad.BatchNormState(cfg.head_hidden), cfg, ablation, seed)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def parameters(self) -> list[Tensor]:
        return [self.tensors[k] for k in sorted(self.tensors)]

    def state(self) -> dict[str, np.ndarray]:
        st = {k: t.data.copy() for k, t in self.tensors.items()}
        st["buffer.bn.running_mean"] = self.bn.running_mean.copy()
        st["buffer.bn.running_var"] = self.bn.running_var.copy()
        return st

    def load_state(self, st: dict[str, np.ndarray]):
        for k, t in self.tensors.items():
            if st[k].shape != t.shape:
                raise ValueError(f"{k}: checkpoint shape {st[k].shape} != {t.shape}")
            t.data = np.array(st[k], dtype=float)
        self.bn.running_mean = np.array(st["buffer.bn.running_mean"], dtype=float)
        self.bn.running_var = np.array(st["buffer.bn.running_var"], dtype=float)

    def digest(self) -> str:
        """Content hash of all weights and buffers; identifies a trained run."""
        h = hashlib.sha256()
        for k, v in sorted(self.state().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]

    def meta(self) -> dict:
        return {"ablation": self.ablation.value, "seed": self.seed, "model_config": asdict(self.cfg)}

    def save(self, path, extra: dict | None = None):
        ad.save_tensors(path, self.state(), {**self.meta(), **(extra or {})})

    @classmethod
    def load(cls, path) -> "ModelParams":
        st, meta = ad.load_tensors(path)
        cfg = ModelConfig(**meta["model_config"])
        params = cls.init(cfg, meta["ablation"], meta["seed"])
        params.load_state(st)
        return params


@dataclass
class QuarterOutput:
    scores: Tensor
    beta: np.ndarray | None
    history: History | None
    spatial_attention: list[np.ndarray]
    multiplier: float | None


class STGAT:
    """Binds parameters to a snapshot sequence and runs per-quarter forward passes."""

    def __init__(self, params: ModelParams, snapshots: list[GraphSnapshot], window: int = 8):
        self.params = params
        self.window = window
        if params.ablation == Ablation.PERM_EDGE:
            snapshots = with_permuted_edges(snapshots, params.seed)
        self.snapshots = snapshots
        self._adj = [dense_adjacency(s.edges) for s in snapshots]
        self._mask = [(a > 0) | np.eye(s.n, dtype=bool) for a, s in zip(self._adj, snapshots)]
        self._history: dict[int, History] = {}
        self.position = {s.quarter: p for p, s in enumerate(snapshots)}

    def history(self, p: int) -> History:
        if p not in self._history:
            self._history[p] = build_history(self.snapshots, p, self.window)
        return self._history[p]

    def adjacency(self, p: int) -> tuple[Tensor, float | None]:
        base = self._adj[p]
        eye = np.eye(base.shape[0])
        if self.params.ablation == Ablation.NO_MACRO:
            return Tensor(base + eye), None
        m = macro_multiplier(self.snapshots[p].z, self.params.tensors)
        return m * Tensor(base) + Tensor(eye), float(m.data)

    def spatial(self, p: int, x: np.ndarray | None = None):
        adj, m = self.adjacency(p)
        h, attn = layers.spatial_encode(self.snapshots[p].x if x is None else x, adj, self._mask[p],
                                        self.params.tensors)
        return h, attn, m

    def forward(self, p: int, train: bool = False, dropout: float = 0.3, key=(0,),
                features: dict[int, np.ndarray] | None = None) -> QuarterOutput:
        """Risk scores for every node of snapshot ``p``.

        ``features`` optionally overrides the node feature matrix of any
        snapshot (used by permutation importance).
        """
        features = features or {}
        snap = self.snapshots[p]
        params = self.params
        if params.ablation == Ablation.NO_TEMPORAL:
            h, attn, m = self.spatial(p, features.get(p))
            context, beta, hist = h, None, None
        else:
            hist = self.history(p)
            present = sorted({q for q in hist.quarters if q >= 0})
            offsets, blocks, attn, m = {}, [], [], None
            total = 0
            for q in present:
                h, a, mq = self.spatial(q, features.get(q))
                offsets[q] = total
                total += h.shape[0]
                blocks.append(h)
                if q == p:
                    attn, m = a, mq
            stacked = ad.concat(blocks, axis=0)
            slot_offset = np.array([offsets.get(q, 0) for q in hist.quarters], dtype=np.int64)
            flat = np.where(hist.mask > 0, hist.rows + slot_offset[None, :], 0)
            seq = ad.take_rows(stacked, flat.ravel()).reshape(snap.n, self.window, -1)
            use_attn = params.ablation != Ablation.NO_ATTENTION
            context, beta_t = layers.temporal_encode(seq, hist.mask, params.tensors, use_attn)
            beta = None if beta_t is None else beta_t.data
        x_now = features.get(p, snap.x)
        z = np.broadcast_to(snap.z, (snap.n, len(snap.z)))
        feats = ad.concat([context, ad.as_tensor(x_now), ad.as_tensor(z)], axis=1)
        scores = layers.risk_head(feats, params.tensors, params.bn, train, dropout, key)
        return QuarterOutput(scores, beta, hist, attn, m)


@dataclass
class QuarterPrediction:
    """Scores for one quarter plus the attention kept for explanations."""

    quarter: str
    certs: list[str]
    scores: np.ndarray
    labels: np.ndarray
    beta: np.ndarray | None = None          # (n, window), zeros on absent slots
    beta_quarters: list[str | None] = field(default_factory=list)
    beta_mask: np.ndarray | None = None
    spatial_attention: list[np.ndarray] = field(default_factory=list)
    multiplier: float | None = None
    run_id: str = ""

    def score_of(self, cert: str) -> float | None:
        try:
            return float(self.scores[self.certs.index(cert)])
        except ValueError:
            return None


def predict(params: ModelParams, snapshots: list[GraphSnapshot], quarters: list[str] | None = None,
            window: int = 8, keep_attention: bool = True, model: STGAT | None = None,
            features: dict[int, np.ndarray] | None = None) -> list[QuarterPrediction]:
    """Eval-mode scoring of ``quarters`` (default: every snapshot)."""
    model = model or STGAT(params, snapshots, window)
    if quarters is None:
        quarters = [s.quarter for s in snapshots]
    out = []
    run_id = params.digest()
    with ad.no_grad():
        for q in quarters:
            p = model.position[q]
            res = model.forward(p, train=False, features=features)
            snap = model.snapshots[p]
            pred = QuarterPrediction(q, list(snap.certs), res.scores.data.copy(), snap.labels.copy(),
                                     multiplier=res.multiplier, run_id=run_id)
            if res.history is not None:
                pred.beta_quarters = [model.snapshots[k].quarter if k >= 0 else None
                                      for k in res.history.quarters]
                pred.beta_mask = res.history.mask.copy()
                if res.beta is not None:
                    pred.beta = res.beta.copy()
            if keep_attention:
                pred.spatial_attention = res.spatial_attention
            out.append(pred)
    return out
