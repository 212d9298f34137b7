import numpy as np
import pytest

from stgat import autodiff as ad
from stgat.model import layers
from stgat.model.snapshots import GraphSnapshot
from stgat.netrecon import EdgeList
from stgat.panel import MACRO_FIELDS, N_FEATURES, SynthConfig, format_quarter, parse_quarter, synthesize_panel


def numeric_grad(f, t: ad.Tensor, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f() with respect to every entry of t."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        up = f()
        flat[k] = old - eps
        down = f()
        flat[k] = old
        gflat[k] = (up - down) / (2 * eps)
    return g


def analytic_grads(loss_fn, tensors):
    for t in tensors:
        t.grad = None
    ad.get_tape().clear()
    ad.backward(loss_fn())
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


GRAD_FLOOR = 1e-6


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    """Largest absolute gap scaled by the tensor's largest numeric gradient.

    The scale is floored at GRAD_FLOOR: a tensor whose gradient is exactly
    zero (a bias feeding batchnorm) otherwise divides difference noise by
    difference noise.
    """
    return float(np.abs(a - n).max() / max(np.abs(n).max(), GRAD_FLOOR))


def check_grads(loss_fn, tensors, eps=1e-6) -> float:
    """Max relative error between backward() and central differences over ``tensors``."""
    grads = analytic_grads(loss_fn, tensors)
    worst = 0.0
    with ad.no_grad():
        for t, a in zip(tensors, grads):
            n = numeric_grad(lambda: float(loss_fn().data), t, eps)
            worst = max(worst, relative_error(a, n))
    return worst


def make_toy_snapshots(n=5, T=3, seed=0, density=0.5) -> list[GraphSnapshot]:
    rng = np.random.default_rng(seed)
    snaps = []
    q0 = parse_quarter("2020Q1")
    certs = [f"c{i}" for i in range(n)]
    for t in range(T):
        adj = (rng.random((n, n)) < density) & ~np.eye(n, dtype=bool)
        src, dst = np.nonzero(adj.T)   # edge src -> dst
        w = rng.uniform(0.01, 0.8, src.size)
        labels = np.zeros(n, dtype=bool)
        labels[rng.choice(n, 2, replace=False)] = True
        snaps.append(GraphSnapshot(
            quarter=format_quarter(q0 + t), certs=list(certs),
            x=rng.normal(size=(n, N_FEATURES)), edges=EdgeList(n, src, dst, w),
            z=rng.normal(size=len(MACRO_FIELDS)), labels=labels))
    return snaps


@pytest.fixture
def toy_snapshots():
    return make_toy_snapshots()


@pytest.fixture(scope="session")
def small_panel():
    cfg = SynthConfig(n_institutions=40, n_quarters=12)
    return synthesize_panel(cfg, 7)


class AttentionAudit:
    """Checks every spatial and temporal attention distribution produced while tests run."""

    SPATIAL_TOL = 1e-10
    TEMPORAL_TOL = 1e-6

    def __init__(self):
        self.spatial_calls = 0
        self.temporal_calls = 0
        self.spatial_worst = 0.0
        self.temporal_worst = 0.0

    def wrap_gat(self, fn):
        def audited(*args, **kwargs):
            out, att = fn(*args, **kwargs)
            dev = float(np.abs(att.sum(axis=-1) - 1.0).max())
            self.spatial_calls += 1
            self.spatial_worst = max(self.spatial_worst, dev)
            assert dev <= self.SPATIAL_TOL, f"spatial attention rows off by {dev:.3e}"
            return out, att
        return audited

    def wrap_temporal(self, fn):
        def audited(seq, mask, params):
            context, beta = fn(seq, mask, params)
            b = beta.data
            dev = float(np.abs(b.sum(axis=1) - 1.0).max())
            self.temporal_calls += 1
            self.temporal_worst = max(self.temporal_worst, dev)
            assert dev <= self.TEMPORAL_TOL, f"temporal attention off by {dev:.3e}"
            assert np.all(b[np.asarray(mask) == 0] == 0.0), "attention on an absent quarter"
            return context, beta
        return audited


_AUDIT = AttentionAudit()


@pytest.fixture(scope="session", autouse=True)
def _audit_attention():
    mp = pytest.MonkeyPatch()
    mp.setattr(layers, "gat_layer", _AUDIT.wrap_gat(layers.gat_layer))
    mp.setattr(layers, "temporal_attention", _AUDIT.wrap_temporal(layers.temporal_attention))
    yield _AUDIT
    mp.undo()


@pytest.fixture
def attention_audit(_audit_attention):
    return _audit_attention


def pytest_terminal_summary(terminalreporter):
    a = _AUDIT
    if a.spatial_calls or a.temporal_calls:
        terminalreporter.write_line(
            f"attention audit: {a.spatial_calls} spatial layers (worst row-sum error {a.spatial_worst:.1e}), "
            f"{a.temporal_calls} temporal passes (worst {a.temporal_worst:.1e})")
