"""ST-GAT building blocks expressed on the autodiff engine."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

LEAKY_SLOPE = 0.2
PROB_CLAMP = 1e-7


def gat_layer(x: Tensor, adj: Tensor, mask: np.ndarray, W: Tensor, att_self: Tensor,
              att_nbr: Tensor) -> tuple[Tensor, np.ndarray]:
    """Multi-head graph attention with edge-weight modulation.

    ``adj[i, j]`` is the (conditioned) weight of edge j -> i with 1 on the
    diagonal; ``mask`` marks the neighbourhood N(i) plus the self loop.
    Per head the softmax attention is multiplied by the edge weight and
    renormalized over the neighbourhood before aggregating W x_j.

    Returns the (n, K*d') output and the modulated attention (K, n, n).
    """
    heads, dh = att_self.shape
    n = x.shape[0]
    if W.shape != (x.shape[1], heads * dh):
        raise ad.ShapeError(f"gat_layer: x {x.shape} vs W {W.shape} for {heads} heads of {dh}")
    wh = (x @ W).reshape(n, heads, dh).transpose(1, 0, 2)          # (K, n, d')
    s_self = (wh * att_self.reshape(heads, 1, dh)).sum(axis=2)       # (K, n)
    s_nbr = (wh * att_nbr.reshape(heads, 1, dh)).sum(axis=2)
    # weights outside the mask are replaced by 1 so the log stays finite
    log_w = ad.log(adj + np.where(mask, 0.0, 1.0))
    agg, mod = ad.graph_attention(s_self, s_nbr, log_w, mask, wh, LEAKY_SLOPE)
    out = ad.elu(agg)                                               # (K, n, d')
    return out.transpose(1, 0, 2).reshape(n, heads * dh), mod


def spatial_encode(x: np.ndarray, adj: Tensor, mask: np.ndarray, params: dict,
                   layers: tuple[str, ...] = ("gat1", "gat2")) -> tuple[Tensor, list[np.ndarray]]:
    h = ad.as_tensor(x)
    attn = []
    for name in layers:
        h, a = gat_layer(h, adj, mask, params[f"{name}.W"], params[f"{name}.att_self"],
                         params[f"{name}.att_nbr"])
        attn.append(a)
    return h, attn


def bilstm(x: Tensor, mask: np.ndarray, params: dict, n_layers: int | None = None) -> Tensor:
    """Stacked bidirectional LSTM; layer l+1 consumes [forward || backward] of layer l.

    The depth defaults to however many ``lstm.l{k}`` layers ``params`` holds.
    """
    if n_layers is None:
        n_layers = sum(1 for k in params if k.startswith("lstm.l") and k.endswith(".fwd.w_ih"))
    h = x
    for layer in range(n_layers):
        outs = []
        for direction in ("fwd", "bwd"):
            p = f"lstm.l{layer}.{direction}"
            outs.append(ad.lstm(h, mask, params[f"{p}.w_ih"], params[f"{p}.w_hh"], params[f"{p}.b"],
                                reverse=direction == "bwd"))
        h = ad.concat(outs, axis=2)
    return h


def temporal_attention(seq: Tensor, mask: np.ndarray, params: dict) -> tuple[Tensor, Tensor]:
    """beta = softmax_tau(v . tanh(W_a s_tau + b_a)) over present slots; c = sum beta s."""
    B, W, D = seq.shape
    proj = ad.tanh(seq.reshape(B * W, D) @ params["attn.W_a"] + params["attn.b_a"])
    scores = (proj @ params["attn.v"]).reshape(B, W)
    beta = ad.softmax(scores, axis=1, mask=mask > 0)
    context = (beta.reshape(B, W, 1) * seq).sum(axis=1)
    return context, beta


def temporal_encode(seq: Tensor, mask: np.ndarray, params: dict,
                    use_attention: bool = True) -> tuple[Tensor, Tensor | None]:
    """BiLSTM over the history, then temporal attention (or the last state)."""
    if seq.shape[1] == 0 or not (np.asarray(mask).sum(axis=1) > 0).all():
        raise ValueError("temporal_encode: every sequence needs at least one present quarter")
    states = bilstm(seq, mask, params)
    if not use_attention:
        # the target quarter is always the last slot
        return states[:, -1, :], None
    return temporal_attention(states, mask, params)


def risk_head(features: Tensor, params: dict, bn_state: ad.BatchNormState, train: bool,
              dropout: float = 0.3, key=(0,)) -> Tensor:
    """dense -> batchnorm -> elu -> dropout -> dense -> sigmoid, returning (B,) scores."""
    h = features @ params["head.w1"] + params["head.b1"]
    h = ad.batchnorm(h, params["head.bn_gamma"], params["head.bn_beta"], bn_state, train)
    h = ad.dropout(ad.elu(h), dropout, train, key)
    out = ad.sigmoid(h @ params["head.w2"] + params["head.b2"])
    return out.reshape(features.shape[0])


def focal_loss(r: Tensor, y, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """Mean of -alpha_t (1 - p_t)^gamma log p_t over the batch."""
    y = np.asarray(y, dtype=float)
    r = ad.clip(ad.as_tensor(r), PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_t = r * y + (1.0 - r) * (1.0 - y)
    alpha_t = alpha * y + (1.0 - alpha) * (1.0 - y)
    loss = ad.log(p_t) * (-alpha_t)
    if gamma:
        loss = loss * (1.0 - p_t) ** gamma
    return loss.mean()
