"""LSTM cell and bidirectional encoder with backpropagation through time.

The cell computes the standard gate equations on the concatenated
[x_t, h_{t-1}] input.  The bidirectional encoder runs one cell left-to-
right and a second right-to-left, merges the two hidden sequences per
token (concatenation, or a learned weighted sum), and exposes a "final"
representation built from the deepest state of each direction: the
forward state after the last token together with the backward state
after the first token.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .layers import sigmoid
from .tensor import Pcg32

GATES = ("i", "f", "o", "g")


class LstmCell:
    """Single LSTM cell; hidden entries stay in (-1, 1) by construction."""

    def __init__(self, rng: Pcg32, emb_dim: int, hidden: int):
        self.emb_dim, self.hidden = emb_dim, hidden
        bound = 1.0 / np.sqrt(hidden)
        self.params = {}
        for gate in GATES:
            self.params[f"w_{gate}"] = rng.uniform_array((hidden, emb_dim + hidden), -bound, bound)
            self.params[f"b_{gate}"] = np.zeros(hidden, dtype=np.float64)
        # open forget gates at init keep early gradients alive
        self.params["b_f"] += 1.0
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def step(self, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
        if x_t.shape[1] != self.emb_dim:
            raise DimensionError(
                f"lstm step expects input width {self.emb_dim}, got {x_t.shape[1]}"
            )
        p = self.params
        xcat = np.concatenate([x_t, h_prev], axis=1)
        i = sigmoid(xcat @ p["w_i"].T + p["b_i"])
        f = sigmoid(xcat @ p["w_f"].T + p["b_f"])
        o = sigmoid(xcat @ p["w_o"].T + p["b_o"])
        g = np.tanh(xcat @ p["w_g"].T + p["b_g"])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        return h, c, (xcat, i, f, o, g, c_prev, tc)

    def step_backward(self, dh: np.ndarray, dc: np.ndarray, cache):
        xcat, i, f, o, g, c_prev, tc = cache
        p, gr = self.params, self.grads
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = {
            "i": dc * g * i * (1.0 - i),
            "f": dc * c_prev * f * (1.0 - f),
            "o": do * o * (1.0 - o),
            "g": dc * i * (1.0 - g * g),
        }
        dxcat = np.zeros_like(xcat)
        for gate in GATES:
            gr[f"w_{gate}"] += dz[gate].T @ xcat
            gr[f"b_{gate}"] += dz[gate].sum(axis=0)
            dxcat += dz[gate] @ p[f"w_{gate}"]
        e = self.emb_dim
        return dxcat[:, :e], dxcat[:, e:], dc * f


def run_sequence(cell: LstmCell, x: np.ndarray, reverse: bool = False):
    """Unroll a cell over x [B,L,E]; returns hidden states [B,L,H] indexed
    by token position (hs[:, t] is the state after processing token t)."""
    b, l, _ = x.shape
    h = np.zeros((b, cell.hidden), dtype=np.float64)
    c = np.zeros_like(h)
    hs = np.empty((b, l, cell.hidden), dtype=np.float64)
    caches = [None] * l
    order = range(l - 1, -1, -1) if reverse else range(l)
    for t in order:
        h, c, caches[t] = cell.step(x[:, t], h, c)
        hs[:, t] = h
    return hs, caches


def run_sequence_backward(cell: LstmCell, d_hs: np.ndarray, caches, reverse: bool = False):
    """BPTT: d_hs [B,L,H] holds the gradient on each emitted hidden state."""
    b, l, _ = d_hs.shape
    dx = np.empty((b, l, cell.emb_dim), dtype=np.float64)
    dh_chain = np.zeros((b, cell.hidden), dtype=np.float64)
    dc_chain = np.zeros_like(dh_chain)
    order = range(l) if reverse else range(l - 1, -1, -1)
    for t in order:
        dx[:, t], dh_chain, dc_chain = cell.step_backward(
            d_hs[:, t] + dh_chain, dc_chain, caches[t]
        )
    return dx


class Merge:
    """Combine forward/backward hidden states per token.

    concat       -> output width 2H
    weighted_sum -> omega @ h_fwd + vartheta @ h_bwd + b, output width H
    """

    def __init__(self, rng: Pcg32, hidden: int, mode: str = "concat"):
        if mode not in ("concat", "weighted_sum"):
            raise ConfigError(f"unknown merge mode: {mode!r}")
        self.mode = mode
        self.hidden = hidden
        self.out_dim = 2 * hidden if mode == "concat" else hidden
        if mode == "weighted_sum":
            bound = 1.0 / np.sqrt(hidden)
            self.params = {
                "omega": rng.uniform_array((hidden, hidden), -bound, bound),
                "vartheta": rng.uniform_array((hidden, hidden), -bound, bound),
                "b": np.zeros(hidden, dtype=np.float64),
            }
        else:
            self.params = {}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, hf: np.ndarray, hb: np.ndarray):
        if self.mode == "concat":
            return np.concatenate([hf, hb], axis=-1), None
        out = hf @ self.params["omega"].T + hb @ self.params["vartheta"].T + self.params["b"]
        return out, (hf, hb)

    def backward(self, grad_out: np.ndarray, cache):
        if self.mode == "concat":
            h = self.hidden
            return grad_out[..., :h], grad_out[..., h:]
        hf, hb = cache
        flat_g = grad_out.reshape(-1, self.hidden)
        self.grads["omega"] += flat_g.T @ hf.reshape(-1, self.hidden)
        self.grads["vartheta"] += flat_g.T @ hb.reshape(-1, self.hidden)
        self.grads["b"] += flat_g.sum(axis=0)
        return grad_out @ self.params["omega"], grad_out @ self.params["vartheta"]


class BiLstmEncoder:
    """Two LSTM passes plus a merge; see module docstring for the "final"
    representation convention."""

    def __init__(self, rng: Pcg32, emb_dim: int, hidden: int, merge_mode: str = "concat"):
        self.fwd = LstmCell(rng, emb_dim, hidden)
        self.bwd = LstmCell(rng, emb_dim, hidden)
        self.merge = Merge(rng, hidden, merge_mode)
        self.hidden = hidden
        self.out_dim = self.merge.out_dim

    def forward(self, x: np.ndarray):
        """x [B,L,E] -> (per-token [B,L,D], final [B,D], cache)."""
        if x.ndim != 3 or x.shape[1] < 1:
            raise ValueError(f"encoder needs a [B,L,E] batch with L >= 1, got {x.shape}")
        hs_f, caches_f = run_sequence(self.fwd, x, reverse=False)
        hs_b, caches_b = run_sequence(self.bwd, x, reverse=True)
        per_token, tok_cache = self.merge.forward(hs_f, hs_b)
        final, fin_cache = self.merge.forward(hs_f[:, -1], hs_b[:, 0])
        return per_token, final, (caches_f, caches_b, tok_cache, fin_cache, hs_f.shape)

    def backward(self, d_per_token, d_final, cache):
        """Either gradient may be None; returns the gradient w.r.t. x."""
        caches_f, caches_b, tok_cache, fin_cache, hshape = cache
        d_hf = np.zeros(hshape, dtype=np.float64)
        d_hb = np.zeros(hshape, dtype=np.float64)
        if d_per_token is not None:
            gf, gb = self.merge.backward(d_per_token, tok_cache)
            d_hf += gf
            d_hb += gb
        if d_final is not None:
            gf, gb = self.merge.backward(d_final, fin_cache)
            d_hf[:, -1] += gf
            d_hb[:, 0] += gb
        dx = run_sequence_backward(self.fwd, d_hf, caches_f, reverse=False)
        dx += run_sequence_backward(self.bwd, d_hb, caches_b, reverse=True)
        return dx
