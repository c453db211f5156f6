"""Feed-forward building blocks with explicit forward/backward pairs.

Every layer follows the same convention: ``forward`` returns the output
plus an opaque cache, ``backward`` consumes that cache and the upstream
gradient, returns the gradient w.r.t. the input, and accumulates parameter
gradients into the layer's ``grads`` dict.  Nothing here owns an autodiff
tape; each gradient is derived and tested on its own.

Shapes use B = batch, C = channels, L = sequence length, E = embedding
width, F = number of filters, h = kernel height (tokens covered).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import Pcg32

TRAIN = "train"
EVAL = "eval"
FROZEN = "frozen"  # eval-like, but batchnorm pins stats from one batch


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def conv_out_len(l_in: int, padding: int, dilation: int, kernel_size: int, stride: int) -> int:
    """Output length of a 1-d convolution:
    floor((L_in + 2*padding - dilation*(kernel_size-1) - 1) / stride + 1)."""
    if l_in < 1 or dilation < 1 or kernel_size < 1 or stride < 1 or padding < 0:
        raise ConfigError(
            f"bad conv geometry: L_in={l_in} padding={padding} "
            f"dilation={dilation} kernel_size={kernel_size} stride={stride}"
        )
    out = (l_in + 2 * padding - dilation * (kernel_size - 1) - 1) // stride + 1
    if out < 1:
        raise ConfigError(
            f"conv over length {l_in} with kernel_size={kernel_size}, "
            f"padding={padding}, dilation={dilation}, stride={stride} "
            f"yields non-positive output length {out}"
        )
    return out


def _uniform_init(rng: Pcg32, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform_array(shape, -bound, bound)


class TextConv:
    """Convolution over token windows with kernels spanning the full word-
    vector width: x [B,C,L,E] * w [F,C,h,E] -> [B,F,L'].

    The kernel slides only along the token axis; ``padding`` zero-pads that
    axis on both sides (used by the length-preserving hybrid frontend).
    """

    def __init__(self, rng: Pcg32, c_in: int, c_out: int, height: int, emb_dim: int,
                 padding: int = 0):
        if height < 1 or c_in < 1 or c_out < 1 or emb_dim < 1:
            raise ConfigError(
                f"bad TextConv geometry: c_in={c_in} c_out={c_out} "
                f"height={height} emb_dim={emb_dim}"
            )
        self.c_in, self.c_out, self.height, self.emb_dim = c_in, c_out, height, emb_dim
        self.padding = padding
        fan_in = c_in * height * emb_dim
        self.params = {
            "w": _uniform_init(rng, (c_out, c_in, height, emb_dim), fan_in),
            "b": np.zeros(c_out, dtype=np.float64),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x: np.ndarray):
        b, c, l, e = x.shape
        if c != self.c_in:
            raise DimensionError(f"expected {self.c_in} input channels, got {c}")
        if e != self.emb_dim:
            raise ConfigError(
                f"kernel width {self.emb_dim} must equal embedding width {e}"
            )
        if self.padding:
            x = np.pad(x, ((0, 0), (0, 0), (self.padding, self.padding), (0, 0)))
            l = l + 2 * self.padding
        h = self.height
        if h > l:
            raise ConfigError(f"kernel height {h} exceeds sequence length {l}")
        l_out = l - h + 1
        # window view [B,C,h,L',E]: cheap h-way stack, h is small
        cols = np.stack([x[:, :, d:d + l_out, :] for d in range(h)], axis=2)
        out = np.tensordot(cols, self.params["w"], axes=([1, 2, 4], [1, 2, 3]))
        out = np.ascontiguousarray(out.transpose(0, 2, 1))  # [B,F,L']
        out += self.params["b"][None, :, None]
        return out, (cols, x.shape)

    def backward(self, grad_out: np.ndarray, cache):
        cols, padded_shape = cache
        h, l_out = self.height, grad_out.shape[2]
        self.grads["b"] += grad_out.sum(axis=(0, 2))
        # grad_w[f,c,d,e] = sum_{b,t} grad_out[b,f,t] * cols[b,c,d,t,e]
        self.grads["w"] += np.tensordot(grad_out, cols, axes=([0, 2], [0, 3]))
        # scatter grad back onto the (padded) input
        tmp = np.einsum("bft,fcde->bcdte", grad_out, self.params["w"], optimize=True)
        grad_x = np.zeros(padded_shape, dtype=np.float64)
        for d in range(h):
            grad_x[:, :, d:d + l_out, :] += tmp[:, :, d]
        if self.padding:
            grad_x = grad_x[:, :, self.padding:-self.padding, :]
        return grad_x


class Conv1d:
    """Plain 1-d convolution: x [B,C,L] * w [F,C,h] -> [B,F,L']."""

    def __init__(self, rng: Pcg32, c_in: int, c_out: int, height: int):
        if height < 1 or c_in < 1 or c_out < 1:
            raise ConfigError(
                f"bad Conv1d geometry: c_in={c_in} c_out={c_out} height={height}"
            )
        self.c_in, self.c_out, self.height = c_in, c_out, height
        fan_in = c_in * height
        self.params = {
            "w": _uniform_init(rng, (c_out, c_in, height), fan_in),
            "b": np.zeros(c_out, dtype=np.float64),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x: np.ndarray):
        b, c, l = x.shape
        if c != self.c_in:
            raise DimensionError(f"expected {self.c_in} input channels, got {c}")
        h = self.height
        if h > l:
            raise ConfigError(f"kernel height {h} exceeds sequence length {l}")
        l_out = l - h + 1
        cols = np.stack([x[:, :, d:d + l_out] for d in range(h)], axis=2)  # [B,C,h,L']
        out = np.tensordot(cols, self.params["w"], axes=([1, 2], [1, 2]))  # [B,L',F]
        out = np.ascontiguousarray(out.transpose(0, 2, 1))
        out += self.params["b"][None, :, None]
        return out, (cols, x.shape)

    def backward(self, grad_out: np.ndarray, cache):
        cols, x_shape = cache
        h, l_out = self.height, grad_out.shape[2]
        self.grads["b"] += grad_out.sum(axis=(0, 2))
        self.grads["w"] += np.tensordot(grad_out, cols, axes=([0, 2], [0, 3]))
        tmp = np.einsum("bft,fcd->bcdt", grad_out, self.params["w"], optimize=True)
        grad_x = np.zeros(x_shape, dtype=np.float64)
        for d in range(h):
            grad_x[:, :, d:d + l_out] += tmp[:, :, d]
        return grad_x


class BatchNorm:
    """Per-channel batch normalization over the batch and length axes.

    Train mode normalizes with the current batch's biased statistics and
    updates running stats with momentum 0.1; eval mode normalizes with the
    running stats; frozen mode pins statistics captured from the first
    batch it sees (used by the gradient checker so the loss is a smooth
    deterministic function of the parameters).
    """

    MOMENTUM = 0.1
    EPS = 1e-5

    def __init__(self, channels: int):
        self.channels = channels
        self.params = {
            "gamma": np.ones(channels, dtype=np.float64),
            "beta": np.zeros(channels, dtype=np.float64),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self._frozen_stats = None

    def clear_frozen(self):
        self._frozen_stats = None

    def forward(self, x: np.ndarray, mode: str = TRAIN):
        b, c, l = x.shape
        if c != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {c}")
        if mode == TRAIN:
            if b * l < 2:
                raise ConfigError(
                    "batchnorm in train mode needs at least 2 elements per channel"
                )
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))  # biased (1/N)
            self.running_mean += self.MOMENTUM * (mean - self.running_mean)
            self.running_var += self.MOMENTUM * (var - self.running_var)
            through_stats = True
        elif mode == FROZEN:
            if self._frozen_stats is None:
                self._frozen_stats = (x.mean(axis=(0, 2)), x.var(axis=(0, 2)))
            mean, var = self._frozen_stats
            through_stats = False
        else:
            mean, var = self.running_mean, self.running_var
            through_stats = False
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
        out = self.params["gamma"][None, :, None] * xhat + self.params["beta"][None, :, None]
        return out, (xhat, inv_std, through_stats)

    def backward(self, grad_out: np.ndarray, cache):
        xhat, inv_std, through_stats = cache
        self.grads["gamma"] += (grad_out * xhat).sum(axis=(0, 2))
        self.grads["beta"] += grad_out.sum(axis=(0, 2))
        g = grad_out * self.params["gamma"][None, :, None]
        if not through_stats:
            return g * inv_std[None, :, None]
        # train mode: the batch statistics are functions of x
        mean_g = g.mean(axis=(0, 2))
        mean_gx = (g * xhat).mean(axis=(0, 2))
        return inv_std[None, :, None] * (
            g - mean_g[None, :, None] - xhat * mean_gx[None, :, None]
        )


class Dense:
    """Affine layer y = x W^T + b with x [B,in] and W [out,in]."""

    def __init__(self, rng: Pcg32, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.params = {
            "w": _uniform_init(rng, (n_out, n_in), n_in),
            "b": np.zeros(n_out, dtype=np.float64),
        }
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(
                f"dense expects [B,{self.n_in}], got {x.shape}"
            )
        return x @ self.params["w"].T + self.params["b"], x

    def backward(self, grad_out: np.ndarray, cache):
        x = cache
        self.grads["w"] += grad_out.T @ x
        self.grads["b"] += grad_out.sum(axis=0)
        return grad_out @ self.params["w"]


class Embedding:
    """Token-id lookup over one or two tables (multi-channel adds a frozen
    copy).  Row 0 is the pad vector: it stays exactly zero, its gradient is
    forced to zero."""

    def __init__(self, tables: list[np.ndarray], trainable: list[bool]):
        assert len(tables) == len(trainable)
        self.tables = tables
        self.trainable_flags = list(trainable)
        self.grads = [np.zeros_like(t) if tr else None
                      for t, tr in zip(tables, trainable)]

    @property
    def vocab_size(self) -> int:
        return self.tables[0].shape[0]

    @property
    def emb_dim(self) -> int:
        return self.tables[0].shape[1]

    def forward(self, ids: np.ndarray):
        """ids [B,L] -> [B, C, L, E] with one channel per table."""
        out = np.stack([t[ids] for t in self.tables], axis=1)
        return out, ids

    def backward(self, grad_out: np.ndarray, cache):
        ids = cache
        e = self.emb_dim
        flat_ids = ids.ravel()
        for c, (grad, tr) in enumerate(zip(self.grads, self.trainable_flags)):
            if not tr:
                continue
            np.add.at(grad, flat_ids, grad_out[:, c].reshape(-1, e))
            grad[0] = 0.0  # pad row is pinned to zero
        return None


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), x > 0.0


def relu_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    return grad_out * cache


def pool_forward(x: np.ndarray, kind: str = "max1", k: int = 1):
    """Pool a [B,C,L] map down the length axis.

    max1 -> [B,C] (per-channel maximum); kmax -> [B,C,k] (k largest values
    in original sequence order, earliest positions win ties); avg -> [B,C].
    """
    b, c, l = x.shape
    if kind == "max1":
        idx = np.argmax(x, axis=2)
        out = np.take_along_axis(x, idx[:, :, None], axis=2)[:, :, 0]
        return out, ("max1", idx, l)
    if kind == "kmax":
        if not 1 <= k <= l:
            raise ConfigError(f"kmax needs 1 <= k <= L, got k={k}, L={l}")
        order = np.argsort(-x, axis=2, kind="stable")[:, :, :k]
        sel = np.sort(order, axis=2)  # restore original sequence order
        out = np.take_along_axis(x, sel, axis=2)
        return out, ("kmax", sel, l)
    if kind == "avg":
        return x.mean(axis=2), ("avg", None, l)
    raise ConfigError(f"unknown pooling kind: {kind!r}")


def pool_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    kind, sel, l = cache
    if kind == "max1":
        grad_x = np.zeros(grad_out.shape + (l,), dtype=np.float64)
        np.put_along_axis(grad_x, sel[:, :, None], grad_out[:, :, None], axis=2)
        return grad_x
    if kind == "kmax":
        grad_x = np.zeros(grad_out.shape[:2] + (l,), dtype=np.float64)
        np.put_along_axis(grad_x, sel, grad_out, axis=2)
        return grad_x
    return np.repeat(grad_out[:, :, None] / l, l, axis=2)


def dropout_forward(x: np.ndarray, rate: float, rng: Pcg32 | None, mode: str):
    """Inverted dropout: zero with probability ``rate`` and scale survivors
    by 1/(1-rate) in train mode; identity otherwise."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode != TRAIN or rate == 0.0:
        return x, None
    keep = rng.uniform_array(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * scale, (keep, scale)


def dropout_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    if cache is None:
        return grad_out
    keep, scale = cache
    return grad_out * keep * scale


def bce_with_logits(z: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy on logits, stable form; also returns
    dloss/dz = (sigmoid(z) - y) / B."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise DimensionError(f"logits {z.shape} vs labels {y.shape}")
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = (sigmoid(z) - y) / z.shape[0]
    return float(loss.mean()), grad
