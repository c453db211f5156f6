"""Optimizers, the mini-batch training loop, and the gradient-check harness.

The harness verifies every analytic gradient in the package against central
finite differences.  Checks run with dropout disabled and batchnorm pinned
to one batch's statistics so the loss is a smooth deterministic function of
the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import models as M
from .errors import HarnessError, NumericError
from .lstm import BiLstmEncoder, LstmCell
from .tensor import Pcg32


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 5
    lr: float = 1e-3
    seed: int = 42
    val_fraction: float = 0.1
    shuffle: bool = True
    optimizer: str = "adam"  # adam | sgd

    def validate(self):
        from .errors import ConfigError

        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(
                f"val_fraction must be in [0, 1), got {self.val_fraction}"
            )
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


class Adam:
    """Adam with bias correction; epsilon sits outside the square root."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, items):
        """items: [(name, param, grad)]; updates parameters in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p, g in items:
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, items):
        for _, p, g in items:
            p -= self.lr * g


def make_optimizer(tcfg: TrainConfig):
    return Adam(tcfg.lr) if tcfg.optimizer == "adam" else Sgd(tcfg.lr)


def global_norm_clip(grads, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def train_val_split(n: int, fraction: float, seed: int):
    """Seeded uniform split; returns (train_idx, val_idx)."""
    perm = Pcg32(seed, 2).permutation(n)
    n_val = int(round(n * fraction))
    return perm[n_val:], perm[:n_val]


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """The shuffle order is a pure function of (seed, epoch)."""
    return Pcg32(seed, 1000 + epoch).permutation(n)


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


def evaluate_logits(model, ids: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits, computed in batches."""
    chunks = [
        model.forward(ids[i:i + batch_size], mode=L.EVAL)
        for i in range(0, len(ids), batch_size)
    ]
    return np.concatenate(chunks) if chunks else np.empty(0)


def fit(model, train_set, val_set, tcfg: TrainConfig) -> list[HistoryRow]:
    """Mini-batch training: per epoch a seeded shuffle, batches of
    batch_size (final short batch kept), forward -> loss -> backward ->
    optimizer step; validation in eval mode after each epoch."""
    ids, labels = train_set
    n = len(ids)
    if n == 0:
        raise ValueError("training set is empty")
    tcfg.validate()
    val_ids, val_labels = val_set if val_set is not None else (np.empty((0, 1), dtype=np.int64), np.empty(0))
    opt = make_optimizer(tcfg)
    clip = model.config.arch in ("bilstm", "cnn_bilstm")
    history = []
    for epoch in range(1, tcfg.epochs + 1):
        order = epoch_permutation(tcfg.seed, epoch, n) if tcfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, tcfg.batch_size):
            sel = order[start:start + tcfg.batch_size]
            model.zero_grads()
            z = model.forward(ids[sel], mode=L.TRAIN)
            loss, dz = L.bce_with_logits(z, labels[sel])
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, step {start // tcfg.batch_size}"
                )
            total += loss * len(sel)
            model.backward(dz)
            if clip:
                global_norm_clip([g for _, _, g in model.trainable_items()], 5.0)
            opt.step(model.trainable_items())
        train_loss = total / n
        if len(val_ids):
            vz = evaluate_logits(model, val_ids)
            val_loss, _ = L.bce_with_logits(vz, val_labels)
            val_acc = float(((vz > 0).astype(np.float64) == val_labels).mean())
        else:
            val_loss, val_acc = float("nan"), float("nan")
        history.append(HistoryRow(epoch, train_loss, val_loss, val_acc))
    return history


def write_history(history, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,val_accuracy\n")
        for row in history:
            fh.write(
                f"{row.epoch},{row.train_loss:.6f},{row.val_loss:.6f},"
                f"{row.val_accuracy:.6f}\n"
            )


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckRow:
    name: str
    max_rel_err: float
    n_checked: int


@dataclass
class GradCheckReport:
    target: str
    tol: float
    rows: list[GradCheckRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.max_rel_err <= self.tol for r in self.rows)


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _sample_indices(size: int, n: int, rng: Pcg32, skip=()):
    skip = set(skip)
    pool = size - len(skip)
    if pool <= n:
        return [i for i in range(size) if i not in skip]
    chosen: set[int] = set()
    while len(chosen) < n:
        i = rng.bounded(size)
        if i not in skip:
            chosen.add(i)
    return sorted(chosen)


def _fd_check(target, loss_fn, tensors, rng, h, tol, n_samples=20,
              pad_rows: dict | None = None, corrupt: bool = False) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    tensors: [(name, param_array, analytic_grad_array)].  pad_rows maps a
    tensor name to a count of leading flat indices that are pinned (the
    embedding pad row): those are excluded from differencing and their
    analytic gradient is asserted to be exactly zero.
    """
    l1, l2 = loss_fn(), loss_fn()
    if l1 != l2:
        raise HarnessError(
            f"{target}: forward pass is not deterministic ({l1!r} != {l2!r})"
        )
    report = GradCheckReport(target=target, tol=tol)
    for name, p, g in tensors:
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1) * (2.0 if corrupt else 1.0)
        skip = range(pad_rows.get(name, 0)) if pad_rows else ()
        if pad_rows and name in pad_rows:
            if np.any(flat_g[: pad_rows[name]] != 0.0):
                report.rows.append(GradCheckRow(f"{name}[pad]", float("inf"), pad_rows[name]))
        idx = _sample_indices(p.size, n_samples, rng, skip)
        max_err = 0.0
        for i in idx:
            orig = flat_p[i]
            flat_p[i] = orig + h
            lp = loss_fn()
            flat_p[i] = orig - h
            lm = loss_fn()
            flat_p[i] = orig
            fd = (lp - lm) / (2.0 * h)
            max_err = max(max_err, _rel_err(float(flat_g[i]), fd))
        report.rows.append(GradCheckRow(name, max_err, len(idx)))
    return report


def grad_check_model(model, ids, labels, h=1e-5, tol=1e-4, seed=7,
                     corrupt=False) -> GradCheckReport:
    """End-to-end check of a model's parameter gradients through the
    binary cross-entropy loss."""
    rng = Pcg32(seed, 99)
    model.clear_frozen()

    def loss_fn():
        z = model.forward(ids, mode=L.FROZEN)
        return L.bce_with_logits(z, labels)[0]

    loss_fn()  # capture frozen batchnorm stats before differencing
    model.zero_grads()
    z = model.forward(ids, mode=L.FROZEN)
    _, dz = L.bce_with_logits(z, labels)
    model.backward(dz)
    tensors = [(name, p, g.copy()) for name, p, g in model.trainable_items()]
    pad_rows = {"embedding.table": model.config.emb_dim}
    report = _fd_check(model.config.arch, loss_fn, tensors, rng, h, tol,
                       pad_rows=pad_rows, corrupt=corrupt)
    model.clear_frozen()
    return report


# -- single-layer checks ----------------------------------------------------


def _signed_away_from_zero(rng, shape, lo=0.15, hi=1.0):
    """Random values with |x| >= lo, so ReLU/max kinks sit far from +-h."""
    mag = rng.uniform_array(shape, lo, hi)
    sign = np.where(rng.uniform_array(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _check_dense(rng, h, tol, corrupt):
    layer = L.Dense(rng, 3, 2)
    x = rng.uniform_array((4, 3), -1, 1)
    r = rng.uniform_array((4, 2), -1, 1)

    def loss_fn():
        out, _ = layer.forward(x)
        return float((out * r).sum())

    for g in layer.grads.values():
        g.fill(0.0)
    out, cache = layer.forward(x)
    gx = layer.backward(r, cache)
    tensors = [
        ("dense.w", layer.params["w"], layer.grads["w"].copy()),
        ("dense.b", layer.params["b"], layer.grads["b"].copy()),
        ("dense.x", x, gx),
    ]
    return _fd_check("dense", loss_fn, tensors, rng, h, tol, corrupt=corrupt)


def _check_text_conv(rng, h, tol, corrupt):
    layer = L.TextConv(rng, 2, 2, 2, 3)
    x = rng.uniform_array((2, 2, 5, 3), -1, 1)
    r = rng.uniform_array((2, 2, 4), -1, 1)

    def loss_fn():
        out, _ = layer.forward(x)
        return float((out * r).sum())

    for g in layer.grads.values():
        g.fill(0.0)
    out, cache = layer.forward(x)
    gx = layer.backward(r, cache)
    tensors = [
        ("text_conv.w", layer.params["w"], layer.grads["w"].copy()),
        ("text_conv.b", layer.params["b"], layer.grads["b"].copy()),
        ("text_conv.x", x, gx),
    ]
    return _fd_check("text_conv", loss_fn, tensors, rng, h, tol, corrupt=corrupt)


def _check_conv1d(rng, h, tol, corrupt):
    layer = L.Conv1d(rng, 2, 3, 2)
    x = rng.uniform_array((2, 2, 6), -1, 1)
    r = rng.uniform_array((2, 3, 5), -1, 1)

    def loss_fn():
        out, _ = layer.forward(x)
        return float((out * r).sum())

    for g in layer.grads.values():
        g.fill(0.0)
    out, cache = layer.forward(x)
    gx = layer.backward(r, cache)
    tensors = [
        ("conv1d.w", layer.params["w"], layer.grads["w"].copy()),
        ("conv1d.b", layer.params["b"], layer.grads["b"].copy()),
        ("conv1d.x", x, gx),
    ]
    return _fd_check("conv1d", loss_fn, tensors, rng, h, tol, corrupt=corrupt)


def _check_batchnorm(rng, h, tol, corrupt):
    layer = L.BatchNorm(2)
    layer.params["gamma"][...] = rng.uniform_array(2, 0.5, 1.5)
    layer.params["beta"][...] = rng.uniform_array(2, -0.5, 0.5)
    x = rng.uniform_array((3, 2, 4), -1, 1)
    r = rng.uniform_array((3, 2, 4), -1, 1)

    def loss_fn():
        out, _ = layer.forward(x, mode=L.TRAIN)
        return float((out * r).sum())

    for g in layer.grads.values():
        g.fill(0.0)
    out, cache = layer.forward(x, mode=L.TRAIN)
    gx = layer.backward(r, cache)
    tensors = [
        ("batchnorm.gamma", layer.params["gamma"], layer.grads["gamma"].copy()),
        ("batchnorm.beta", layer.params["beta"], layer.grads["beta"].copy()),
        ("batchnorm.x", x, gx),
    ]
    return _fd_check("batchnorm", loss_fn, tensors, rng, h, tol, corrupt=corrupt)


def _check_relu(rng, h, tol, corrupt):
    x = _signed_away_from_zero(rng, (3, 4))
    r = rng.uniform_array((3, 4), -1, 1)

    def loss_fn():
        out, _ = L.relu_forward(x)
        return float((out * r).sum())

    _, cache = L.relu_forward(x)
    gx = L.relu_backward(r, cache)
    return _fd_check("relu", loss_fn, [("relu.x", x, gx)], rng, h, tol, corrupt=corrupt)


def _make_pool_check(kind, k):
    def check(rng, h, tol, corrupt):
        x = rng.uniform_array((2, 3, 6), -1, 1)
        out, cache = L.pool_forward(x, kind, k)
        r = rng.uniform_array(out.shape, -1, 1)

        def loss_fn():
            o, _ = L.pool_forward(x, kind, k)
            return float((o * r).sum())

        gx = L.pool_backward(r, cache)
        return _fd_check(f"pool_{kind}", loss_fn, [(f"pool_{kind}.x", x, gx)],
                         rng, h, tol, corrupt=corrupt)

    return check


def _check_dropout(rng, h, tol, corrupt):
    # freeze one sampled mask so the check is deterministic
    x = rng.uniform_array((3, 5), -1, 1)
    _, cache = L.dropout_forward(x, 0.4, rng, L.TRAIN)
    keep, scale = cache
    r = rng.uniform_array((3, 5), -1, 1)

    def loss_fn():
        return float((x * keep * scale * r).sum())

    gx = L.dropout_backward(r, cache)
    return _fd_check("dropout", loss_fn, [("dropout.x", x, gx)], rng, h, tol,
                     corrupt=corrupt)


def _check_bce(rng, h, tol, corrupt):
    z = rng.uniform_array(6, -2, 2)
    y = (rng.uniform_array(6) < 0.5).astype(np.float64)

    def loss_fn():
        return L.bce_with_logits(z, y)[0]

    gz = L.bce_with_logits(z, y)[1]
    return _fd_check("bce", loss_fn, [("bce.z", z, gz)], rng, h, tol, corrupt=corrupt)


def _check_embedding(rng, h, tol, corrupt):
    table = rng.uniform_array((5, 3), -0.5, 0.5)
    table[0] = 0.0
    emb = L.Embedding([table], [True])
    ids = np.array([[1, 2, 0], [4, 3, 0]])  # includes pad positions
    r = rng.uniform_array((2, 1, 3, 3), -1, 1)

    def loss_fn():
        out, _ = emb.forward(ids)
        return float((out * r).sum())

    emb.grads[0].fill(0.0)
    _, cache = emb.forward(ids)
    emb.backward(r, cache)
    tensors = [("embedding.table", table, emb.grads[0].copy())]
    return _fd_check("embedding", loss_fn, tensors, rng, h, tol,
                     pad_rows={"embedding.table": 3}, corrupt=corrupt)


def _check_lstm_cell(rng, h, tol, corrupt):
    cell = LstmCell(rng, 3, 2)
    x = rng.uniform_array((2, 3), -1, 1)
    h0 = np.zeros((2, 2))
    c0 = np.zeros((2, 2))
    r = rng.uniform_array((2, 2), -1, 1)

    def loss_fn():
        hh, _, _ = cell.step(x, h0, c0)
        return float((hh * r).sum())

    for g in cell.grads.values():
        g.fill(0.0)
    hh, _, cache = cell.step(x, h0, c0)
    dx, _, _ = cell.step_backward(r, np.zeros_like(r), cache)
    tensors = [(f"lstm_cell.{k}", cell.params[k], cell.grads[k].copy())
               for k in sorted(cell.params)]
    tensors.append(("lstm_cell.x", x, dx))
    return _fd_check("lstm_cell", loss_fn, tensors, rng, h, tol, corrupt=corrupt)


def _make_bilstm_check(merge_mode):
    def check(rng, h, tol, corrupt):
        enc = BiLstmEncoder(rng, 2, 2, merge_mode)
        x = rng.uniform_array((2, 4, 2), -1, 1)
        per, fin, _ = enc.forward(x)
        r_tok = rng.uniform_array(per.shape, -1, 1)
        r_fin = rng.uniform_array(fin.shape, -1, 1)

        def loss_fn():
            p, f, _ = enc.forward(x)
            return float((p * r_tok).sum() + (f * r_fin).sum())

        for cell in (enc.fwd, enc.bwd):
            for g in cell.grads.values():
                g.fill(0.0)
        for g in enc.merge.grads.values():
            g.fill(0.0)
        _, _, cache = enc.forward(x)
        dx = enc.backward(r_tok, r_fin, cache)
        tensors = []
        for label, cell in (("fwd", enc.fwd), ("bwd", enc.bwd)):
            tensors += [(f"bilstm.{label}.{k}", cell.params[k], cell.grads[k].copy())
                        for k in sorted(cell.params)]
        for k in sorted(enc.merge.params):
            tensors.append((f"bilstm.merge.{k}", enc.merge.params[k],
                            enc.merge.grads[k].copy()))
        tensors.append(("bilstm.x", x, dx))
        return _fd_check(f"bilstm_encode[{merge_mode}]", loss_fn, tensors, rng,
                         h, tol, corrupt=corrupt)

    return check


LAYER_CHECKS = {
    "dense": _check_dense,
    "text_conv": _check_text_conv,
    "conv1d": _check_conv1d,
    "batchnorm": _check_batchnorm,
    "relu": _check_relu,
    "pool_max1": _make_pool_check("max1", 1),
    "pool_kmax": _make_pool_check("kmax", 2),
    "pool_avg": _make_pool_check("avg", 1),
    "dropout": _check_dropout,
    "bce": _check_bce,
    "embedding": _check_embedding,
    "lstm_cell": _check_lstm_cell,
    "bilstm_encode": _make_bilstm_check("concat"),
    "bilstm_weighted": _make_bilstm_check("weighted_sum"),
}

_TINY_MODEL_CONFIGS = {
    "kim_cnn": M.ModelConfig(arch="kim_cnn", filter_sizes=(2, 3), num_filters=2,
                             emb_dim=3, max_len=6, dropout_rate=0.5),
    "deep_cnn": M.ModelConfig(arch="deep_cnn", filter_sizes=(2, 3), num_filters=2,
                              emb_dim=3, max_len=6, fc_hidden=4),
    "bilstm": M.ModelConfig(arch="bilstm", emb_dim=3, max_len=5, hidden=3,
                            merge="weighted_sum"),
    "cnn_bilstm": M.ModelConfig(arch="cnn_bilstm", filter_sizes=(3,), num_filters=2,
                                emb_dim=3, max_len=5, hidden=2),
}

LAYER_TOL = 1e-5
MODEL_TOL = 1e-4
FD_STEP = 1e-5


def gradcheck_targets() -> list[str]:
    return list(LAYER_CHECKS) + list(_TINY_MODEL_CONFIGS)


def run_gradcheck(targets=("all",), corrupt=False, seed=7) -> list[GradCheckReport]:
    """Run named checks (or every check for "all"); raises KeyError for an
    unknown target name."""
    wanted = gradcheck_targets() if "all" in targets else list(targets)
    reports = []
    for name in wanted:
        if name in LAYER_CHECKS:
            rng = Pcg32(seed, 51)
            reports.append(LAYER_CHECKS[name](rng, FD_STEP, LAYER_TOL, corrupt))
        elif name in _TINY_MODEL_CONFIGS:
            cfg = _TINY_MODEL_CONFIGS[name]
            vocab = 7
            model = M.build(cfg, vocab, Pcg32(seed, 1))
            data_rng = Pcg32(seed, 52)
            ids = np.array(
                [[data_rng.bounded(vocab) for _ in range(cfg.max_len)]
                 for _ in range(4)],
                dtype=np.int64,
            )
            ids[:, -1] = 0  # keep pad positions in play
            labels = (data_rng.uniform_array(4) < 0.5).astype(np.float64)
            reports.append(
                grad_check_model(model, ids, labels, h=FD_STEP, tol=MODEL_TOL,
                                 seed=seed, corrupt=corrupt)
            )
        else:
            raise KeyError(name)
    return reports
