"""The classifier architectures and the checkpoint format.

Four architectures share one surface: ``forward(ids, mode) -> logits`` and
``backward(dlogits)`` which accumulates parameter gradients.

kim_cnn     embedding -> per-size token conv -> ReLU -> pool -> concat
            -> dropout -> dense(1)
deep_cnn    per size: conv -> BN -> ReLU -> conv1d -> BN -> ReLU -> pool;
            concat -> dense(fc_hidden) -> ReLU -> dense(1)
bilstm      embedding -> bidirectional LSTM -> merged final state -> dense(1)
cnn_bilstm  embedding -> length-preserving conv frontend -> bidirectional
            LSTM -> merged final state -> dense(1)

Multi-channel mode adds a second, frozen embedding table; the convolutions
see it as a second input channel.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import ConfigError, CorruptError, FormatError
from .layers import (
    BatchNorm,
    Conv1d,
    Dense,
    Embedding,
    TextConv,
    dropout_backward,
    dropout_forward,
    pool_backward,
    pool_forward,
    relu_backward,
    relu_forward,
)
from .lstm import BiLstmEncoder
from .tensor import Pcg32

ARCHS = ("kim_cnn", "deep_cnn", "bilstm", "cnn_bilstm")

_DEFAULT_FILTER_SIZES = {
    "kim_cnn": (2, 3, 4),
    "deep_cnn": (1, 2, 3, 4, 5),
    "bilstm": (),
    "cnn_bilstm": (3,),
}

CHECKPOINT_MAGIC = b"TXCN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "kim_cnn"
    filter_sizes: tuple[int, ...] | None = None  # None -> per-arch default
    num_filters: int = 16
    emb_dim: int = 32
    max_len: int = 40
    channels: str = "single"  # single | multi
    pool: str = "max1"  # max1 | kmax | avg
    kmax_k: int = 2
    dropout_rate: float = 0.5
    hidden: int = 32  # LSTM hidden width
    merge: str = "concat"  # concat | weighted_sum
    fc_hidden: int = 128  # deep_cnn's first dense width

    def resolved(self) -> "ModelConfig":
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        cfg = self
        if cfg.filter_sizes is None:
            cfg = replace(cfg, filter_sizes=_DEFAULT_FILTER_SIZES[cfg.arch])
        else:
            cfg = replace(cfg, filter_sizes=tuple(int(h) for h in cfg.filter_sizes))
        cfg.validate()
        return cfg

    def validate(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.channels not in ("single", "multi"):
            raise ConfigError(f"channels must be single or multi, got {self.channels!r}")
        if self.pool not in ("max1", "kmax", "avg"):
            raise ConfigError(f"unknown pool {self.pool!r}")
        if self.merge not in ("concat", "weighted_sum"):
            raise ConfigError(f"unknown merge mode {self.merge!r}")
        sizes = self.filter_sizes if self.filter_sizes is not None else ()
        for h in sizes:
            if h < 1:
                raise ConfigError(f"filter size must be positive, got {h}")
            if h > self.max_len:
                raise ConfigError(
                    f"filter size {h} exceeds max_len {self.max_len}"
                )
        if self.arch in ("kim_cnn", "deep_cnn") and not sizes:
            raise ConfigError(f"{self.arch} needs at least one filter size")
        if self.arch == "deep_cnn":
            for h in sizes:
                if 2 * h - 1 > self.max_len:
                    raise ConfigError(
                        f"deep_cnn branch {h} needs max_len >= {2 * h - 1}, "
                        f"got {self.max_len}"
                    )
        if self.arch == "cnn_bilstm":
            for h in sizes:
                if h % 2 == 0:
                    raise ConfigError(
                        f"cnn_bilstm frontend kernel {h} would change the "
                        f"sequence length; use odd sizes"
                    )
        if self.arch == "bilstm" and self.channels == "multi":
            raise ConfigError("bilstm has no convolution to merge a second channel")
        for name in ("num_filters", "emb_dim", "max_len", "hidden", "fc_hidden", "kmax_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.pool == "kmax":
            shortest = min(self.max_len - h + 1 for h in sizes) if sizes else self.max_len
            if self.kmax_k > shortest:
                raise ConfigError(
                    f"kmax_k={self.kmax_k} exceeds the shortest feature map ({shortest})"
                )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_sizes"] = list(self.filter_sizes) if self.filter_sizes is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        if d.get("filter_sizes") is not None:
            d = dict(d, filter_sizes=tuple(d["filter_sizes"]))
        return cls(**d)


def _pool_width(cfg: ModelConfig) -> int:
    return cfg.kmax_k if cfg.pool == "kmax" else 1


class _ModelBase:
    """Shared registry plumbing: stable tensor naming for the optimizer and
    the checkpoint manifest."""

    def __init__(self, config: ModelConfig, vocab_size: int, rng: Pcg32):
        self.config = config
        self.vocab_size = vocab_size
        self._rng = rng  # consumed by dropout during training
        self._trainable: list[tuple[str, np.ndarray, np.ndarray]] = []
        self._state: dict[str, np.ndarray] = {}
        self._batchnorms: list[BatchNorm] = []
        self._pending = None
        self.last_trace: dict = {}

    # -- registry ---------------------------------------------------------
    def _reg_layer(self, prefix: str, layer):
        for key in layer.params:
            name = f"{prefix}.{key}"
            self._trainable.append((name, layer.params[key], layer.grads[key]))
            self._state[name] = layer.params[key]
        if isinstance(layer, BatchNorm):
            self._state[f"{prefix}.running_mean"] = layer.running_mean
            self._state[f"{prefix}.running_var"] = layer.running_var
            self._batchnorms.append(layer)

    def _reg_embedding(self, emb: Embedding):
        self._trainable.append(("embedding.table", emb.tables[0], emb.grads[0]))
        self._state["embedding.table"] = emb.tables[0]
        for i in range(1, len(emb.tables)):
            self._state[f"embedding.frozen_table_{i}"] = emb.tables[i]

    def trainable_items(self):
        return list(self._trainable)

    def state_items(self):
        return list(self._state.items())

    def set_state(self, name: str, arr: np.ndarray):
        dst = self._state.get(name)
        if dst is None:
            raise CorruptError(f"checkpoint tensor {name!r} not part of this model")
        if dst.shape != arr.shape:
            raise CorruptError(
                f"checkpoint tensor {name!r} has shape {arr.shape}, expected {dst.shape}"
            )
        np.copyto(dst, arr)

    def zero_grads(self):
        for _, _, g in self._trainable:
            g.fill(0.0)

    def clear_frozen(self):
        for bn in self._batchnorms:
            bn.clear_frozen()

    # -- helpers ----------------------------------------------------------
    def _check_ids(self, ids: np.ndarray):
        if ids.ndim != 2:
            raise ValueError(f"ids must be [B, L], got shape {ids.shape}")
        bad = (ids < 0) | (ids >= self.vocab_size)
        if bad.any():
            b, t = np.argwhere(bad)[0]
            raise ValueError(
                f"token id {int(ids[b, t])} out of range at batch {int(b)}, "
                f"position {int(t)} (vocab size {self.vocab_size})"
            )

    def _take_cache(self):
        if self._pending is None:
            raise RuntimeError("backward called without a pending forward pass")
        cache, self._pending = self._pending, None
        return cache

    def _make_embedding(self, rng: Pcg32, pretrained: np.ndarray | None):
        cfg = self.config
        if pretrained is not None:
            table = np.array(pretrained, dtype=np.float64)
        else:
            table = rng.uniform_array((self.vocab_size, cfg.emb_dim), -0.25, 0.25)
        table[0] = 0.0
        tables, flags = [table], [True]
        if cfg.channels == "multi":
            tables.append(table.copy())
            flags.append(False)
        return Embedding(tables, flags)


class KimCnn(_ModelBase):
    def __init__(self, config, vocab_size, rng, pretrained=None):
        super().__init__(config, vocab_size, rng)
        cfg = config
        self.emb = self._make_embedding(rng, pretrained)
        n_ch = len(self.emb.tables)
        self.convs = {
            h: TextConv(rng, n_ch, cfg.num_filters, h, cfg.emb_dim)
            for h in cfg.filter_sizes
        }
        self.concat_width = len(cfg.filter_sizes) * cfg.num_filters * _pool_width(cfg)
        self.fc = Dense(rng, self.concat_width, 1)
        self._reg_embedding(self.emb)
        for h in cfg.filter_sizes:
            self._reg_layer(f"conv_h{h}", self.convs[h])
        self._reg_layer("fc", self.fc)

    def forward(self, ids: np.ndarray, mode: str = "eval") -> np.ndarray:
        self._check_ids(ids)
        cfg = self.config
        x, emb_cache = self.emb.forward(ids)
        branches, branch_caches, trace = [], [], {}
        for h in cfg.filter_sizes:
            z, cc = self.convs[h].forward(x)
            r, rc = relu_forward(z)
            p, pc = pool_forward(r, cfg.pool, cfg.kmax_k)
            branches.append(p.reshape(ids.shape[0], -1))
            branch_caches.append((cc, rc, pc, p.shape))
            trace[f"conv_h{h}"] = z.shape
            trace[f"pool_h{h}"] = p.shape
        cat = np.concatenate(branches, axis=1)
        trace["concat"] = cat.shape
        self.last_trace = trace
        d, dropc = dropout_forward(cat, cfg.dropout_rate, self._rng, mode)
        logits, fcc = self.fc.forward(d)
        self._pending = (emb_cache, branch_caches, dropc, fcc)
        return logits[:, 0]

    def backward(self, dlogits: np.ndarray):
        emb_cache, branch_caches, dropc, fcc = self._take_cache()
        g = self.fc.backward(dlogits[:, None], fcc)
        g = dropout_backward(g, dropc)
        grad_x = None
        start = 0
        for h, (cc, rc, pc, pshape) in zip(self.config.filter_sizes, branch_caches):
            width = int(np.prod(pshape[1:]))
            gp = g[:, start:start + width].reshape(pshape)
            start += width
            gr = pool_backward(gp, pc)
            gz = relu_backward(gr, rc)
            gx = self.convs[h].backward(gz, cc)
            grad_x = gx if grad_x is None else grad_x + gx
        self.emb.backward(grad_x, emb_cache)


class DeepCnn(_ModelBase):
    def __init__(self, config, vocab_size, rng, pretrained=None):
        super().__init__(config, vocab_size, rng)
        cfg = config
        self.emb = self._make_embedding(rng, pretrained)
        n_ch = len(self.emb.tables)
        f = cfg.num_filters
        self.branches = {}
        for h in cfg.filter_sizes:
            self.branches[h] = {
                "conv1": TextConv(rng, n_ch, f, h, cfg.emb_dim),
                "bn1": BatchNorm(f),
                "conv2": Conv1d(rng, f, f, h),
                "bn2": BatchNorm(f),
            }
        self.concat_width = len(cfg.filter_sizes) * f * _pool_width(cfg)
        self.fc1 = Dense(rng, self.concat_width, cfg.fc_hidden)
        self.fc2 = Dense(rng, cfg.fc_hidden, 1)
        self._reg_embedding(self.emb)
        for h in cfg.filter_sizes:
            for key in ("conv1", "bn1", "conv2", "bn2"):
                self._reg_layer(f"branch{h}.{key}", self.branches[h][key])
        self._reg_layer("fc1", self.fc1)
        self._reg_layer("fc2", self.fc2)

    def forward(self, ids: np.ndarray, mode: str = "eval") -> np.ndarray:
        self._check_ids(ids)
        cfg = self.config
        x, emb_cache = self.emb.forward(ids)
        outs, caches, trace = [], [], {}
        for h in cfg.filter_sizes:
            br = self.branches[h]
            z1, c1 = br["conv1"].forward(x)
            n1, cb1 = br["bn1"].forward(z1, mode)
            r1, cr1 = relu_forward(n1)
            z2, c2 = br["conv2"].forward(r1)
            n2, cb2 = br["bn2"].forward(z2, mode)
            r2, cr2 = relu_forward(n2)
            p, cp = pool_forward(r2, cfg.pool, cfg.kmax_k)
            outs.append(p.reshape(ids.shape[0], -1))
            caches.append((c1, cb1, cr1, c2, cb2, cr2, cp, p.shape))
            trace[f"conv1_h{h}"] = z1.shape
            trace[f"conv2_h{h}"] = z2.shape
        cat = np.concatenate(outs, axis=1)
        trace["concat"] = cat.shape
        self.last_trace = trace
        a1, cfc1 = self.fc1.forward(cat)
        r3, cr3 = relu_forward(a1)
        logits, cfc2 = self.fc2.forward(r3)
        self._pending = (emb_cache, caches, cfc1, cr3, cfc2)
        return logits[:, 0]

    def backward(self, dlogits: np.ndarray):
        emb_cache, caches, cfc1, cr3, cfc2 = self._take_cache()
        g = self.fc2.backward(dlogits[:, None], cfc2)
        g = relu_backward(g, cr3)
        g = self.fc1.backward(g, cfc1)
        grad_x = None
        start = 0
        for h, (c1, cb1, cr1, c2, cb2, cr2, cp, pshape) in zip(
            self.config.filter_sizes, caches
        ):
            br = self.branches[h]
            width = int(np.prod(pshape[1:]))
            gp = g[:, start:start + width].reshape(pshape)
            start += width
            gr = pool_backward(gp, cp)
            gr = relu_backward(gr, cr2)
            gr = br["bn2"].backward(gr, cb2)
            gr = br["conv2"].backward(gr, c2)
            gr = relu_backward(gr, cr1)
            gr = br["bn1"].backward(gr, cb1)
            gx = br["conv1"].backward(gr, c1)
            grad_x = gx if grad_x is None else grad_x + gx
        self.emb.backward(grad_x, emb_cache)


class BiLstmClassifier(_ModelBase):
    def __init__(self, config, vocab_size, rng, pretrained=None):
        super().__init__(config, vocab_size, rng)
        cfg = config
        self.emb = self._make_embedding(rng, pretrained)
        self.encoder = BiLstmEncoder(rng, cfg.emb_dim, cfg.hidden, cfg.merge)
        self.fc = Dense(rng, self.encoder.out_dim, 1)
        self._reg_embedding(self.emb)
        self._reg_layer("fwd", self.encoder.fwd)
        self._reg_layer("bwd", self.encoder.bwd)
        if self.encoder.merge.params:
            self._reg_layer("merge", self.encoder.merge)
        self._reg_layer("fc", self.fc)

    def forward(self, ids: np.ndarray, mode: str = "eval") -> np.ndarray:
        self._check_ids(ids)
        x, emb_cache = self.emb.forward(ids)
        seq = x[:, 0]  # single channel
        _, final, enc_cache = self.encoder.forward(seq)
        logits, fcc = self.fc.forward(final)
        self._pending = (emb_cache, enc_cache, fcc)
        return logits[:, 0]

    def backward(self, dlogits: np.ndarray):
        emb_cache, enc_cache, fcc = self._take_cache()
        g = self.fc.backward(dlogits[:, None], fcc)
        dx = self.encoder.backward(None, g, enc_cache)
        self.emb.backward(dx[:, None], emb_cache)


class CnnBiLstm(_ModelBase):
    """Hybrid: a length-preserving convolution re-embeds the tokens before
    the bidirectional pass.  An empty filter_sizes tuple disables the
    frontend, which reduces the model to bilstm over raw embeddings."""

    def __init__(self, config, vocab_size, rng, pretrained=None):
        super().__init__(config, vocab_size, rng)
        cfg = config
        self.emb = self._make_embedding(rng, pretrained)
        n_ch = len(self.emb.tables)
        if cfg.filter_sizes:
            self.front = {
                h: TextConv(rng, n_ch, cfg.num_filters, h, cfg.emb_dim,
                            padding=(h - 1) // 2)
                for h in cfg.filter_sizes
            }
            feat_dim = len(cfg.filter_sizes) * cfg.num_filters
        else:
            if cfg.channels == "multi":
                raise ConfigError("cnn_bilstm without a frontend cannot merge channels")
            self.front = {}
            feat_dim = cfg.emb_dim
        self.encoder = BiLstmEncoder(rng, feat_dim, cfg.hidden, cfg.merge)
        self.fc = Dense(rng, self.encoder.out_dim, 1)
        self._reg_embedding(self.emb)
        for h in cfg.filter_sizes:
            self._reg_layer(f"front_h{h}", self.front[h])
        self._reg_layer("fwd", self.encoder.fwd)
        self._reg_layer("bwd", self.encoder.bwd)
        if self.encoder.merge.params:
            self._reg_layer("merge", self.encoder.merge)
        self._reg_layer("fc", self.fc)

    def forward(self, ids: np.ndarray, mode: str = "eval") -> np.ndarray:
        self._check_ids(ids)
        cfg = self.config
        x, emb_cache = self.emb.forward(ids)
        l_in = ids.shape[1]
        if self.front:
            feats, fcaches = [], []
            for h in cfg.filter_sizes:
                z, cc = self.front[h].forward(x)
                if z.shape[2] != l_in:
                    raise ConfigError(
                        f"frontend kernel {h} changed the sequence length "
                        f"({l_in} -> {z.shape[2]})"
                    )
                feats.append(z)
                fcaches.append(cc)
            seq = np.concatenate(feats, axis=1).transpose(0, 2, 1)  # [B,L,F]
            seq = np.ascontiguousarray(seq)
        else:
            fcaches = None
            seq = x[:, 0]
        _, final, enc_cache = self.encoder.forward(seq)
        logits, fcc = self.fc.forward(final)
        self._pending = (emb_cache, fcaches, enc_cache, fcc)
        return logits[:, 0]

    def backward(self, dlogits: np.ndarray):
        emb_cache, fcaches, enc_cache, fcc = self._take_cache()
        cfg = self.config
        g = self.fc.backward(dlogits[:, None], fcc)
        dseq = self.encoder.backward(None, g, enc_cache)
        if self.front:
            dfeat = dseq.transpose(0, 2, 1)  # [B, sum F, L]
            grad_x = None
            f = cfg.num_filters
            for i, h in enumerate(cfg.filter_sizes):
                gx = self.front[h].backward(
                    np.ascontiguousarray(dfeat[:, i * f:(i + 1) * f]), fcaches[i]
                )
                grad_x = gx if grad_x is None else grad_x + gx
            self.emb.backward(grad_x, emb_cache)
        else:
            self.emb.backward(dseq[:, None], emb_cache)


_ARCH_CLASSES = {
    "kim_cnn": KimCnn,
    "deep_cnn": DeepCnn,
    "bilstm": BiLstmClassifier,
    "cnn_bilstm": CnnBiLstm,
}


def build(config: ModelConfig, vocab_size: int, rng: Pcg32, pretrained=None):
    """Construct a model; raises ConfigError on invalid configuration."""
    cfg = config.resolved()
    if vocab_size < 2:
        raise ConfigError(f"vocab_size must be >= 2 (pad + unk), got {vocab_size}")
    return _ARCH_CLASSES[cfg.arch](cfg, vocab_size, rng, pretrained)


def save(model, path, extra_meta: dict | None = None):
    """Write the checkpoint: magic, u32 version, u32 metadata length, JSON
    metadata (config + tensor manifest), then raw little-endian float64
    payloads in manifest order."""
    manifest = []
    chunks = []
    offset = 0
    for name, arr in model.state_items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    meta = {
        "config": model.config.to_dict(),
        "vocab_size": model.vocab_size,
        "extra": extra_meta or {},
        "tensors": manifest,
    }
    blob = json.dumps(meta, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for data in chunks:
            fh.write(data)


def load(path):
    """Read a checkpoint back; returns (model, extra_meta)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise CorruptError(f"checkpoint truncated: {len(data)} bytes")
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    version = struct.unpack("<I", data[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"unsupported checkpoint version {version}; supported: {CHECKPOINT_VERSION}"
        )
    mlen = struct.unpack("<I", data[8:12])[0]
    if 12 + mlen > len(data):
        raise CorruptError("checkpoint truncated inside metadata")
    try:
        meta = json.loads(data[12:12 + mlen].decode("utf-8"))
        config = ModelConfig.from_dict(meta["config"])
        vocab_size = int(meta["vocab_size"])
        manifest = meta["tensors"]
        extra = meta.get("extra", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptError(f"unreadable checkpoint metadata: {exc}") from None
    seed = int(extra.get("seed", 0))
    model = build(config, vocab_size, Pcg32(seed, 3))
    payload = data[12 + mlen:]
    expected = dict(model.state_items())
    listed = [entry["name"] for entry in manifest]
    if sorted(listed) != sorted(expected):
        raise CorruptError(
            f"checkpoint tensor names do not match the model: "
            f"{sorted(set(listed) ^ set(expected))}"
        )
    total = 0
    for entry in manifest:
        name, shape, off = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        count = 1
        for d in shape:
            count *= int(d)
        nbytes = count * 8
        if off + nbytes > len(payload):
            raise CorruptError(f"checkpoint truncated inside tensor {name!r}")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off)
        model.set_state(name, arr.reshape(shape).astype(np.float64))
        total += nbytes
    if total != len(payload):
        raise CorruptError(
            f"checkpoint payload is {len(payload)} bytes, manifest covers {total}"
        )
    return model, extra
