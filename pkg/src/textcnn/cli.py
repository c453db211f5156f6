"""Command-line entry point.

Subcommands: train, eval, baseline, gradcheck, predict.  Exit codes:
0 success, 1 configuration error, 2 data error, 3 numeric failure.
The TEXTCNN_LOG environment variable (error|info|debug) controls
verbosity on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import baselines as B
from . import metrics as MT
from . import models as M
from . import train as T
from .errors import ConfigError, DataError, NumericError
from .layers import sigmoid
from .tensor import Pcg32
from .text import (
    TokenizerOptions,
    Vocabulary,
    build_vocab,
    encode_batch,
    load_dataset,
    load_pretrained,
    tokenize,
)

log = logging.getLogger("textcnn")

DATASET_FORMATS = ("two_col", "sentiment140")
BASELINE_KINDS = ("nb", "svm", "chi2logreg")


@dataclass(frozen=True)
class DatasetConfig:
    path: str
    format: str = "two_col"


@dataclass(frozen=True)
class PipelineConfig:
    min_count: int = 1
    lowercase: bool = True
    strip_stopwords: bool = False


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig
    output_dir: str
    seed: int = 42
    model: M.ModelConfig = M.ModelConfig()
    train: T.TrainConfig = T.TrainConfig()
    pipeline: PipelineConfig = PipelineConfig()
    embedding_path: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


def _reject_unknown(section: dict, known, ctx: str):
    unknown = sorted(set(section) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in {ctx}: {unknown}")


def parse_run_config(raw: dict) -> RunConfig:
    """Strict parse: unknown keys anywhere are configuration errors; the
    train seed defaults to the run seed when not given explicitly."""
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    top_known = (
        "dataset", "output_dir", "seed", "model", "train", "pipeline",
        "embedding_path",
    )
    _reject_unknown(raw, top_known, "run config")
    for key in ("dataset", "output_dir"):
        if key not in raw:
            raise ConfigError(f"run config is missing required key {key!r}")
    ds = raw["dataset"]
    _reject_unknown(ds, ("path", "format"), "dataset")
    if "path" not in ds:
        raise ConfigError("dataset section is missing 'path'")
    dataset = DatasetConfig(**ds)
    if dataset.format not in DATASET_FORMATS:
        raise ConfigError(
            f"unknown dataset format {dataset.format!r}; expected {DATASET_FORMATS}"
        )
    seed = int(raw.get("seed", 42))
    model = M.ModelConfig.from_dict(raw.get("model", {})).resolved()
    train_section = dict(raw.get("train", {}))
    _reject_unknown(train_section, T.TrainConfig.__dataclass_fields__, "train")
    train_section.setdefault("seed", seed)
    train = T.TrainConfig(**train_section)
    train.validate()
    pipe_section = raw.get("pipeline", {})
    _reject_unknown(pipe_section, PipelineConfig.__dataclass_fields__, "pipeline")
    pipeline = PipelineConfig(**pipe_section)
    if pipeline.min_count < 1:
        raise ConfigError(f"min_count must be >= 1, got {pipeline.min_count}")
    embedding_path = raw.get("embedding_path")
    return RunConfig(
        dataset=dataset,
        output_dir=str(raw["output_dir"]),
        seed=seed,
        model=model,
        train=train,
        pipeline=pipeline,
        embedding_path=embedding_path,
    )


def load_run_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_run_config(raw)


def _tokenizer_options(p: PipelineConfig) -> TokenizerOptions:
    return TokenizerOptions(lowercase=p.lowercase, strip_stopwords=p.strip_stopwords)


def _prepare_corpus(records, pipeline: PipelineConfig):
    opts = _tokenizer_options(pipeline)
    token_lists = [tokenize(text, opts) for _, text in records]
    labels = np.array([lab for lab, _ in records], dtype=np.float64)
    return token_lists, labels


def _vocab_from_list(tokens_list) -> Vocabulary:
    vocab = Vocabulary(id_to_token=list(tokens_list))
    vocab.token_to_id = {tok: i for i, tok in enumerate(vocab.id_to_token) if i >= 2}
    return vocab


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    records = load_dataset(cfg.dataset.path, cfg.dataset.format)
    if not records:
        raise DataError(f"dataset {cfg.dataset.path} is empty")
    token_lists, labels = _prepare_corpus(records, cfg.pipeline)
    vocab = build_vocab(token_lists, cfg.pipeline.min_count)
    ids = encode_batch(token_lists, vocab, cfg.model.max_len)
    pretrained = None
    if cfg.embedding_path is not None:
        emb, coverage = load_pretrained(
            cfg.embedding_path, vocab, cfg.model.emb_dim, Pcg32(cfg.seed, 5)
        )
        pretrained = emb.table
        log.info("pretrained embeddings cover %d/%d tokens", coverage, vocab.size - 2)
    train_idx, val_idx = T.train_val_split(len(ids), cfg.train.val_fraction, cfg.seed)
    model = M.build(cfg.model, vocab.size, Pcg32(cfg.seed, 1), pretrained)
    log.info(
        "training %s on %d examples (%d held out), vocab %d",
        cfg.model.arch, len(train_idx), len(val_idx), vocab.size,
    )
    history = T.fit(
        model,
        (ids[train_idx], labels[train_idx]),
        (ids[val_idx], labels[val_idx]),
        cfg.train,
    )
    for row in history:
        log.info(
            "epoch %d train_loss=%.6f val_loss=%.6f val_accuracy=%.6f",
            row.epoch, row.train_loss, row.val_loss, row.val_accuracy,
        )
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra = {
        "vocab": vocab.id_to_token,
        "pipeline": asdict(cfg.pipeline),
        "seed": cfg.seed,
    }
    M.save(model, out / "model.txcn", extra)
    T.write_history(history, out / "history.csv")
    with open(out / "runconfig.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
        fh.write("\n")
    print(f"checkpoint={out / 'model.txcn'}")
    return 0


def cmd_eval(args) -> int:
    try:
        model, extra = M.load(args.checkpoint)
        vocab_list = extra["vocab"]
        pipeline = PipelineConfig(**extra["pipeline"])
    except (OSError, DataError, KeyError, TypeError) as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return 1
    vocab = _vocab_from_list(vocab_list)
    if vocab.size != model.vocab_size:
        print(
            f"error: vocabulary mismatch: checkpoint model expects "
            f"{model.vocab_size} tokens, stored vocabulary has {vocab.size}",
            file=sys.stderr,
        )
        return 1
    records = load_dataset(args.data, args.format)
    token_lists, labels = _prepare_corpus(records, pipeline)
    ids = encode_batch(token_lists, vocab, model.config.max_len)
    probs = sigmoid(T.evaluate_logits(model, ids))
    report = MT.evaluate_binary(probs, labels)
    print(f"accuracy={report.accuracy:.6f} auc={report.auc:.6f}")
    if args.roc:
        MT.write_roc_csv(report.roc, args.roc)
    if args.roc_svg:
        MT.render_roc_svg(report.roc, args.roc_svg)
    return 0


def cmd_baseline(args) -> int:
    if args.kind not in BASELINE_KINDS:
        print(
            f"error: unknown baseline kind {args.kind!r}\n"
            f"usage: textcnn baseline --kind {{{','.join(BASELINE_KINDS)}}} "
            "--data FILE [--format FMT] [--seed N] [--val-fraction F]",
            file=sys.stderr,
        )
        return 1
    records = load_dataset(args.data, args.format)
    if not records:
        raise DataError(f"dataset {args.data} is empty")
    pipeline = PipelineConfig(
        min_count=args.min_count, strip_stopwords=args.strip_stopwords
    )
    token_lists, labels = _prepare_corpus(records, pipeline)
    train_idx, val_idx = T.train_val_split(len(records), args.val_fraction, args.seed)
    if len(val_idx) == 0:
        raise ValueError("held-out split is empty; increase --val-fraction")
    vocab = build_vocab([token_lists[i] for i in train_idx], pipeline.min_count)
    docs = B.bow_from_tokens(token_lists, vocab)
    train_docs = [docs[i] for i in train_idx]
    y_train = labels[train_idx].astype(np.int64)
    val_docs = [docs[i] for i in val_idx]
    y_val = labels[val_idx].astype(np.int64)
    if args.kind == "nb":
        nb = B.nb_fit(train_docs, y_train, vocab.size, alpha=1.0)
        preds = [B.nb_predict(nb, d)[0] for d in val_docs]
    elif args.kind == "svm":
        svm = B.svm_fit(train_docs, y_train, vocab.size, rng=Pcg32(args.seed, 4))
        preds = [B.svm_predict(svm, d) for d in val_docs]
    else:
        k = min(1000, vocab.size)
        feats, _ = B.chi2_select(train_docs, y_train, vocab.size, k)
        x_train = B.docs_to_dense(train_docs, feats)
        x_val = B.docs_to_dense(val_docs, feats)
        lr_model = B.logreg_cv_fit(x_train, y_train.astype(np.float64))
        preds = (x_val @ lr_model.w + lr_model.b > 0).astype(np.int64)
    acc = MT.accuracy(np.asarray(preds), y_val)
    print(f"accuracy={acc:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    known = T.gradcheck_targets() + ["all"]
    if args.name not in known:
        print(
            f"error: unknown gradcheck target {args.name!r}\n"
            f"known targets: {' '.join(known)}",
            file=sys.stderr,
        )
        return 1
    reports = T.run_gradcheck([args.name], corrupt=args.corrupt, seed=args.seed)
    ok = True
    for rep in reports:
        for row in rep.rows:
            print(f"{rep.target}: {row.name} max_rel_err={row.max_rel_err:.3e} "
                  f"(n={row.n_checked})")
        status = "PASS" if rep.passed else "FAIL"
        ok = ok and rep.passed
        print(f"{rep.target}: {status} (tol={rep.tol:g})")
    return 0 if ok else 4


def cmd_predict(args) -> int:
    if not args.text:
        print("error: empty text", file=sys.stderr)
        return 1
    try:
        model, extra = M.load(args.checkpoint)
        vocab = _vocab_from_list(extra["vocab"])
        pipeline = PipelineConfig(**extra["pipeline"])
    except (OSError, DataError, KeyError, TypeError) as exc:
        print(f"error: cannot load checkpoint: {exc}", file=sys.stderr)
        return 1
    tokens = tokenize(args.text, _tokenizer_options(pipeline))
    ids = encode_batch([tokens], vocab, model.config.max_len)
    p = float(sigmoid(model.forward(ids, mode="eval"))[0])
    label = 1 if p >= 0.5 else 0
    print(f"label={label} p={p:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textcnn",
        description="Train and evaluate from-scratch text classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON run config")
    p_train.add_argument("--config", required=True)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--format", default="two_col", choices=DATASET_FORMATS)
    p_eval.add_argument("--roc", help="write ROC points to this CSV file")
    p_eval.add_argument("--roc-svg", help="render the ROC curve to this SVG file")

    p_base = sub.add_parser("baseline", help="train/evaluate a classical baseline")
    p_base.add_argument("--kind", required=True)
    p_base.add_argument("--data", required=True)
    p_base.add_argument("--format", default="two_col", choices=DATASET_FORMATS)
    p_base.add_argument("--seed", type=int, default=42)
    p_base.add_argument("--val-fraction", type=float, default=0.1)
    p_base.add_argument("--strip-stopwords", action="store_true")
    p_base.add_argument("--min-count", type=int, default=1)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p_grad.add_argument("name", nargs="?", default="all")
    p_grad.add_argument("--corrupt", action="store_true",
                        help="debug: double analytic gradients; must fail")
    p_grad.add_argument("--seed", type=int, default=7)

    p_pred = sub.add_parser("predict", help="classify one text with a checkpoint")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--text", required=True)

    return parser


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "baseline": cmd_baseline,
    "gradcheck": cmd_gradcheck,
    "predict": cmd_predict,
}

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging():
    level = _LOG_LEVELS.get(os.environ.get("TEXTCNN_LOG", "info"), logging.INFO)
    for handler in list(log.handlers):
        log.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    log.addHandler(handler)
    log.setLevel(level)
    log.propagate = False


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
