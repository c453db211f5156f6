#!/usr/bin/env python3
"""Train the classical baselines and the small convolutional model on the
bundled corpus (or a real Sentiment140 CSV) and print test accuracies.

This is the standalone version of the accuracy-band experiment from the
acceptance suite: one seeded 85/15 split shared by all three learners.

Usage: python scripts/run_sanity_bands.py [corpus.csv] [seed]
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np  # noqa: E402

from textcnn import baselines as B  # noqa: E402
from textcnn import metrics as MT  # noqa: E402
from textcnn import models as M  # noqa: E402
from textcnn import train as T  # noqa: E402
from textcnn.layers import sigmoid  # noqa: E402
from textcnn.tensor import Pcg32  # noqa: E402
from textcnn.text import (  # noqa: E402
    TokenizerOptions,
    build_vocab,
    encode_batch,
    load_dataset,
    tokenize,
)

DEFAULT_CORPUS = Path(__file__).resolve().parent.parent / "data" / "substitute_tweets_10k.csv"


def main(corpus=DEFAULT_CORPUS, seed=42):
    seed = int(seed)
    start = time.time()
    records = load_dataset(corpus, "sentiment140")
    token_lists = [tokenize(text, TokenizerOptions()) for _, text in records]
    labels = np.array([lab for lab, _ in records], dtype=np.float64)
    train_idx, test_idx = T.train_val_split(len(records), 0.15, seed)
    vocab = build_vocab([token_lists[i] for i in train_idx], min_count=2)
    print(f"{len(train_idx)} train / {len(test_idx)} test, vocab {vocab.size}")

    docs = B.bow_from_tokens(token_lists, vocab)
    tr = [docs[i] for i in train_idx]
    te = [docs[i] for i in test_idx]
    y_tr = labels[train_idx].astype(np.int64)
    y_te = labels[test_idx].astype(np.int64)

    nb = B.nb_fit(tr, y_tr, vocab.size, alpha=1.0)
    print(f"nb        accuracy={MT.accuracy([B.nb_predict(nb, d)[0] for d in te], y_te):.4f}")

    svm = B.svm_fit(tr, y_tr, vocab.size, lam=1e-4, epochs=5, rng=Pcg32(seed, 4))
    print(f"svm       accuracy={MT.accuracy([B.svm_predict(svm, d) for d in te], y_te):.4f}")

    cfg = M.ModelConfig(arch="kim_cnn", emb_dim=32, filter_sizes=(2, 3, 4),
                        num_filters=16, max_len=24)
    ids = encode_batch(token_lists, vocab, cfg.max_len)
    model = M.build(cfg, vocab.size, Pcg32(seed, 1))
    T.fit(model, (ids[train_idx], labels[train_idx]), None,
          T.TrainConfig(batch_size=32, epochs=5, lr=1e-3, seed=seed))
    probs = sigmoid(T.evaluate_logits(model, ids[test_idx]))
    print(f"kim_cnn   accuracy={MT.accuracy((probs >= 0.5).astype(np.int64), y_te):.4f}")
    print(f"done in {time.time() - start:.0f}s")


if __name__ == "__main__":
    main(*sys.argv[1:])
