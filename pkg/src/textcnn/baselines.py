"""Classical comparators: multinomial naive Bayes, a Pegasos-style linear
SVM, and a chi-squared feature-selection + logistic-regression pipeline.

Documents are sparse bags of words: dict token-id -> count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import sigmoid
from .tensor import Pcg32

BowVector = dict


def bow_from_tokens(token_lists, vocab) -> list[dict]:
    """Count vectors over vocabulary ids (unknown tokens map to unk)."""
    docs = []
    for tokens in token_lists:
        doc: dict[int, int] = {}
        for t in tokens:
            tid = vocab.id_of(t)
            doc[tid] = doc.get(tid, 0) + 1
        docs.append(doc)
    return docs


def _check_two_classes(labels):
    labels = np.asarray(labels)
    if not ((labels == 0).any() and (labels == 1).any()):
        raise ValueError("need both classes present")
    return labels


# ---------------------------------------------------------------------------
# multinomial naive Bayes


@dataclass
class NbModel:
    log_prior: np.ndarray  # [2]
    log_lik: np.ndarray  # [2, vocab_size]
    alpha: float


def nb_fit(docs, labels, vocab_size: int, alpha: float = 1.0) -> NbModel:
    """Priors from class frequency; likelihood(w|c) with additive smoothing
    (count(w,c) + alpha) / (total(c) + alpha * vocab_size), kept in logs."""
    labels = _check_two_classes(labels)
    counts = np.zeros((2, vocab_size), dtype=np.float64)
    for doc, y in zip(docs, labels):
        for tid, c in doc.items():
            counts[y, tid] += c
    totals = counts.sum(axis=1)
    n = len(labels)
    with np.errstate(divide="ignore"):  # alpha=0 legitimately yields -inf
        log_lik = np.log(
            (counts + alpha) / (totals + alpha * vocab_size)[:, None]
        )
        log_prior = np.log(
            np.array([(labels == 0).sum(), (labels == 1).sum()]) / n
        )
    return NbModel(log_prior, log_lik, alpha)


def nb_scores(model: NbModel, doc) -> np.ndarray:
    """Unnormalized log-posterior per class; out-of-vocabulary ids ignored."""
    vocab_size = model.log_lik.shape[1]
    scores = model.log_prior.copy()
    for tid, c in doc.items():
        if 0 <= tid < vocab_size:
            scores += c * model.log_lik[:, tid]
    return scores


def nb_predict(model: NbModel, doc):
    """Returns (label, log-posterior margin); ties go to label 0."""
    s = nb_scores(model, doc)
    margin = s[1] - s[0]
    return (1 if s[1] > s[0] else 0), float(margin)


# ---------------------------------------------------------------------------
# Pegasos linear SVM


@dataclass
class SvmModel:
    w: np.ndarray
    b: float


def _doc_arrays(docs):
    return [
        (np.fromiter(d.keys(), dtype=np.int64, count=len(d)),
         np.fromiter(d.values(), dtype=np.float64, count=len(d)))
        for d in docs
    ]


def svm_fit(docs, labels, vocab_size: int, lam: float = 1e-4, epochs: int = 5,
            rng: Pcg32 | None = None) -> SvmModel:
    """Stochastic subgradient descent on the hinge loss with L2 penalty lam
    and step size 1/(lam*t).

    The bias is kept out of the regularizer and moves with a 1/t step, so
    for huge lam the weights vanish and the decision reduces to sign(b).
    """
    labels = _check_two_classes(labels)
    rng = rng or Pcg32(0, 7)
    signs = 2.0 * labels - 1.0
    pairs = _doc_arrays(docs)
    w = np.zeros(vocab_size, dtype=np.float64)
    b = 0.0
    t = 0
    n = len(pairs)
    for _ in range(epochs):
        order = rng.permutation(n)
        for i in order:
            t += 1
            tids, cnts = pairs[i]
            y = signs[i]
            margin = y * (float(w[tids] @ cnts) + b)
            w *= 1.0 - 1.0 / t  # (1 - eta*lam) with eta = 1/(lam*t)
            if margin < 1.0:
                w[tids] += (y / (lam * t)) * cnts
                b += y / t
    return SvmModel(w, b)


def svm_decision(model: SvmModel, doc) -> float:
    total = model.b
    vocab_size = len(model.w)
    for tid, c in doc.items():
        if 0 <= tid < vocab_size:
            total += model.w[tid] * c
    return float(total)


def svm_predict(model: SvmModel, doc) -> int:
    return 1 if svm_decision(model, doc) > 0 else 0


def svm_objective(model: SvmModel, docs, labels, lam: float) -> float:
    """lam/2 ||w||^2 + mean hinge loss (bias unregularized)."""
    signs = 2.0 * np.asarray(labels, dtype=np.float64) - 1.0
    hinge = [
        max(0.0, 1.0 - s * svm_decision(model, d)) for d, s in zip(docs, signs)
    ]
    return 0.5 * lam * float(model.w @ model.w) + float(np.mean(hinge))


# ---------------------------------------------------------------------------
# chi-squared selection + logistic regression


def chi2_scores(docs, labels, vocab_size: int) -> np.ndarray:
    """Per-feature chi-squared statistic of class dependence, computed from
    summed counts per class against expected = class doc-fraction x feature
    total (the count-data convention)."""
    labels = np.asarray(labels)
    observed = np.zeros((2, vocab_size), dtype=np.float64)
    for doc, y in zip(docs, labels):
        for tid, c in doc.items():
            observed[y, tid] += c
    feature_total = observed.sum(axis=0)
    class_frac = np.array(
        [(labels == 0).mean(), (labels == 1).mean()], dtype=np.float64
    )
    expected = np.outer(class_frac, feature_total)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (observed - expected) ** 2 / expected
    terms[expected == 0] = 0.0
    return terms.sum(axis=0)


def chi2_select(docs, labels, vocab_size: int, k: int):
    """Top-k feature ids by chi-squared score (ties to the lower id),
    returned with their scores."""
    if k > vocab_size:
        raise ValueError(f"k={k} exceeds vocab_size={vocab_size}")
    scores = chi2_scores(docs, labels, vocab_size)
    order = np.lexsort((np.arange(vocab_size), -scores))
    top = order[:k]
    return top, scores[top]


def docs_to_dense(docs, feature_ids) -> np.ndarray:
    """Dense count matrix restricted to the selected features."""
    col = {int(f): j for j, f in enumerate(feature_ids)}
    x = np.zeros((len(docs), len(feature_ids)), dtype=np.float64)
    for i, doc in enumerate(docs):
        for tid, c in doc.items():
            j = col.get(tid)
            if j is not None:
                x[i, j] = c
    return x


@dataclass
class LogRegModel:
    w: np.ndarray
    b: float
    c: float  # inverse regularization strength that won cross-validation


def logreg_loss_grad(w, b, x, y, c):
    """Mean logistic loss plus 1/(2C) ||w||^2 (bias unpenalized), with its
    gradient."""
    z = x @ w + b
    loss = float(
        (np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()
    ) + 0.5 / c * float(w @ w)
    p = sigmoid(z)
    gw = x.T @ (p - y) / len(y) + w / c
    gb = float((p - y).mean())
    return loss, gw, gb


def _logreg_fit_one(x, y, c, iters=500, lr=0.1):
    # data term by plain gradient steps; the L2 penalty by its exact
    # proximal (implicit) update, which stays stable for any C
    w = np.zeros(x.shape[1], dtype=np.float64)
    b = 0.0
    shrink = 1.0 + lr / c
    for _ in range(iters):
        p = sigmoid(x @ w + b)
        gw = x.T @ (p - y) / len(y)
        gb = float((p - y).mean())
        w = (w - lr * gw) / shrink
        b -= lr * gb
    return w, b


def _accuracy(w, b, x, y) -> float:
    return float(((x @ w + b > 0).astype(np.float64) == y).mean())


def logreg_cv_fit(x: np.ndarray, y: np.ndarray, c_grid=(0.01, 0.1, 1.0, 10.0),
                  folds: int = 3, iters: int = 500, lr: float = 0.1) -> LogRegModel:
    """Pick C by mean fold validation accuracy (ties to the larger C),
    then refit on all rows.  Folds are stratified round-robin by index."""
    y = np.asarray(y, dtype=np.float64)
    _check_two_classes(y)
    for cls in (0, 1):
        if (y == cls).sum() < folds:
            raise ValueError(
                f"class {cls} has fewer than {folds} examples; folds degenerate"
            )
    fold_id = np.empty(len(y), dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        fold_id[idx] = np.arange(len(idx)) % folds
    best_c, best_acc = None, -1.0
    for c in c_grid:
        accs = []
        for f in range(folds):
            tr, va = fold_id != f, fold_id == f
            w, b = _logreg_fit_one(x[tr], y[tr], c, iters, lr)
            accs.append(_accuracy(w, b, x[va], y[va]))
        mean_acc = float(np.mean(accs))
        if mean_acc > best_acc or (mean_acc == best_acc and c > best_c):
            best_c, best_acc = c, mean_acc
    w, b = _logreg_fit_one(x, y, best_c, iters, lr)
    return LogRegModel(w, b, best_c)
