"""Acceptance verifiers: labels, the oracle verifier, the logistic verifier and ROC analysis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dist import CategoricalDist, RngStream, VocabMismatch, entropy, sample

FEATURE_SCHEMA = "draft-prob-v1"
FEATURE_DIM = 6
PREFIX_LEN_CAP = 64
LOG_FLOOR = 1e-12
CATEGORIES = ("original", "draft-completed", "target-completed", "mixed")
VERIFIER_MAGIC = "sprinterlab-verifier"
VERIFIER_VERSION = 1


class DegenerateLabels(ValueError):
    pass


class SingleClass(ValueError):
    pass


class ZeroTargetProb(ValueError):
    pass


@dataclass(frozen=True)
class VerifierQuality:
    eta_tp: float
    eta_fp: float

    def __post_init__(self):
        for name in ("eta_tp", "eta_fp"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is outside [0, 1]")


@dataclass(frozen=True)
class OracleVerifier:
    """Verifier with exact i.i.d. Bernoulli behaviour given the true label.

    ``lam`` is the acceptability cutoff the oracle uses for the truth.
    """

    quality: VerifierQuality
    lam: float = 1.0


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: int
    category: str = "original"


@dataclass
class LogisticVerifier:
    weights: np.ndarray
    bias: float = 0.0
    tau: float = 0.5
    lambda_train: float = 1.0
    history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau={self.tau} must be in (0, 1)")


def ground_truth_label(q_x: float, p_x: float, lam: float = 1.0) -> int:
    """1 iff ``q_x / p_x <= lam``; an impossible-under-target token gets 0."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if p_x <= 0.0:
        if q_x > 0.0:
            return 0
        raise ZeroTargetProb("both q(x) and p(x) are zero")
    return int(q_x / p_x <= lam)


def oracle_decide(true_label: int, quality: VerifierQuality, rng: RngStream) -> int:
    rate = quality.eta_tp if true_label else quality.eta_fp
    return int(rng.random() < rate)


def featurize(q_dist: CategoricalDist, token: int, prefix_len: int) -> np.ndarray:
    """Draft-side features of a sampled token.

    ``[log q(x), H(q), q(x) - max q, rank(x)/(V-1), max q, min(len, 64)/64]``
    where rank 0 is the most probable token and ties share the best rank.
    """
    probs = q_dist.probs
    V = probs.size
    if not 0 <= token < V:
        raise IndexError(f"token {token} outside vocab of size {V}")
    qx = float(probs[token])
    top = float(probs.max())
    rank = int((probs > qx).sum())
    return np.array([
        math.log(max(qx, LOG_FLOOR)),
        entropy(q_dist),
        qx - top,
        rank / (V - 1) if V > 1 else 0.0,
        top,
        min(prefix_len, PREFIX_LEN_CAP) / PREFIX_LEN_CAP,
    ])


def _continue(prefix: list, models, rng: RngStream, length: int, pick) -> list:
    seq = list(prefix)
    for _ in range(length):
        model = models[pick()]
        seq.append(sample(model.next_dist(seq), rng))
    return seq


def build_training_set(draft, target, seed_prefixes: Sequence[Sequence[int]], per_category: int,
                       lam: float, rng: RngStream, max_continuation: int = 8) -> list[LabeledExample]:
    """Equal-proportion dataset over the four prefix categories.

    Each example is a draft-sampled token after the (possibly extended)
    prefix, labelled against the target distribution at ``lam``.
    """
    if draft.vocab_size != target.vocab_size:
        raise VocabMismatch("draft and target vocabularies differ")
    if not seed_prefixes:
        raise ValueError("need at least one seed prefix")
    models = (draft, target)
    out = []
    for cat in CATEGORIES:
        for _ in range(per_category):
            prefix = list(seed_prefixes[int(rng.random() * len(seed_prefixes))])
            n = 1 + int(rng.random() * max_continuation)
            if cat == "draft-completed":
                prefix = _continue(prefix, models, rng, n, lambda: 0)
            elif cat == "target-completed":
                prefix = _continue(prefix, models, rng, n, lambda: 1)
            elif cat == "mixed":
                prefix = _continue(prefix, models, rng, n, lambda: int(rng.random() < 0.5))
            q = draft.next_dist(prefix)
            x = sample(q, rng)
            p_x = target.next_dist(prefix)[x]
            out.append(LabeledExample(featurize(q, x, len(prefix)), ground_truth_label(q[x], p_x, lam), cat))
    return out


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _bce(prob: np.ndarray, y: np.ndarray) -> float:
    prob = np.clip(prob, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(prob) + (1 - y) * np.log(1 - prob)))


def train_logistic(examples: Sequence[LabeledExample], epochs: int = 500, lr: float = 0.01, tau: float = 0.5,
                   lambda_train: float = 1.0, seed: int = 0, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> LogisticVerifier:
    """Full-batch Adam on binary cross-entropy.

    Features are standardized for the optimizer and the scaling is folded
    back into the returned weights, so the verifier consumes raw features.
    """
    X = np.array([e.features for e in examples], dtype=np.float64)
    y = np.array([e.label for e in examples], dtype=np.float64)
    if len(examples) == 0 or y.min() == y.max():
        raise DegenerateLabels("training set needs both labels")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd < 1e-12] = 1.0
    Z = (X - mu) / sd

    rs = np.random.default_rng(seed)
    w = rs.normal(0.0, 0.01, size=X.shape[1])
    b = 0.0
    m_w, v_w = np.zeros_like(w), np.zeros_like(w)
    m_b = v_b = 0.0
    history = []
    for t in range(1, epochs + 1):
        prob = _sigmoid(Z @ w + b)
        history.append(_bce(prob, y))
        err = prob - y
        g_w = Z.T @ err / len(y)
        g_b = float(err.mean())
        m_w = beta1 * m_w + (1 - beta1) * g_w
        v_w = beta2 * v_w + (1 - beta2) * g_w ** 2
        m_b = beta1 * m_b + (1 - beta1) * g_b
        v_b = beta2 * v_b + (1 - beta2) * g_b ** 2
        c1, c2 = 1 - beta1 ** t, 1 - beta2 ** t
        w = w - lr * (m_w / c1) / (np.sqrt(v_w / c2) + eps)
        b = b - lr * (m_b / c1) / (math.sqrt(v_b / c2) + eps)
    history.append(_bce(_sigmoid(Z @ w + b), y))

    raw_w = w / sd
    raw_b = float(b - (raw_w * mu).sum())
    return LogisticVerifier(raw_w, raw_b, tau, lambda_train, history)


def verifier_score(v: LogisticVerifier, f: np.ndarray) -> float:
    return float(_sigmoid(float(np.dot(v.weights, f)) + v.bias))


def verifier_decide(v: LogisticVerifier, f: np.ndarray, tau: float | None = None) -> int:
    """Accept iff the score is strictly above ``tau``."""
    return int(verifier_score(v, f) > (v.tau if tau is None else tau))


def _both_classes(labels: np.ndarray) -> None:
    if labels.size == 0 or labels.min() == labels.max():
        raise SingleClass("need both positive and negative examples")


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for t, f, r in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(t)), repr(float(f)), repr(float(r))])


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """Sweep every distinct score as a ``score >= threshold`` cutoff; AUC by trapezoids."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    _both_classes(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    cut = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[cut]
    fp = np.cumsum(1 - y)[cut]
    tpr = np.r_[0.0, tp / y.sum()]
    fpr = np.r_[0.0, fp / (y.size - y.sum())]
    thresholds = np.r_[np.inf, s[cut]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc)


def decide_example(verifier, example: LabeledExample, rng: RngStream | None = None, tau: float | None = None) -> int:
    if isinstance(verifier, OracleVerifier):
        if rng is None:
            raise ValueError("oracle decisions need an RngStream")
        return oracle_decide(example.label, verifier.quality, rng)
    return verifier_decide(verifier, example.features, tau)


def measure_quality(verifier, heldout: Sequence[LabeledExample], rng: RngStream | None = None,
                    tau: float | None = None) -> VerifierQuality:
    labels = np.array([e.label for e in heldout])
    _both_classes(labels)
    decisions = np.array([decide_example(verifier, e, rng, tau) for e in heldout])
    pos = labels == 1
    return VerifierQuality(float(decisions[pos].mean()), float(decisions[~pos].mean()))


def save_verifier(v: LogisticVerifier, path) -> None:
    body = {
        "bias": float(v.bias),
        "feature_schema": FEATURE_SCHEMA,
        "format": VERIFIER_MAGIC,
        "lambda_train": float(v.lambda_train),
        "tau": float(v.tau),
        "version": VERIFIER_VERSION,
        "weights": [float(x) for x in v.weights],
    }
    Path(path).write_text(json.dumps(body, sort_keys=True, indent=1) + "\n")


def load_verifier(path) -> LogisticVerifier:
    from .lm import FormatError

    try:
        body = json.loads(Path(path).read_text())
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
    if body.get("format") != VERIFIER_MAGIC or body.get("version") != VERIFIER_VERSION:
        raise FormatError(f"{path}: not a version-{VERIFIER_VERSION} verifier file")
    if body.get("feature_schema") != FEATURE_SCHEMA or len(body.get("weights", ())) != FEATURE_DIM:
        raise FormatError(f"{path}: feature schema mismatch")
    return LogisticVerifier(np.array(body["weights"]), body["bias"], body["tau"], body["lambda_train"])
