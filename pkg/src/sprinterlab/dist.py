"""Finite categorical distributions and the sampling primitives shared by every engine."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_TOL = 1e-9


class AllZero(ValueError):
    """Raised when a weight vector has no mass to normalize."""


class VocabMismatch(ValueError):
    """Raised when two distributions (or models) disagree on vocabulary size."""


class RngStream:
    """Seedable random stream keyed by ``(seed, stream_id)``.

    Backed by the counter-based Philox bit generator so that each
    ``(seed, stream_id)`` pair maps to its own independent sequence.
    A stream is single-owner; give each parallel trial its own.
    """

    def __init__(self, seed: int = 0, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.gen = np.random.Generator(np.random.Philox(ss))

    def random(self) -> float:
        return float(self.gen.random())

    def uniform(self, n: int) -> np.ndarray:
        return self.gen.random(n)

    def spawn(self, stream_id: int) -> "RngStream":
        """Sibling stream with the same seed and a different id."""
        return RngStream(self.seed, stream_id)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class CategoricalDist:
    """Probability vector over dense token ids ``0..V-1``.

    Construction renormalizes when the sum is within ``PROB_TOL`` of one and
    fails otherwise.
    """

    probs: np.ndarray
    _cdf: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64).reshape(-1)
        if p.size < 1:
            raise ValueError("distribution needs at least one entry")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("probabilities must be finite and non-negative")
        s = float(p.sum())
        if abs(s - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities sum to {s!r}, not 1")
        p = p / s
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

        cdf = np.cumsum(p)
        last = int(np.flatnonzero(p)[-1])
        cdf[last:] = 1.0
        object.__setattr__(self, "_cdf", tuple(cdf.tolist()))

    @property
    def vocab_size(self) -> int:
        return int(self.probs.size)

    @property
    def cdf(self) -> np.ndarray:
        return np.asarray(self._cdf)

    def __getitem__(self, token: int) -> float:
        return float(self.probs[token])

    def __len__(self) -> int:
        return self.vocab_size

    def __eq__(self, other) -> bool:
        if not isinstance(other, CategoricalDist):
            return NotImplemented
        return self.vocab_size == other.vocab_size and bool(np.array_equal(self.probs, other.probs))

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    @classmethod
    def uniform(cls, vocab_size: int) -> "CategoricalDist":
        return cls(np.full(vocab_size, 1.0 / vocab_size))

    @classmethod
    def point(cls, token: int, vocab_size: int) -> "CategoricalDist":
        p = np.zeros(vocab_size)
        p[token] = 1.0
        return cls(p)


def normalize(weights: Sequence[float]) -> CategoricalDist:
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    s = float(w.sum())
    if s <= 0.0:
        raise AllZero("weights sum to zero")
    return CategoricalDist(w / s)


def sample(dist: CategoricalDist, rng: RngStream) -> int:
    """Inverse-CDF draw; zero-probability ids are never returned."""
    return bisect.bisect_right(dist._cdf, rng.random())


def sample_many(dist: CategoricalDist, rng: RngStream, n: int) -> np.ndarray:
    return np.searchsorted(dist.cdf, rng.uniform(n), side="right")


def _check_vocab(p: CategoricalDist, q: CategoricalDist) -> None:
    if p.vocab_size != q.vocab_size:
        raise VocabMismatch(f"vocab sizes differ: {p.vocab_size} vs {q.vocab_size}")


def tv_distance(p: CategoricalDist, q: CategoricalDist) -> float:
    _check_vocab(p, q)
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def residual_dist(p: CategoricalDist, q: CategoricalDist) -> CategoricalDist:
    """``norm(max(0, p - q))``; falls back to ``p`` when ``p == q``."""
    _check_vocab(p, q)
    try:
        return normalize(np.maximum(0.0, p.probs - q.probs))
    except AllZero:
        return p


def sprinter_mixture(p: CategoricalDist, q: CategoricalDist, eta_fp: float) -> CategoricalDist:
    """Token law of sequential approximate verification: ``(1-eta_fp) p + eta_fp q``."""
    _check_vocab(p, q)
    if not 0.0 <= eta_fp <= 1.0:
        raise ValueError("eta_fp must lie in [0, 1]")
    return CategoricalDist((1.0 - eta_fp) * p.probs + eta_fp * q.probs)


def entropy(dist: CategoricalDist) -> float:
    p = dist.probs[dist.probs > 0]
    return float(-(p * np.log(p)).sum())


def empirical(tokens: np.ndarray, vocab_size: int) -> CategoricalDist:
    counts = np.bincount(np.asarray(tokens, dtype=np.int64), minlength=vocab_size)
    return normalize(counts[:vocab_size])


def log_prob(dist: CategoricalDist, token: int, floor: float = 0.0) -> float:
    x = dist.probs[token]
    if x <= floor:
        return math.log(floor) if floor > 0 else -math.inf
    return math.log(x)
