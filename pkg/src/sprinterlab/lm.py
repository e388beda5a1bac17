"""Toy language models that play the draft and target roles.

Order-k n-gram models with additive smoothing, trained on a plain text
corpus, plus a fixed-table synthetic model for exact-distribution
experiments.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dist import CategoricalDist, VocabMismatch

BOS = "<s>"
MODES = ("whitespace", "char")
MODEL_MAGIC = "#sprinterlab-ngram"
MODEL_VERSION = 1


class EmptyCorpus(ValueError):
    pass


class CorpusTooShort(ValueError):
    pass


class ZeroProbability(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class Vocab:
    symbols: list[str] = field(default_factory=lambda: [BOS])
    mode: str = "char"

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != BOS:
            raise ValueError("vocab must reserve id 0 for the BOS symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocab symbols must be unique")
        if self.mode not in MODES:
            raise ValueError(f"unknown tokenizer mode {self.mode!r}")
        self.lookup = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def split(self, text: str) -> list[str]:
        return text.split() if self.mode == "whitespace" else list(text)

    def add(self, symbol: str) -> int:
        if symbol not in self.lookup:
            self.lookup[symbol] = len(self.symbols)
            self.symbols.append(symbol)
        return self.lookup[symbol]

    def encode(self, text: str) -> list[int]:
        """Map text onto existing ids; unknown symbols raise ``KeyError``."""
        out = []
        for s in self.split(text):
            if s not in self.lookup:
                raise KeyError(f"symbol {s!r} is not in the vocabulary")
            out.append(self.lookup[s])
        return out

    def decode(self, ids: Iterable[int]) -> str:
        parts = [self.symbols[i] for i in ids if i != 0]
        return " ".join(parts) if self.mode == "whitespace" else "".join(parts)


def tokenize(text: str, mode: str = "whitespace", vocab: Vocab | None = None) -> tuple[list[int], Vocab]:
    """Tokenize ``text``, growing ``vocab`` (or a fresh one) in first-seen order."""
    if not text or (mode == "whitespace" and not text.split()):
        raise EmptyCorpus("corpus is empty")
    vocab = vocab if vocab is not None else Vocab(mode=mode)
    if vocab.mode != mode:
        raise ValueError(f"vocab was built in {vocab.mode!r} mode, not {mode!r}")
    ids = [vocab.add(s) for s in vocab.split(text)]
    return ids, vocab


def detokenize(ids: Iterable[int], vocab: Vocab) -> str:
    return vocab.decode(ids)


class NGramModel:
    """Order-k Markov model with add-alpha smoothing.

    Contexts shorter than ``k`` are left-padded with BOS (id 0), both during
    training and at query time.
    """

    def __init__(self, k: int, vocab: Vocab, counts: Mapping[tuple, Mapping[int, int]], alpha: float = 0.1):
        if k < 1:
            raise ValueError("order k must be >= 1")
        if alpha < 0 or not math.isfinite(alpha):
            raise ValueError("alpha must be a finite non-negative real")
        self.k = int(k)
        self.vocab = vocab
        self.alpha = float(alpha)
        self.counts = {tuple(c): dict(row) for c, row in counts.items()}
        self._cached = lru_cache(maxsize=None)(self._dist_for)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def context(self, prefix: Sequence[int]) -> tuple:
        tail = tuple(prefix[-self.k:]) if len(prefix) else ()
        return (0,) * (self.k - len(tail)) + tail

    def _dist_for(self, ctx: tuple) -> CategoricalDist:
        V = self.vocab_size
        row = self.counts.get(ctx)
        if not row:
            return CategoricalDist.uniform(V)
        w = np.full(V, self.alpha)
        for tok, c in row.items():
            w[tok] += c
        return CategoricalDist(w / w.sum())

    def next_dist(self, prefix: Sequence[int]) -> CategoricalDist:
        return self._cached(self.context(prefix))

    def __repr__(self) -> str:
        return f"NGramModel(k={self.k}, V={self.vocab_size}, alpha={self.alpha}, contexts={len(self.counts)})"


class SyntheticModel:
    """Model returning configured distributions, optionally keyed by prefix length."""

    def __init__(self, dist: CategoricalDist | None = None, table: Mapping[int, CategoricalDist] | None = None):
        if dist is None and not table:
            raise ValueError("need a fixed dist or a per-length table")
        self.default = dist
        self.table = dict(table or {})
        sizes = {d.vocab_size for d in self.table.values()} | ({dist.vocab_size} if dist else set())
        if len(sizes) != 1:
            raise VocabMismatch("synthetic table mixes vocabulary sizes")
        self._V = sizes.pop()

    @property
    def vocab_size(self) -> int:
        return self._V

    def next_dist(self, prefix: Sequence[int]) -> CategoricalDist:
        d = self.table.get(len(prefix), self.default)
        if d is None:
            raise KeyError(f"no distribution configured for prefix length {len(prefix)}")
        return d


def train_ngram(corpus: Sequence[int], k: int, alpha: float = 0.1, vocab: Vocab | None = None) -> NGramModel:
    if len(corpus) <= k:
        raise CorpusTooShort(f"corpus has {len(corpus)} tokens, need more than k={k}")
    if vocab is None:
        V = max(corpus) + 1
        vocab = Vocab([BOS] + [f"t{i}" for i in range(1, V)], mode="whitespace")
    padded = [0] * k + list(corpus)
    counts: dict[tuple, Counter] = defaultdict(Counter)
    for i, tok in enumerate(corpus):
        counts[tuple(padded[i:i + k])][tok] += 1
    return NGramModel(k, vocab, counts, alpha)


def next_dist(model, prefix: Sequence[int]) -> CategoricalDist:
    return model.next_dist(prefix)


def perplexity(model, tokens: Sequence[int], context: Sequence[int] = ()) -> float:
    """``exp`` of the mean negative log-likelihood of ``tokens`` after ``context``."""
    if len(tokens) == 0:
        raise ValueError("need at least one token")
    seq = list(context)
    nll = 0.0
    for tok in tokens:
        px = model.next_dist(seq)[tok]
        if px <= 0.0:
            raise ZeroProbability(f"token {tok} has zero probability after {len(seq)} tokens")
        nll -= math.log(px)
        seq.append(tok)
    return math.exp(nll / len(tokens))


def _dumps(model: NGramModel) -> str:
    rows = sorted(
        [*ctx, tok, c]
        for ctx, row in model.counts.items()
        for tok, c in row.items()
        if c
    )
    body = {
        "alpha": model.alpha,
        "k": model.k,
        "mode": model.vocab.mode,
        "vocab": model.vocab.symbols,
        "counts": rows,
    }
    header = f"{MODEL_MAGIC} v{MODEL_VERSION}\n"
    return header + json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n#end\n"


def save_model(model: NGramModel, path) -> None:
    Path(path).write_text(_dumps(model), encoding="utf-8")


def load_model(path) -> NGramModel:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if len(lines) < 3 or lines[0] != f"{MODEL_MAGIC} v{MODEL_VERSION}" or lines[2] != "#end":
        raise FormatError(f"{path}: bad header, version, or truncated file")
    try:
        body = json.loads(lines[1])
        k = int(body["k"])
        vocab = Vocab(list(body["vocab"]), mode=body["mode"])
        counts: dict[tuple, dict] = defaultdict(dict)
        for row in body["counts"]:
            *ctx, tok, c = row
            if len(ctx) != k:
                raise FormatError(f"{path}: context of length {len(ctx)} in an order-{k} model")
            counts[tuple(ctx)][tok] = c
        return NGramModel(k, vocab, counts, float(body["alpha"]))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{path}: {e}") from e
