"""Decoding engines with full call and cost accounting.

Three engines share one trace format:

* ``run_sprinter``: sequential approximate verification. A cheap verifier
  judges every draft token; the target runs once per rejection.
* ``run_sd``: standard speculative decoding with gamma-token drafting and
  parallel target verification.
* ``run_target_only``: plain autoregressive sampling from the target.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dist import CategoricalDist, RngStream, VocabMismatch, residual_dist, sample, sample_many
from .verifier import (
    LogisticVerifier,
    OracleVerifier,
    VerifierQuality,
    featurize,
    ground_truth_label,
    oracle_decide,
    verifier_score,
)

TRACE_SCHEMA = "sprinterlab-trace/1"
SOURCES = ("draft-accepted", "target-kept", "target-resampled", "target-sampled")
KEPT_DRAFT = ("draft-accepted", "target-kept")


class InvalidTau(ValueError):
    pass


@dataclass(frozen=True)
class CostModel:
    """Per-invocation time units and FLOPs for draft, target and verifier."""

    t_d: float = 1.0
    t_t: float = 10.0
    t_v: float = 0.05
    F_d: float = 1.0
    F_t: float = 9.0
    F_v: float = 0.001

    def __post_init__(self):
        vals = asdict(self)
        bad = [k for k, v in vals.items() if not v >= 0]
        if bad:
            raise ValueError(f"cost fields must be non-negative: {bad}")
        if not self.t_v <= self.t_d <= self.t_t:
            warnings.warn("cost model does not satisfy t_v <= t_d <= t_t", stacklevel=2)


@dataclass
class StepRecord:
    token: int
    source: str
    q_x: float | None
    p_x: float | None = None
    verifier_score: float | None = None
    draft_calls: int = 0
    target_calls: int = 0
    verifier_calls: int = 0
    target_positions: int = 0
    round: int = 0
    proposal: int | None = None


@dataclass
class RunTrace:
    method: str
    steps: list[StepRecord]
    cost: CostModel
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    truncated: bool = False

    @property
    def tokens(self) -> list[int]:
        return [s.token for s in self.steps]

    @property
    def draft_calls(self) -> int:
        return sum(s.draft_calls for s in self.steps)

    @property
    def target_calls(self) -> int:
        return sum(s.target_calls for s in self.steps)

    @property
    def verifier_calls(self) -> int:
        return sum(s.verifier_calls for s in self.steps)

    @property
    def target_positions(self) -> int:
        return sum(s.target_positions for s in self.steps)

    @property
    def simulated_time(self) -> float:
        c = self.cost
        return self.draft_calls * c.t_d + self.target_calls * c.t_t + self.verifier_calls * c.t_v

    @property
    def flops(self) -> float:
        c = self.cost
        return self.draft_calls * c.F_d + self.target_positions * c.F_t + self.verifier_calls * c.F_v

    @property
    def n_rounds(self) -> int:
        return len({s.round for s in self.steps})

    def kept_per_round(self) -> list[int]:
        """Draft-proposed tokens that survived, grouped by round."""
        rounds: dict[int, int] = {}
        for s in self.steps:
            rounds.setdefault(s.round, 0)
            rounds[s.round] += s.source in KEPT_DRAFT
        return [rounds[k] for k in sorted(rounds)]

    def totals(self) -> dict:
        return {
            "draft_calls": self.draft_calls,
            "target_calls": self.target_calls,
            "verifier_calls": self.verifier_calls,
            "target_positions": self.target_positions,
            "simulated_time": self.simulated_time,
            "flops": self.flops,
            "tokens": len(self.steps),
            "rounds": self.n_rounds,
            "truncated": self.truncated,
        }

    def to_jsonl(self, path) -> None:
        # wall_time stays out of the file so reruns are byte-identical
        with open(path, "w") as fh:
            for s in self.steps:
                fh.write(json.dumps({"kind": "step", **asdict(s)}, sort_keys=True) + "\n")
            fh.write(json.dumps({
                "kind": "totals",
                "schema": TRACE_SCHEMA,
                "method": self.method,
                "cost": asdict(self.cost),
                "config": self.config,
                **self.totals(),
            }, sort_keys=True) + "\n")


def _check_pair(draft, target) -> None:
    if draft.vocab_size != target.vocab_size:
        raise VocabMismatch(f"draft V={draft.vocab_size} but target V={target.vocab_size}")


def _correct(p: CategoricalDist, q: CategoricalDist, x: int, rng: RngStream) -> tuple[int, str]:
    """Keep ``x`` with probability min(1, p/q), else resample from the residual."""
    if rng.random() < min(1.0, p[x] / q[x]):
        return x, "target-kept"
    return sample(residual_dist(p, q), rng), "target-resampled"


def run_sprinter(draft, target, verifier, prefix: Sequence[int], max_new_tokens: int = 20,
                 tau: float | None = None, cost: CostModel | None = None,
                 rng: RngStream | None = None) -> RunTrace:
    """Sequential approximate verification.

    Draft tokens are appended while the verifier accepts them. On a
    rejection the target runs once on the rejected token and either keeps
    it or resamples from the residual distribution. A run that hits
    ``max_new_tokens`` mid-draft ends without a target call and is flagged
    ``truncated``.
    """
    _check_pair(draft, target)
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be >= 1")
    cost = cost or CostModel()
    rng = rng or RngStream()
    oracle = isinstance(verifier, OracleVerifier)
    if not oracle:
        if not isinstance(verifier, LogisticVerifier):
            raise TypeError(f"unsupported verifier {type(verifier).__name__}")
        tau = verifier.tau if tau is None else tau
        if not 0.0 < tau < 1.0:
            raise InvalidTau(f"tau={tau} must be in (0, 1)")

    start = time.perf_counter()
    seq = list(prefix)
    steps: list[StepRecord] = []
    rnd = 0
    while len(steps) < max_new_tokens:
        q = draft.next_dist(seq)
        x = sample(q, rng)
        score = None
        if oracle:
            # the oracle peeks at p(x) for the truth; not billed as a target call
            truth = ground_truth_label(q[x], target.next_dist(seq)[x], verifier.lam)
            accept = oracle_decide(truth, verifier.quality, rng)
        else:
            score = verifier_score(verifier, featurize(q, x, len(seq)))
            accept = score > tau
        if accept:
            steps.append(StepRecord(x, "draft-accepted", q[x], None, score, 1, 0, 1, 0, rnd, x))
            seq.append(x)
            continue
        p = target.next_dist(seq)
        tok, src = _correct(p, q, x, rng)
        steps.append(StepRecord(tok, src, q[x], p[x], score, 1, 1, 1, 1, rnd, x))
        seq.append(tok)
        rnd += 1

    config = {"prefix_len": len(prefix), "max_new_tokens": max_new_tokens, "seed": rng.seed,
              "stream_id": rng.stream_id}
    if oracle:
        config.update(verifier="oracle", eta_tp=verifier.quality.eta_tp, eta_fp=verifier.quality.eta_fp)
    else:
        config.update(verifier="logistic", tau=tau)
    return RunTrace("sprinter", steps, cost, config, time.perf_counter() - start,
                    truncated=bool(steps) and steps[-1].source == "draft-accepted")


def run_sd(draft, target, prefix: Sequence[int], gamma: int = 4, max_new_tokens: int = 20,
           cost: CostModel | None = None, rng: RngStream | None = None) -> RunTrace:
    """Standard speculative decoding.

    Each round drafts ``gamma`` tokens (fewer near the budget), runs the
    target once over all positions, keeps the longest accepted run and
    emits either a residual correction or a bonus target token. A round
    bills one target call of latency but ``gamma`` target positions of
    FLOPs.
    """
    _check_pair(draft, target)
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if max_new_tokens < 0:
        raise ValueError("max_new_tokens must be >= 0")
    cost = cost or CostModel()
    rng = rng or RngStream()

    start = time.perf_counter()
    seq = list(prefix)
    steps: list[StepRecord] = []
    rnd = 0
    while len(steps) < max_new_tokens:
        g = min(gamma, max_new_tokens - len(steps))
        drafted, qs = [], []
        for _ in range(g):
            q = draft.next_dist(seq + drafted)
            drafted.append(sample(q, rng))
            qs.append(q)

        emitted: list[StepRecord] = []
        for i, (x, q) in enumerate(zip(drafted, qs)):
            p = target.next_dist(seq + drafted[:i])
            tok, src = _correct(p, q, x, rng)
            emitted.append(StepRecord(tok, src, q[x], p[x], None, 1 if src == "target-kept" else 0,
                                      round=rnd, proposal=x))
            if src == "target-resampled":
                break
        else:
            if len(steps) + g < max_new_tokens:
                p = target.next_dist(seq + drafted)
                emitted.append(StepRecord(sample(p, rng), "target-sampled", None, round=rnd))

        last = emitted[-1]
        last.draft_calls += g - sum(s.draft_calls for s in emitted)
        last.target_calls = 1
        last.target_positions = g
        steps.extend(emitted)
        seq.extend(s.token for s in emitted)
        rnd += 1

    config = {"prefix_len": len(prefix), "gamma": gamma, "max_new_tokens": max_new_tokens,
              "seed": rng.seed, "stream_id": rng.stream_id}
    return RunTrace("sd", steps, cost, config, time.perf_counter() - start)


def run_target_only(target, prefix: Sequence[int], max_new_tokens: int = 20, cost: CostModel | None = None,
                    rng: RngStream | None = None) -> RunTrace:
    if max_new_tokens < 0:
        raise ValueError("max_new_tokens must be >= 0")
    cost = cost or CostModel()
    rng = rng or RngStream()
    start = time.perf_counter()
    seq = list(prefix)
    steps = []
    for i in range(max_new_tokens):
        p = target.next_dist(seq)
        tok = sample(p, rng)
        steps.append(StepRecord(tok, "target-sampled", None, p[tok], None, 0, 1, 0, 1, i))
        seq.append(tok)
    config = {"prefix_len": len(prefix), "max_new_tokens": max_new_tokens, "seed": rng.seed,
              "stream_id": rng.stream_id}
    return RunTrace("target", steps, cost, config, time.perf_counter() - start)


def sprinter_step_batch(p: CategoricalDist, q: CategoricalDist, quality: VerifierQuality, n: int,
                        rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized single step of ``run_sprinter`` with an oracle verifier on fixed ``p, q``.

    Returns the emitted tokens and a mask of draft proposals that were kept
    (verifier accept or target keep).
    """
    if p.vocab_size != q.vocab_size:
        raise VocabMismatch("p and q differ in vocabulary size")
    x = sample_many(q, rng, n)
    qx, px = q.probs[x], p.probs[x]
    acceptable = qx <= px
    rate = np.where(acceptable, quality.eta_tp, quality.eta_fp)
    verifier_ok = rng.uniform(n) < rate
    target_ok = rng.uniform(n) < np.minimum(1.0, px / qx)
    kept = verifier_ok | target_ok
    out = x.copy()
    need = ~kept
    if need.any():
        out[need] = sample_many(residual_dist(p, q), rng, int(need.sum()))
    return out, kept


def sd_step_batch(p: CategoricalDist, q: CategoricalDist, n: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized first emitted token of ``run_sd`` on fixed ``p, q``."""
    return sprinter_step_batch(p, q, VerifierQuality(0.0, 0.0), n, rng)
