"""Monte Carlo validation against the closed forms, ROUGE scoring and the benchmark suite."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dist import CategoricalDist, RngStream, empirical, normalize, sample, sprinter_mixture, tv_distance
from .engine import CostModel, run_sd, run_sprinter, run_target_only, sprinter_step_batch
from .lm import perplexity
from .theory import (
    Divergent,
    ScenarioParams,
    acceptance_rate_sd,
    acceptance_rate_sprinter,
    expected_stop_time,
    expected_tokens,
    token_count_pmf,
    token_count_tail,
)
from .verifier import VerifierQuality

PMF_TV_TOL = 0.01
PMF_TV_REF_TRIALS = 100_000


class EmptyReference(ValueError):
    pass


# --------------------------------------------------------------------------- ROUGE

def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def _prf(overlap: float, n_cand: int, n_ref: int) -> dict:
    precision = overlap / n_cand if n_cand else 0.0
    recall = overlap / n_ref if n_ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge(candidate: Sequence, reference: Sequence, variant: str = "rouge1") -> dict:
    """Precision, recall and F1 for ``rouge1``, ``rouge2`` or ``rougeL`` over token sequences."""
    if len(reference) == 0:
        raise EmptyReference("reference must be non-empty")
    candidate, reference = list(candidate), list(reference)
    if variant == "rougeL":
        return _prf(lcs_length(candidate, reference), len(candidate), len(reference))
    if variant not in ("rouge1", "rouge2"):
        raise ValueError(f"unknown ROUGE variant {variant!r}")
    n = int(variant[-1])
    c, r = _ngrams(candidate, n), _ngrams(reference, n)
    overlap = sum((c & r).values())
    return _prf(overlap, sum(c.values()), sum(r.values()))


# --------------------------------------------------------------------------- r-scenario

@dataclass(frozen=True)
class RScenario:
    params: ScenarioParams
    trials: int

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class RScenarioStats:
    trials: int
    counts: np.ndarray
    mean_n: float
    se_n: float
    mean_stop: float
    se_stop: float

    @property
    def pmf(self) -> np.ndarray:
        return np.bincount(self.counts) / self.trials


def simulate_r_scenario(scenario: RScenario, rng: RngStream) -> RScenarioStats:
    """Bernoulli verifier over the first ``r`` (acceptable) tokens, then a geometric run of false accepts."""
    tp, fp, r = scenario.params.eta_tp, scenario.params.eta_fp, scenario.params.r
    if fp >= 1.0:
        raise Divergent("the verifier never stops when eta_fp = 1")
    n = scenario.trials
    accepts = rng.gen.random((n, r)) < tp
    all_ok = accepts.all(axis=1)
    first_reject = np.argmin(accepts, axis=1)
    tail = rng.gen.geometric(1.0 - fp, size=n) - 1
    counts = np.where(all_ok, r + tail, first_reject).astype(np.int64)
    stop = (counts + 1) * scenario.params.t_d
    sd_n = counts.std(ddof=1) if n > 1 else 0.0
    sd_t = stop.std(ddof=1) if n > 1 else 0.0
    return RScenarioStats(n, counts, float(counts.mean()), float(sd_n / math.sqrt(n)),
                          float(stop.mean()), float(sd_t / math.sqrt(n)))


def pmf_tv(stats: RScenarioStats, params: ScenarioParams) -> float:
    """TV between the empirical count histogram and the closed-form pmf, tail mass included."""
    emp = stats.pmf
    theory = np.array([token_count_pmf(params, i) for i in range(emp.size)])
    return 0.5 * (float(np.abs(emp - theory).sum()) + token_count_tail(params, emp.size))


def pmf_tolerance(params: ScenarioParams, trials: int) -> float:
    """0.01 at 1e5+ trials; below that, 1.5x the summed per-bin standard errors (about 3x the expected TV)."""
    if trials >= PMF_TV_REF_TRIALS:
        return PMF_TV_TOL
    total, i = 0.0, 0
    while token_count_tail(params, i) > 1e-12 and i < 100_000:
        pi = token_count_pmf(params, i)
        total += math.sqrt(pi * (1 - pi) / trials)
        i += 1
    return max(PMF_TV_TOL, 1.5 * total)


def sweep_theory_curves(r: int, t_d: float, eta_fp_list: Sequence[float], eta_tp_grid: Sequence[float],
                        trials: int = 100_000, seed: int = 0) -> list[dict]:
    """Closed form vs simulation over an (eta_tp, eta_fp) grid at fixed ``r``.

    Each grid point draws from its own stream so results do not depend on
    iteration order.
    """
    if not eta_fp_list or not eta_tp_grid:
        raise ValueError("grids must be non-empty")
    rows = []
    for i, tp in enumerate(eta_tp_grid):
        base = ScenarioParams(tp, 0.0, r, t_d)
        en0, et0 = expected_tokens(base), expected_stop_time(base)
        for j, fp in enumerate(eta_fp_list):
            params = ScenarioParams(tp, fp, r, t_d)
            en, et = expected_tokens(params), expected_stop_time(params)
            stats = simulate_r_scenario(RScenario(params, trials), RngStream(seed, r * 1_000_000 + i * 1000 + j))
            tv = pmf_tv(stats, params)
            tol = pmf_tolerance(params, trials)
            n_ok = abs(stats.mean_n - en) <= 3 * stats.se_n + 1e-12
            t_ok = abs(stats.mean_stop - et) <= 3 * stats.se_stop + 1e-12
            rows.append({
                "r": r, "t_d": t_d, "eta_tp": tp, "eta_fp": fp, "trials": trials,
                "EN_theory": en, "EN_sim": stats.mean_n, "EN_se": stats.se_n,
                "ET_theory": et, "ET_sim": stats.mean_stop, "ET_se": stats.se_stop,
                "EN_gap": en - en0, "ET_gap": et - et0,
                "pmf_tv": tv, "pmf_tol": tol,
                "EN_ok": n_ok, "ET_ok": t_ok, "pmf_ok": tv <= tol,
            })
    return rows


def write_csv(rows: Sequence[dict], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# --------------------------------------------------------------------------- single-token laws

def make_battery(seed: int = 0, n_pairs: int = 20, sizes: Sequence[int] = (2, 4, 8, 16)) -> list[tuple]:
    """Random ``(p, q)`` pairs cycling through ``sizes``, drawn from a flat Dirichlet."""
    rng = RngStream(seed, 7_000_000)
    out = []
    for i in range(n_pairs):
        V = sizes[i % len(sizes)]
        while True:
            p = CategoricalDist(rng.gen.dirichlet(np.ones(V)))
            q = CategoricalDist(rng.gen.dirichlet(np.ones(V)))
            if tv_distance(p, q) > 1e-3:
                break
        out.append((p, q))
    return out


def validate_token_distribution(p: CategoricalDist, q: CategoricalDist, eta_fp: float, samples: int,
                                rng: RngStream, eta_tp: float = 0.9) -> dict:
    """Empirical one-token law under an oracle verifier vs the mixture law."""
    if samples < 10_000:
        raise ValueError("need at least 1e4 samples")
    tokens, kept = sprinter_step_batch(p, q, VerifierQuality(eta_tp, eta_fp), samples, rng)
    emp = empirical(tokens, p.vocab_size)
    theory = sprinter_mixture(p, q, eta_fp)
    return {
        "empirical": emp,
        "theory": theory,
        "tv_to_theory": tv_distance(emp, theory),
        "tv_to_p": tv_distance(p, emp),
        "tv_to_p_theory": eta_fp * tv_distance(p, q),
        "beta_empirical": float(kept.mean()),
        "beta_theory": acceptance_rate_sprinter(p, q, eta_fp),
    }


def validate_acceptance_rate(p: CategoricalDist, q: CategoricalDist, eta_fp: float, samples: int,
                             rng: RngStream, eta_tp: float = 0.9) -> dict:
    """Fraction of draft proposals kept, by verifier accept or target keep."""
    if samples < 10_000:
        raise ValueError("need at least 1e4 samples")
    _, kept = sprinter_step_batch(p, q, VerifierQuality(eta_tp, eta_fp), samples, rng)
    beta = acceptance_rate_sprinter(p, q, eta_fp)
    emp = float(kept.mean())
    return {"beta_empirical": emp, "beta_theory": beta, "beta_sd": acceptance_rate_sd(p, q),
            "abs_diff": abs(emp - beta)}


def engine_token_distribution(method: str, p: CategoricalDist, q: CategoricalDist, runs: int, rng: RngStream,
                              quality: VerifierQuality | None = None) -> CategoricalDist:
    """Law of the first emitted token over ``runs`` one-token engine runs on fixed ``p, q``."""
    from .lm import SyntheticModel
    from .verifier import OracleVerifier

    draft, target = SyntheticModel(q), SyntheticModel(p)
    cost = CostModel(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    counts = np.zeros(p.vocab_size, dtype=np.int64)
    if method == "sd":
        for _ in range(runs):
            counts[run_sd(draft, target, (), 1, 1, cost, rng).steps[0].token] += 1
    elif method == "sprinter":
        v = OracleVerifier(quality or VerifierQuality(1.0, 0.0))
        for _ in range(runs):
            counts[run_sprinter(draft, target, v, (), 1, None, cost, rng).steps[0].token] += 1
    else:
        raise ValueError(f"unknown method {method!r}")
    return normalize(counts)


def multi_step_drift(draft, target, verifier, prefix: Sequence[int], steps: int, runs: int,
                     rng: RngStream) -> list[dict]:
    """Per-position TV between SPRINTER and target-only token marginals along whole runs.

    Observational only: the single-step law is the proven claim. ``noise_tv``
    compares two independent target-only samples, so drift above it is signal.
    """
    if steps < 1 or runs < 1:
        raise ValueError("steps and runs must be >= 1")
    cost = CostModel(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    V = target.vocab_size
    counts = np.zeros((3, steps, V), dtype=np.int64)
    for _ in range(runs):
        traces = (run_sprinter(draft, target, verifier, prefix, steps, None, cost, rng),
                  run_target_only(target, prefix, steps, cost, rng),
                  run_target_only(target, prefix, steps, cost, rng))
        for k, tr in enumerate(traces):
            counts[k, np.arange(steps), tr.tokens] += 1
    rows = []
    for t in range(steps):
        sp, ref, ref2 = (normalize(counts[k, t]) for k in range(3))
        rows.append({"position": t, "runs": runs, "drift_tv": tv_distance(sp, ref), "noise_tv": tv_distance(ref2, ref)})
    return rows


# --------------------------------------------------------------------------- benchmark

METHODS = ("sd", "sprinter", "target")


@dataclass
class BenchReport:
    rows: list[dict]
    config: dict = field(default_factory=dict)
    r_profile: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict, repr=False)

    def row(self, method: str) -> dict:
        return next(r for r in self.rows if r["method"] == method)

    def to_json(self, path) -> None:
        body = {"config": self.config, "rows": self.rows, "r_profile": self.r_profile}
        with open(path, "w") as fh:
            json.dump(body, fh, sort_keys=True, indent=1)
            fh.write("\n")

    def to_csv(self, path) -> None:
        write_csv(self.rows, path)


def split_prompt(tokens: Sequence[int], fraction: float = 0.3) -> list[int]:
    """Leading ``fraction`` of a prompt (at least one token) used as the prefix."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("prefix fraction must be in (0, 1]")
    return list(tokens[:max(1, int(round(len(tokens) * fraction)))])


def acceptability_profile(draft, target, prompts: Sequence[Sequence[int]], depth: int, rng: RngStream) -> dict:
    """Observed r-profile: per-position acceptability of pure draft continuations."""
    acc = np.zeros(depth)
    first_bad = []
    for prompt in prompts:
        seq = list(prompt)
        r = depth
        for pos in range(depth):
            q = draft.next_dist(seq)
            x = sample(q, rng)
            ok = q[x] <= target.next_dist(seq)[x]
            acc[pos] += ok
            if not ok and r == depth:
                r = pos
            seq.append(x)
        first_bad.append(r)
    return {"depth": depth, "acceptable_fraction_by_position": (acc / len(prompts)).tolist(),
            "mean_r": float(np.mean(first_bad))}


def benchmark(draft, target, verifier, prompts: Sequence[Sequence[int]], gamma: int = 4, max_new_tokens: int = 20,
              cost: CostModel | None = None, seed: int = 0, tau: float | None = None) -> BenchReport:
    """SD, SPRINTER and target-only runs per prompt, aggregated into one report.

    Every (prompt, method) pair gets its own stream. ROUGE and perplexity are
    measured against an independent target-only reference completion.
    """
    if not prompts:
        raise ValueError("need at least one prompt")
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be >= 1")
    cost = cost or CostModel()
    traces = {m: [] for m in METHODS}
    refs = []
    for i, prefix in enumerate(prompts):
        streams = [RngStream(seed, 4 * i + k) for k in range(4)]
        refs.append(run_target_only(target, prefix, max_new_tokens, cost, streams[0]).tokens)
        traces["sd"].append(run_sd(draft, target, prefix, gamma, max_new_tokens, cost, streams[1]))
        traces["sprinter"].append(run_sprinter(draft, target, verifier, prefix, max_new_tokens, tau, cost, streams[2]))
        traces["target"].append(run_target_only(target, prefix, max_new_tokens, cost, streams[3]))

    sd_time = sum(t.simulated_time for t in traces["sd"])
    rows = []
    for m in METHODS:
        ts = traces[m]
        per_tok = np.array([t.simulated_time / len(t.steps) for t in ts])
        kept = [k for t in ts for k in t.kept_per_round()] if m != "target" else [0]
        total_time = sum(t.simulated_time for t in ts)
        scores = {v: float(np.mean([rouge(t.tokens, ref, v)["f1"] for t, ref in zip(ts, refs)]))
                  for v in ("rouge1", "rouge2", "rougeL")}
        ppl = float(np.mean([perplexity(target, t.tokens, p) for t, p in zip(ts, prompts)]))
        rows.append({
            "method": m,
            "avg_accepted_per_round": float(np.mean(kept)),
            "time_per_token_mean": float(per_tok.mean()),
            "time_per_token_std": float(per_tok.std()),
            "simulated_time": float(total_time),
            "speedup": 1.0 if m == "sd" else float(sd_time / total_time),
            "flops": float(sum(t.flops for t in ts)),
            "draft_calls": sum(t.draft_calls for t in ts),
            "target_calls": sum(t.target_calls for t in ts),
            "verifier_calls": sum(t.verifier_calls for t in ts),
            "tokens": sum(len(t.steps) for t in ts),
            "rouge1_f1": scores["rouge1"],
            "rouge2_f1": scores["rouge2"],
            "rougeL_f1": scores["rougeL"],
            "perplexity": ppl,
        })
    profile = acceptability_profile(draft, target, prompts, max_new_tokens, RngStream(seed, 9_000_000))
    config = {"gamma": gamma, "max_new_tokens": max_new_tokens, "seed": seed, "prompts": len(prompts),
              "tau": tau, "cost": {k: getattr(cost, k) for k in ("t_d", "t_t", "t_v", "F_d", "F_t", "F_v")}}
    return BenchReport(rows, config, profile, traces)
