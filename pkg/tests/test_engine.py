import json
import math
import warnings

import numpy as np
import pytest

from sprinterlab.dist import CategoricalDist, RngStream, VocabMismatch, empirical, sprinter_mixture, tv_distance
from sprinterlab.engine import (
    KEPT_DRAFT,
    SOURCES,
    CostModel,
    InvalidTau,
    run_sd,
    run_sprinter,
    run_target_only,
    sd_step_batch,
    sprinter_step_batch,
)
from sprinterlab.lm import SyntheticModel
from sprinterlab.verifier import FEATURE_DIM, LogisticVerifier, OracleVerifier, VerifierQuality

P = CategoricalDist([0.6, 0.4])
Q = CategoricalDist([0.2, 0.8])
ZERO = CostModel(0, 0, 0, 0, 0, 0)


def oracle(tp, fp):
    return OracleVerifier(VerifierQuality(tp, fp))


def assert_accounting(trace):
    c = trace.cost
    assert trace.simulated_time == pytest.approx(
        trace.draft_calls * c.t_d + trace.target_calls * c.t_t + trace.verifier_calls * c.t_v, abs=0, rel=0)
    assert trace.draft_calls == sum(s.draft_calls for s in trace.steps)
    for s in trace.steps:
        assert s.source in SOURCES
        if s.source == "draft-accepted":
            assert s.target_calls == 0


def test_cost_model_warns_on_odd_ordering():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        CostModel()
    with pytest.warns(UserWarning):
        CostModel(t_d=5, t_t=1)


def test_always_accept_never_calls_target():
    tr = run_sprinter(SyntheticModel(Q), SyntheticModel(P), oracle(1, 1), [], 30, rng=RngStream(0))
    assert tr.target_calls == 0 and len(tr.steps) == 30 and tr.truncated
    assert all(s.source == "draft-accepted" for s in tr.steps)
    assert_accounting(tr)


def test_always_reject_matches_target():
    draft, target = SyntheticModel(Q), SyntheticModel(P)
    rng = RngStream(1)
    toks = [run_sprinter(draft, target, oracle(0, 0), [], 1, cost=ZERO, rng=rng).steps[0].token
            for _ in range(100_000)]
    assert tv_distance(empirical(np.array(toks), 2), P) <= 0.01


def test_sprinter_target_calls_equal_rejections():
    rng = RngStream(2)
    for _ in range(50):
        tr = run_sprinter(SyntheticModel(Q), SyntheticModel(P), oracle(1, 0), [], 20, rng=rng)
        rejections = sum(s.source != "draft-accepted" for s in tr.steps)
        assert tr.target_calls == rejections == tr.n_rounds - (1 if tr.truncated else 0)
        assert tr.verifier_calls == tr.draft_calls == len(tr.steps)
        assert_accounting(tr)


def test_sprinter_single_step_mixture_law():
    tokens, kept = sprinter_step_batch(P, Q, VerifierQuality(0.9, 0.3), 1_000_000, RngStream(3))
    assert tv_distance(empirical(tokens, 2), sprinter_mixture(P, Q, 0.3)) <= 0.01


@pytest.mark.parametrize("eta_fp", [0.0, 0.4])
def test_scalar_engine_matches_batch_law(eta_fp):
    rng = RngStream(4)
    toks = [run_sprinter(SyntheticModel(Q), SyntheticModel(P), oracle(0.7, eta_fp), [], 1, cost=ZERO,
                         rng=rng).steps[0].token for _ in range(40_000)]
    assert tv_distance(empirical(np.array(toks), 2), sprinter_mixture(P, Q, eta_fp)) <= 0.015


def test_sd_identical_models_accept_everything():
    m = SyntheticModel(CategoricalDist([0.3, 0.3, 0.4]))
    tr = run_sd(m, m, [], gamma=4, max_new_tokens=20, rng=RngStream(5))
    assert tr.kept_per_round() == [4, 4, 4, 4]
    assert [s.source for s in tr.steps[:5]] == ["target-kept"] * 4 + ["target-sampled"]
    assert_accounting(tr)


def test_sd_round_structure():
    rng = RngStream(6)
    for _ in range(30):
        tr = run_sd(SyntheticModel(Q), SyntheticModel(P), [], gamma=4, max_new_tokens=20, rng=rng)
        sizes = np.bincount([s.round for s in tr.steps])
        assert sizes.max() <= 5 and len(tr.steps) == 20
        assert tr.target_calls == tr.n_rounds
        assert tr.draft_calls <= 4 * tr.n_rounds
        assert_accounting(tr)


def test_sd_single_token_matches_target():
    rng = RngStream(7)
    toks = [run_sd(SyntheticModel(Q), SyntheticModel(P), [], 1, 1, ZERO, rng).steps[0].token for _ in range(100_000)]
    assert tv_distance(empirical(np.array(toks), 2), P) <= 0.01


def test_sd_disjoint_support_always_resamples():
    draft = SyntheticModel(CategoricalDist([1.0, 0.0, 0.0]))
    target = SyntheticModel(CategoricalDist([0.0, 0.5, 0.5]))
    tr = run_sd(draft, target, [], gamma=1, max_new_tokens=25, rng=RngStream(8))
    assert all(s.source == "target-resampled" for s in tr.steps)
    assert all(s.token != 0 for s in tr.steps)


def test_sd_batch_matches_target():
    tokens, kept = sd_step_batch(P, Q, 1_000_000, RngStream(9))
    assert tv_distance(empirical(tokens, 2), P) <= 0.005
    assert abs(kept.mean() - (1 - tv_distance(P, Q))) <= 0.005


def test_target_only():
    tr = run_target_only(SyntheticModel(P), [], 0)
    assert tr.steps == [] and tr.simulated_time == 0
    tr = run_target_only(SyntheticModel(P), [], 12, CostModel())
    assert tr.simulated_time == 12 * CostModel().t_t


def test_target_only_deterministic_model():
    table = {i: CategoricalDist.point(i % 3, 3) for i in range(40)}
    m = SyntheticModel(table=table)
    outs = {tuple(run_target_only(m, [], 20, rng=RngStream(s)).tokens) for s in range(5)}
    assert len(outs) == 1


@pytest.mark.parametrize("runner", ["sprinter", "sd", "target"])
def test_traces_reproducible(runner, tmp_path, demo_pair):
    draft, target = demo_pair
    prefix = draft.vocab.encode("It is a truth")
    paths = []
    for k in range(2):
        rng = RngStream(13)
        if runner == "sprinter":
            tr = run_sprinter(draft, target, oracle(0.8, 0.2), prefix, 20, rng=rng)
        elif runner == "sd":
            tr = run_sd(draft, target, prefix, 4, 20, rng=rng)
        else:
            tr = run_target_only(target, prefix, 20, rng=rng)
        paths.append(tmp_path / f"{k}.jsonl")
        tr.to_jsonl(paths[-1])
        assert_accounting(tr)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    last = json.loads(paths[0].read_text().splitlines()[-1])
    assert last["kind"] == "totals" and last["config"]["seed"] == 13


def test_logistic_verifier_run(demo_pair):
    draft, target = demo_pair
    v = LogisticVerifier(np.zeros(FEATURE_DIM), 0.0, 0.5)
    tr = run_sprinter(draft, target, v, [], 10, tau=0.4, rng=RngStream(0))
    assert all(s.source == "draft-accepted" for s in tr.steps)
    assert all(s.verifier_score == 0.5 for s in tr.steps)
    with pytest.raises(InvalidTau):
        run_sprinter(draft, target, v, [], 10, tau=1.0)


def test_vocab_mismatch():
    with pytest.raises(VocabMismatch):
        run_sd(SyntheticModel(CategoricalDist([1.0])), SyntheticModel(P), [])


def test_kept_sources():
    assert set(KEPT_DRAFT) <= set(SOURCES)


def test_sprinter_flops_accounting():
    cost = CostModel()
    tr = run_sprinter(SyntheticModel(Q), SyntheticModel(P), oracle(0.9, 0.1), [], 20, cost=cost, rng=RngStream(3))
    expected = tr.draft_calls * cost.F_d + tr.target_calls * cost.F_t + tr.verifier_calls * cost.F_v
    assert math.isclose(tr.flops, expected)
