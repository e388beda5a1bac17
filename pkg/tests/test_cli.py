import json

import pytest

from sprinterlab.cli import main, split_paragraphs


@pytest.fixture(scope="module")
def models(tmp_path_factory):
    out = tmp_path_factory.mktemp("lm")
    assert main(["train-lm", "--out-dir", str(out)]) == 0
    return out


def test_train_lm_outputs(models):
    summary = json.loads((models / "train_lm.json").read_text())
    assert (models / "draft.ngram").exists() and (models / "target.ngram").exists()
    assert summary["target"]["heldout_perplexity"] <= summary["draft"]["heldout_perplexity"]
    assert summary["config"]["k_draft"] == 1 and summary["config"]["seed"] == 0


def test_train_lm_byte_identical(tmp_path):
    snapshots = []
    for _ in range(2):
        assert main(["train-lm", "--out-dir", str(tmp_path)]) == 0
        snapshots.append({p.name: p.read_bytes() for p in sorted(tmp_path.iterdir())})
    assert snapshots[0] == snapshots[1] and len(snapshots[0]) == 3


def test_missing_corpus_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train-lm", "--corpus", str(tmp_path / "nope.txt")])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_split_paragraphs():
    text = "\n".join(f"line {i}" for i in range(20))
    train, held = split_paragraphs(text, 0.1)
    assert held.splitlines() == ["line 9", "line 19"]
    assert len(train.splitlines()) == 18


def test_config_precedence(tmp_path, models):
    cfg = tmp_path / "exp.ini"
    cfg.write_text("[train-lm]\nk-target = 2\nalpha = 0.5\n")
    assert main(["train-lm", "--config", str(cfg), "--alpha", "0.2", "--out-dir", str(tmp_path)]) == 0
    resolved = json.loads((tmp_path / "train_lm.json").read_text())["config"]
    assert resolved["k_target"] == 2 and resolved["alpha"] == 0.2 and resolved["k_draft"] == 1


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[train-lm]\nwidth = 3\n")
    assert main(["train-lm", "--config", str(cfg)]) == 2


def test_train_verifier_lambda_grid(models, tmp_path):
    args = ["train-verifier", "--draft", str(models / "draft.ngram"), "--target", str(models / "target.ngram"),
            "--lambda", "1.0,1.2,1.5", "--per-category", "100", "--heldout-per-category", "50",
            "--out-dir", str(tmp_path)]
    assert main(args) == 0
    assert sorted(p.name for p in tmp_path.glob("roc_lambda*.csv")) == [
        "roc_lambda1.2.csv", "roc_lambda1.5.csv", "roc_lambda1.csv"]
    res = json.loads((tmp_path / "train_verifier.json").read_text())["results"]
    fracs = [r["train_positive_fraction"] for r in res]
    assert fracs == sorted(fracs)
    assert (tmp_path / "roc_lambda1.2.csv").read_text().splitlines()[0] == "threshold,fpr,tpr"


def _run(models, tmp_path, *extra):
    trace = tmp_path / "trace.jsonl"
    code = main(["run", "--draft", str(models / "draft.ngram"), "--target", str(models / "target.ngram"),
                 "--prompt", "It was the best", "--trace-out", str(trace), *extra])
    lines = [json.loads(x) for x in trace.read_text().splitlines()]
    return code, lines[:-1], lines[-1]


def test_run_sprinter_oracle(models, tmp_path):
    code, steps, totals = _run(models, tmp_path, "--mode", "sprinter", "--eta-tp", "1", "--eta-fp", "0")
    assert code == 0
    assert totals["target_calls"] == sum(s["source"] != "draft-accepted" for s in steps)
    assert totals["config"]["resolved"]["seed"] == 0


def test_run_sd_rounds(models, tmp_path):
    code, steps, totals = _run(models, tmp_path, "--mode", "sd", "--gamma", "4")
    assert code == 0
    per_round = {}
    for s in steps:
        per_round[s["round"]] = per_round.get(s["round"], 0) + 1
    assert max(per_round.values()) <= 5 and totals["tokens"] == 20


def test_run_is_reproducible(models, tmp_path, capsys):
    _run(models, tmp_path, "--mode", "sd", "--seed", "5")
    first = (tmp_path / "trace.jsonl").read_bytes()
    out1 = capsys.readouterr().out.splitlines()[0]
    _run(models, tmp_path, "--mode", "sd", "--seed", "5")
    assert (tmp_path / "trace.jsonl").read_bytes() == first
    assert capsys.readouterr().out.splitlines()[0] == out1


def test_run_sprinter_needs_verifier(models, tmp_path):
    code = main(["run", "--draft", str(models / "draft.ngram"), "--target", str(models / "target.ngram"),
                 "--trace-out", str(tmp_path / "t.jsonl")])
    assert code == 2


@pytest.mark.parametrize("flag, value", [("--max-new-tokens", "0"), ("--eta-tp", "1.5"), ("--tau", "1.0")])
def test_run_validation(models, flag, value):
    assert main(["run", "--draft", str(models / "draft.ngram"), "--target", str(models / "target.ngram"),
                 flag, value]) == 2


def test_validate_theory_small(tmp_path, capsys):
    code = main(["validate-theory", "--trials", "20000", "--samples", "20000", "--r", "5",
                 "--eta-tp", "0.5,0.9", "--eta-fp", "0,0.5", "--pairs", "4", "--out-dir", str(tmp_path)])
    out = capsys.readouterr().out
    summary = json.loads((tmp_path / "validate_theory.json").read_text())
    assert (tmp_path / "theory_curves.csv").exists() and (tmp_path / "token_law.csv").exists()
    assert summary["config"]["trials"] == 20000
    assert code == (0 if all(summary["checks"].values()) else 1)
    assert "PASS" in out or "FAIL" in out


def test_validate_theory_divergent(tmp_path, capsys):
    code = main(["validate-theory", "--eta-fp", "1.0", "--trials", "100", "--out-dir", str(tmp_path)])
    assert code == 1
    assert "Divergent" in capsys.readouterr().err


def test_bench_oracle(models, tmp_path):
    code = main(["bench", "--draft", str(models / "draft.ngram"), "--target", str(models / "target.ngram"),
                 "--eta-tp", "0.9", "--eta-fp", "0.1", "--out-dir", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "bench.json").read_text())
    assert rep["config"]["resolved"]["prefix_fraction"] == 0.3
    assert [r["method"] for r in rep["rows"]] == ["sd", "sprinter", "target"]
    assert rep["rows"][0]["speedup"] == 1.0


def test_bench_zero_tokens(models):
    assert main(["bench", "--draft", str(models / "draft.ngram"), "--target", str(models / "target.ngram"),
                 "--eta-tp", "1", "--eta-fp", "0", "--max-new-tokens", "0"]) == 2
