"""Command-line entry point: ``sprinterlab {train-lm,train-verifier,run,validate-theory,bench}``.

Settings resolve as built-in defaults < ``--config`` INI section < flags.
Exit codes: 0 success, 1 runtime or check failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
from dataclasses import asdict
from importlib.resources import files
from pathlib import Path

from . import __version__
from .dist import RngStream, VocabMismatch, tv_distance
from .engine import CostModel, InvalidTau, run_sd, run_sprinter, run_target_only
from .harness import (
    benchmark,
    make_battery,
    split_prompt,
    sweep_theory_curves,
    validate_token_distribution,
    write_csv,
)
from .lm import CorpusTooShort, FormatError, load_model, perplexity, save_model, tokenize, train_ngram
from .theory import Divergent, acceptance_rate_sd
from .verifier import (
    DegenerateLabels,
    OracleVerifier,
    VerifierQuality,
    build_training_set,
    load_verifier,
    measure_quality,
    roc_curve,
    save_verifier,
    train_logistic,
    verifier_score,
)

log = logging.getLogger("sprinterlab")

TP_GRID = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
FP_GRID = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
COST_KEYS = ("t_d", "t_t", "t_v", "F_d", "F_t", "F_v")

DEFAULTS = {
    "train-lm": {
        "corpus": "", "mode": "char", "k_draft": 1, "k_target": 3, "alpha": 0.1,
        "heldout_fraction": 0.1, "seed": 0, "out_dir": ".",
    },
    "train-verifier": {
        "draft": "draft.ngram", "target": "target.ngram", "corpus": "", "lambdas": [1.2], "tau": 0.5,
        "per_category": 500, "heldout_per_category": 250, "min_prefix": 8, "max_prefix": 32,
        "max_continuation": 8, "epochs": 500, "lr": 0.01, "seed": 0, "out_dir": ".",
    },
    "run": {
        "mode": "sprinter", "draft": "draft.ngram", "target": "target.ngram", "verifier": "",
        "eta_tp": -1.0, "eta_fp": -1.0, "prompt": "", "gamma": 4, "max_new_tokens": 20, "tau": -1.0,
        "seed": 0, "trace_out": "trace.jsonl", **asdict(CostModel()),
    },
    "validate-theory": {
        "trials": 100_000, "samples": 1_000_000, "seed": 0, "r": [1, 3, 5, 10], "t_d": 0.1,
        "eta_tp": TP_GRID, "eta_fp": FP_GRID, "pairs": 20, "out_dir": ".",
    },
    "bench": {
        "draft": "draft.ngram", "target": "target.ngram", "verifier": "", "eta_tp": -1.0, "eta_fp": -1.0,
        "prompts": "", "prefix_fraction": 0.3, "gamma": 4, "max_new_tokens": 20, "tau": -1.0, "seed": 0,
        "out_dir": ".", **asdict(CostModel()),
    },
}

COUNTS = ("k_draft", "k_target", "per_category", "heldout_per_category", "min_prefix", "max_prefix",
          "epochs", "gamma", "max_new_tokens", "trials", "samples", "pairs")


class ConfigError(ValueError):
    pass


def demo_corpus() -> Path:
    return Path(str(files("sprinterlab").joinpath("data/demo_corpus.txt")))


def demo_prompts() -> Path:
    return Path(str(files("sprinterlab").joinpath("data/demo_prompts.txt")))


def _coerce(default, raw: str):
    if isinstance(default, list):
        kind = type(default[0]) if default else float
        return [kind(x) for x in str(raw).replace(",", " ").split()]
    if isinstance(default, bool):
        return str(raw).lower() in ("1", "true", "yes", "on")
    return type(default)(raw)


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        parser = configparser.ConfigParser()
        if not parser.read(args.config):
            raise ConfigError(f"cannot read config file {args.config}")
        if parser.has_section(command):
            for key, raw in parser.items(command):
                key = key.replace("-", "_")
                if key not in cfg:
                    raise ConfigError(f"[{command}] unknown key {key!r}")
                try:
                    cfg[key] = _coerce(cfg[key], raw)
                except ValueError as e:
                    raise ConfigError(f"[{command}] {key}: {e}") from e
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for key in COUNTS:
        if key in cfg and cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {cfg[key]}")
    for key in ("eta_tp", "eta_fp"):
        if key in cfg and isinstance(cfg[key], list):
            if any(not 0.0 <= x <= 1.0 for x in cfg[key]):
                raise ConfigError(f"{key} values must lie in [0, 1]")
        elif key in cfg and cfg[key] != -1.0 and not 0.0 <= cfg[key] <= 1.0:
            raise ConfigError(f"{key} must lie in [0, 1]")
    if "tau" in cfg and cfg["tau"] != -1.0 and not 0.0 < cfg["tau"] < 1.0:
        raise ConfigError("tau must lie in (0, 1)")
    if "alpha" in cfg and cfg["alpha"] < 0:
        raise ConfigError("alpha must be non-negative")
    if "heldout_fraction" in cfg and not 0.0 < cfg["heldout_fraction"] < 1.0:
        raise ConfigError("heldout_fraction must lie in (0, 1)")
    if "prefix_fraction" in cfg and not 0.0 < cfg["prefix_fraction"] <= 1.0:
        raise ConfigError("prefix_fraction must lie in (0, 1]")
    if "lambdas" in cfg and (not cfg["lambdas"] or min(cfg["lambdas"]) <= 0):
        raise ConfigError("lambda values must be positive")
    if "seed" in cfg and cfg["seed"] < 0:
        raise ConfigError("seed must be non-negative")
    if any(k in cfg and cfg[k] < 0 for k in COST_KEYS):
        raise ConfigError("cost model values must be non-negative")
    if "min_prefix" in cfg and cfg["min_prefix"] > cfg["max_prefix"]:
        raise ConfigError("min_prefix must not exceed max_prefix")


def _write_json(path: Path, body: dict) -> None:
    path.write_text(json.dumps(body, sort_keys=True, indent=1) + "\n")


def _cost(cfg: dict) -> CostModel:
    return CostModel(**{k: cfg[k] for k in COST_KEYS})


def _corpus_text(path: str) -> str:
    return (Path(path) if path else demo_corpus()).read_text(encoding="utf-8")


def _verifier(cfg: dict):
    if cfg["eta_tp"] >= 0 or cfg["eta_fp"] >= 0:
        if cfg["eta_tp"] < 0 or cfg["eta_fp"] < 0:
            raise ConfigError("oracle mode needs both --eta-tp and --eta-fp")
        return OracleVerifier(VerifierQuality(cfg["eta_tp"], cfg["eta_fp"]))
    if not cfg["verifier"]:
        raise ConfigError("give --verifier FILE or oracle rates --eta-tp/--eta-fp")
    return load_verifier(cfg["verifier"])


# --------------------------------------------------------------------------- commands

def split_paragraphs(text: str, fraction: float) -> tuple[str, str]:
    """Hold out an evenly spread ``fraction`` of the non-empty lines."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    held = [i for i in range(len(lines)) if int((i + 1) * fraction) > int(i * fraction)]
    if not held or len(held) == len(lines):
        raise CorpusTooShort(f"cannot hold out {fraction:g} of {len(lines)} lines")
    keep = set(held)
    train = "\n".join(ln for i, ln in enumerate(lines) if i not in keep)
    return train, "\n".join(lines[i] for i in held)


def cmd_train_lm(cfg: dict) -> int:
    text = _corpus_text(cfg["corpus"])
    _, vocab = tokenize(text, cfg["mode"])
    train_text, held_text = split_paragraphs(text, cfg["heldout_fraction"])
    train, heldout = vocab.encode(train_text), vocab.encode(held_text)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    summary = {"config": cfg, "vocab_size": len(vocab), "train_tokens": len(train), "heldout_tokens": len(heldout)}
    for role in ("draft", "target"):
        model = train_ngram(train, cfg[f"k_{role}"], cfg["alpha"], vocab)
        save_model(model, out / f"{role}.ngram")
        ppl = perplexity(model, heldout)
        summary[role] = {"k": model.k, "heldout_perplexity": ppl, "file": f"{role}.ngram"}
        print(f"{role}: order={model.k} vocab={len(vocab)} heldout_perplexity={ppl:.4f}")
    _write_json(out / "train_lm.json", summary)
    return 0


def _seed_prefixes(ids: list, n: int, lo: int, hi: int, rng: RngStream) -> list:
    out = []
    for _ in range(n):
        L = lo + int(rng.random() * (hi - lo + 1))
        start = int(rng.random() * (len(ids) - L))
        out.append(ids[start:start + L])
    return out


def verifier_datasets(cfg: dict, draft, target, lam: float) -> tuple[list, list]:
    """Training and held-out sets for one ``lam``.

    The streams depend only on the seed, so every ``lam`` sees the same
    sampled tokens and only the labels change across a sweep.
    """
    ids = draft.vocab.encode(_corpus_text(cfg["corpus"]))
    if len(ids) <= cfg["max_prefix"]:
        raise CorpusTooShort("corpus shorter than the longest seed prefix")
    seed, lo, hi = cfg["seed"], cfg["min_prefix"], cfg["max_prefix"]
    n_seeds = 4 * cfg["per_category"]
    train = build_training_set(draft, target, _seed_prefixes(ids, n_seeds, lo, hi, RngStream(seed, 1)),
                               cfg["per_category"], lam, RngStream(seed, 2), cfg["max_continuation"])
    held = build_training_set(draft, target, _seed_prefixes(ids, n_seeds, lo, hi, RngStream(seed, 3)),
                              cfg["heldout_per_category"], lam, RngStream(seed, 4), cfg["max_continuation"])
    return train, held


def cmd_train_verifier(cfg: dict) -> int:
    draft, target = load_model(cfg["draft"]), load_model(cfg["target"])
    if draft.vocab.symbols != target.vocab.symbols:
        raise VocabMismatch("draft and target were trained with different vocabularies")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for lam in cfg["lambdas"]:
        train, held = verifier_datasets(cfg, draft, target, lam)
        v = train_logistic(train, cfg["epochs"], cfg["lr"], cfg["tau"], lam, cfg["seed"])
        roc = roc_curve([verifier_score(v, e.features) for e in held], [e.label for e in held])
        quality = measure_quality(v, held)
        tag = f"{lam:g}"
        save_verifier(v, out / f"verifier_lambda{tag}.json")
        roc.to_csv(out / f"roc_lambda{tag}.csv")
        res = {
            "lambda": lam, "tau": cfg["tau"], "heldout_auc": roc.auc,
            "train_positive_fraction": sum(e.label for e in train) / len(train),
            "heldout_positive_fraction": sum(e.label for e in held) / len(held),
            "eta_tp": quality.eta_tp, "eta_fp": quality.eta_fp,
            "train_loss_initial": v.history[0], "train_loss_final": v.history[-1],
            "verifier": f"verifier_lambda{tag}.json", "roc": f"roc_lambda{tag}.csv",
        }
        results.append(res)
        print(f"lambda={tag}: heldout AUC={roc.auc:.4f} eta_tp={quality.eta_tp:.4f} eta_fp={quality.eta_fp:.4f} "
              f"positive_fraction={res['train_positive_fraction']:.4f}")
    _write_json(out / "train_verifier.json", {"config": cfg, "results": results})
    return 0


def cmd_run(cfg: dict) -> int:
    target = load_model(cfg["target"])
    prompt = target.vocab.encode(cfg["prompt"]) if cfg["prompt"] else []
    cost = _cost(cfg)
    rng = RngStream(cfg["seed"], 0)
    tau = None if cfg["tau"] < 0 else cfg["tau"]
    mode = cfg["mode"]
    if mode == "target":
        trace = run_target_only(target, prompt, cfg["max_new_tokens"], cost, rng)
    else:
        draft = load_model(cfg["draft"])
        if draft.vocab.symbols != target.vocab.symbols:
            raise VocabMismatch("draft and target were trained with different vocabularies")
        if mode == "sd":
            trace = run_sd(draft, target, prompt, cfg["gamma"], cfg["max_new_tokens"], cost, rng)
        else:
            trace = run_sprinter(draft, target, _verifier(cfg), prompt, cfg["max_new_tokens"], tau, cost, rng)
    trace.config = {**trace.config, "resolved": cfg}
    trace.to_jsonl(cfg["trace_out"])
    completion = target.vocab.decode(trace.tokens)
    print(target.vocab.decode(prompt) + ("" if target.vocab.mode == "char" else " ") + completion)
    print(json.dumps({"mode": mode, "seed": cfg["seed"], **trace.totals(), "wall_time": trace.wall_time},
                     sort_keys=True))
    return 0


def cmd_validate_theory(cfg: dict) -> int:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    rows = []
    for r in cfg["r"]:
        rows.extend(sweep_theory_curves(r, cfg["t_d"], cfg["eta_fp"], cfg["eta_tp"], cfg["trials"], cfg["seed"]))
    write_csv(rows, out / "theory_curves.csv")

    law_rows = []
    samples = cfg["samples"]
    fp_grid = [round(0.1 * i, 10) for i in range(11)]
    for k, (p, q) in enumerate(make_battery(cfg["seed"], cfg["pairs"])):
        for j, fp in enumerate(fp_grid):
            res = validate_token_distribution(p, q, fp, samples, RngStream(cfg["seed"], 8_000_000 + 100 * k + j))
            law_rows.append({
                "pair": k, "V": p.vocab_size, "eta_fp": fp, "samples": samples, "tv_pq": tv_distance(p, q),
                "tv_to_mixture": res["tv_to_theory"], "tv_to_p": res["tv_to_p"],
                "tv_to_p_theory": res["tv_to_p_theory"], "beta_empirical": res["beta_empirical"],
                "beta_theory": res["beta_theory"], "beta_sd": acceptance_rate_sd(p, q),
            })
    write_csv(law_rows, out / "token_law.csv")

    checks = {
        "token_count_mean_within_3se": all(r["EN_ok"] for r in rows),
        "token_count_pmf_tv": all(r["pmf_ok"] for r in rows),
        "stop_time_mean_within_3se": all(r["ET_ok"] for r in rows),
        "token_count_fp_gap_le_1": all(r["EN_gap"] <= 1.0 for r in rows if r["r"] == 5 and r["eta_fp"] <= 0.5),
        "stop_time_fp_gap_le_td": all(r["ET_gap"] <= r["t_d"] + 1e-12 for r in rows if r["r"] == 5 and r["eta_fp"] <= 0.5),
        "token_law_tv_to_mixture": all(r["tv_to_mixture"] <= 0.01 for r in law_rows),
        "token_law_tv_scaling": all(abs(r["tv_to_p"] - r["tv_to_p_theory"]) <= 0.01 for r in law_rows),
        "acceptance_rate_match": all(abs(r["beta_empirical"] - r["beta_theory"]) <= 0.01 for r in law_rows),
        "acceptance_rate_ge_sd": all(r["beta_theory"] >= r["beta_sd"] - 1e-15 for r in law_rows),
    }
    failures = [
        {k: r[k] for k in ("r", "eta_tp", "eta_fp", "EN_theory", "EN_sim", "EN_se", "pmf_tv", "pmf_tol")}
        for r in rows if not (r["EN_ok"] and r["ET_ok"] and r["pmf_ok"])
    ]
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    for f in failures:
        print(f"  failing grid point: {json.dumps(f, sort_keys=True)}")
    _write_json(out / "validate_theory.json", {"config": cfg, "checks": checks, "failing_points": failures})
    log.info("validate-theory finished in %.1fs", time.perf_counter() - start)
    return 0 if all(checks.values()) else 1


def cmd_bench(cfg: dict) -> int:
    draft, target = load_model(cfg["draft"]), load_model(cfg["target"])
    if draft.vocab.symbols != target.vocab.symbols:
        raise VocabMismatch("draft and target were trained with different vocabularies")
    lines = [ln for ln in (Path(cfg["prompts"]) if cfg["prompts"] else demo_prompts()).read_text().splitlines()
             if ln.strip()]
    if not lines:
        raise ConfigError("prompt file has no prompts")
    prompts = [split_prompt(target.vocab.encode(ln), cfg["prefix_fraction"]) for ln in lines]
    tau = None if cfg["tau"] < 0 else cfg["tau"]
    report = benchmark(draft, target, _verifier(cfg), prompts, cfg["gamma"], cfg["max_new_tokens"], _cost(cfg),
                       cfg["seed"], tau)
    report.config = {**report.config, "resolved": cfg}
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "bench.json")
    report.to_csv(out / "bench.csv")
    for row in report.rows:
        print(f"{row['method']:>9}  accepted/round={row['avg_accepted_per_round']:.3f}  "
              f"time/token={row['time_per_token_mean']:.3f}  speedup={row['speedup']:.3f}  "
              f"flops={row['flops']:.1f}  rouge1={row['rouge1_f1']:.3f}  ppl={row['perplexity']:.2f}")
    return 0


COMMANDS = {
    "train-lm": cmd_train_lm,
    "train-verifier": cmd_train_verifier,
    "run": cmd_run,
    "validate-theory": cmd_validate_theory,
    "bench": cmd_bench,
}


# --------------------------------------------------------------------------- parser

def _floats(s: str) -> list[float]:
    return [float(x) for x in s.replace(",", " ").split()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.replace(",", " ").split()]


def _existing(s: str) -> str:
    if not Path(s).is_file():
        raise argparse.ArgumentTypeError(f"no such file: {s}")
    return s


def _add_cost(p: argparse.ArgumentParser) -> None:
    for key in COST_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sprinterlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=_existing, help="INI file; keys live in a section named after the command")
        p.add_argument("--seed", type=int)
        return p

    p = command("train-lm", "train draft and target n-gram models")
    p.add_argument("--corpus", type=_existing, help="UTF-8 text file (default: shipped demo corpus)")
    p.add_argument("--mode", choices=("char", "whitespace"))
    p.add_argument("--k-draft", dest="k_draft", type=int)
    p.add_argument("--k-target", dest="k_target", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--heldout-fraction", dest="heldout_fraction", type=float)
    p.add_argument("--out-dir", dest="out_dir")

    p = command("train-verifier", "build the four-category dataset and train logistic verifiers")
    p.add_argument("--draft", type=_existing)
    p.add_argument("--target", type=_existing)
    p.add_argument("--corpus", type=_existing)
    p.add_argument("--lambda", dest="lambdas", type=_floats, help="one value or a list, e.g. 1.0,1.2,1.5")
    p.add_argument("--tau", type=float)
    p.add_argument("--per-category", dest="per_category", type=int)
    p.add_argument("--heldout-per-category", dest="heldout_per_category", type=int)
    p.add_argument("--max-continuation", dest="max_continuation", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out-dir", dest="out_dir")

    p = command("run", "decode one prompt with sprinter, sd or target-only")
    p.add_argument("--mode", choices=("sprinter", "sd", "target"))
    p.add_argument("--draft", type=_existing)
    p.add_argument("--target", type=_existing)
    p.add_argument("--verifier", type=_existing)
    p.add_argument("--eta-tp", dest="eta_tp", type=float)
    p.add_argument("--eta-fp", dest="eta_fp", type=float)
    p.add_argument("--prompt")
    p.add_argument("--gamma", type=int)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--trace-out", dest="trace_out")
    _add_cost(p)

    p = command("validate-theory", "Monte Carlo checks of the closed forms")
    p.add_argument("--trials", type=int)
    p.add_argument("--samples", type=int, help="samples per token-law check")
    p.add_argument("--r", type=_ints)
    p.add_argument("--t-d", dest="t_d", type=float)
    p.add_argument("--eta-tp", dest="eta_tp", type=_floats)
    p.add_argument("--eta-fp", dest="eta_fp", type=_floats)
    p.add_argument("--pairs", type=int)
    p.add_argument("--out-dir", dest="out_dir")

    p = command("bench", "SD vs sprinter vs target-only report")
    p.add_argument("--draft", type=_existing)
    p.add_argument("--target", type=_existing)
    p.add_argument("--verifier", type=_existing)
    p.add_argument("--eta-tp", dest="eta_tp", type=float)
    p.add_argument("--eta-fp", dest="eta_fp", type=float)
    p.add_argument("--prompts", type=_existing)
    p.add_argument("--prefix-fraction", dest="prefix_fraction", type=float)
    p.add_argument("--gamma", type=int)
    p.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--out-dir", dest="out_dir")
    _add_cost(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"sprinterlab {args.command}: error: {e}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"sprinterlab {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (Divergent, DegenerateLabels, VocabMismatch, CorpusTooShort, FormatError, InvalidTau,
            KeyError, OSError, ValueError) as e:
        print(f"sprinterlab {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
