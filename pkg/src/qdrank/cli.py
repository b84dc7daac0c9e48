"""Command-line entry point.

Usage:
    qdrank validate corpus.jsonl
    qdrank simulate --preset cmcqrd --seed 7 --out-dir runs/sim
    qdrank estimate corpus.jsonl --method level --probs level_probs.jsonl --out-dir runs/lc
    qdrank estimate corpus.jsonl --method comparative --judge sim --k 100 --seed 42 --out-dir runs/cmp
    qdrank eval runs/lc/scores.csv runs/cmp/scores.csv --corpus corpus.jsonl --combine
    qdrank curve corpus.jsonl --judge sim --k-list 10,50,200 --draws 30 --out-dir runs/curve
    qdrank bias corpus.jsonl --judge sim --n-pairs 5000 --out-dir runs/bias

Settings layer as defaults < JSON config file (--config) < command-line
flags. All randomness flows from --seed through named derived streams. The
remote judge reads its API key from QDRANK_API_KEY only. Every run writes a
manifest.json next to its outputs listing the resolved configuration and
the sha256 of each input and output file.

Exit codes: 0 success, 1 input error, 2 judge/network error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, estimators, ranking
from ._streams import derive_rng, derive_seed
from .corpus import Corpus, attach_probs, load_corpus, save_corpus, split_by_grade
from .errors import JudgeBackendError, QdrankError
from .judge import JudgeConfig, JudgeConfigError, RemoteJudge, SimJudgeParams, SimulatedJudge
from .rasch import CMCQRD_SHAPE, GradeSpec, make_synthetic_corpus
from .scheduler import (
    RunConfig,
    measure_position_bias,
    run_absolute,
    run_comparative,
    write_records_csv,
    write_raw_sidecar,
)


class MissingProbsError(QdrankError):
    pass


class _Options:
    """Layered option lookup; remembers everything resolved for the manifest."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self._args = args
        self._config = config
        self.resolved: dict = {}

    def get(self, key: str, default=None):
        value = getattr(self._args, key, None)
        if value is None:
            value = self._config.get(key, default)
        self.resolved[key] = value
        return value


def _load_config(args: argparse.Namespace) -> dict:
    path = getattr(args, "config", None)
    if not path:
        return {}
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise QdrankError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise QdrankError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise QdrankError(f"config {path} must be a JSON object")
    return config


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(
    out_dir: Path,
    command: str,
    opts: _Options,
    inputs: list[Path],
    outputs: list[Path],
) -> None:
    manifest = {
        "tool": "qdrank",
        "version": __version__,
        "command": command,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config": {k: v for k, v in sorted(opts.resolved.items()) if v is not None},
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in outputs],
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def _out_dir(opts: _Options) -> Path:
    out = Path(opts.get("out_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build_judge(opts: _Options, corpus: Corpus, seed: int):
    kind = opts.get("judge")
    if kind is None:
        raise JudgeConfigError("this command needs --judge sim|remote")
    parallelism = int(opts.get("parallelism", 1))
    if kind == "sim":
        params = SimJudgeParams(
            beta=float(opts.get("sim_beta", 1.0)),
            epsilon=float(opts.get("sim_epsilon", 0.0)),
            sigma_abs=float(opts.get("sim_sigma", 0.0)),
            scale_lo=float(opts.get("sim_scale_lo", -3.0)),
            scale_hi=float(opts.get("sim_scale_hi", 3.0)),
            seed=derive_seed(seed, "judge"),
        )
        return SimulatedJudge.from_corpus(params, corpus, parallelism=parallelism)
    if kind == "remote":
        cfg = JudgeConfig(
            backend="remote",
            base_url=opts.get("base_url", ""),
            model=opts.get("model", ""),
            temperature=float(opts.get("temperature", 1.0)),
            max_output_tokens=int(opts.get("max_output_tokens", 16)),
            max_retries=int(opts.get("max_retries", 3)),
            parallelism=parallelism,
            timeout=float(opts.get("timeout", 60.0)),
        )
        return RemoteJudge(cfg)
    raise JudgeConfigError(f"unknown judge {kind!r}")


def _gold_pairs(corpus: Corpus, ids: set[str]) -> list[tuple[str, float]]:
    gold = []
    for q in corpus:
        if q.id in ids:
            if q.gold_difficulty is None:
                raise ranking.MissingGoldError(f"no gold difficulty for id {q.id!r}")
            gold.append((q.id, q.gold_difficulty))
    missing = ids - {qid for qid, _ in gold}
    if missing:
        raise ranking.MissingGoldError(f"ids not in corpus: {sorted(missing)[:5]}")
    return gold


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    n = len(corpus)
    with_grade = sum(1 for q in corpus if q.grade is not None)
    with_gold = sum(1 for q in corpus if q.gold_difficulty is not None)
    with_dist = sum(1 for q in corpus if q.human_dist is not None)
    print(f"corpus: {corpus.name} ({n} questions)")
    if with_grade == n:
        print(f"{'grade':<8}{'count':>8}{'with-dist':>12}{'with-gold':>12}")
        for grade, part in split_by_grade(corpus).items():
            dist = sum(1 for q in part if q.human_dist is not None)
            gold = sum(1 for q in part if q.gold_difficulty is not None)
            print(f"{grade:<8}{len(part):>8}{dist:>12}{gold:>12}")
    print(f"{'all':<8}{n:>8}{with_dist:>12}{with_gold:>12}")
    print(f"coverage: grade {with_grade}/{n}, gold {with_gold}/{n}, human_dist {with_dist}/{n}")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    opts = _Options(args, _load_config(args))
    corpus = load_corpus(args.corpus)
    method = opts.get("method")
    if method not in ("level", "rc", "absolute", "comparative"):
        raise QdrankError(f"unknown method {method!r}")
    seed = int(opts.get("seed", 0))
    out = _out_dir(opts)
    outputs: list[Path] = []

    if method in ("level", "rc"):
        probs = opts.get("probs")
        if not probs:
            raise MissingProbsError(f"method={method} needs --probs")
        kind = "level" if method == "level" else "answer"
        corpus = attach_probs(corpus, probs, kind)
        estimates = []
        for q in corpus:
            if method == "level" and q.level_dist is not None:
                score = estimators.level_map(q.level_dist)
            elif method == "rc" and q.answer_dist is not None:
                score = estimators.rc_complement(q.answer_dist, q.correct_index)
            else:
                continue
            estimates.append(
                estimators.DifficultyEstimate(question_id=q.id, method=method, score=score)
            )
        if not estimates:
            raise MissingProbsError(f"{probs}: no {kind} distributions matched the corpus")
        records = None
    else:
        judge = _build_judge(opts, corpus, seed)
        cfg = RunConfig(
            k=int(opts.get("k", 250)),
            draws=int(opts.get("draws", 30)),
            seed=seed,
            position_policy=opts.get("position_policy", "random"),
        )
        if method == "comparative":
            estimates, records = run_comparative(corpus, judge, cfg)
        else:
            estimates = run_absolute(corpus, judge, cfg)
            records = None

    scores_path = out / "scores.csv"
    estimators.write_estimates_csv(scores_path, estimates)
    outputs.append(scores_path)
    if records is not None:
        records_path = out / "records.csv"
        write_records_csv(records_path, records)
        outputs.append(records_path)
        if opts.get("dump_raw"):
            raw_path = out / "raw_replies.jsonl"
            write_raw_sidecar(raw_path, records)
            outputs.append(raw_path)
    inputs = [Path(args.corpus)]
    if opts.resolved.get("probs"):
        inputs.append(Path(opts.resolved["probs"]))
    _write_manifest(out, "estimate", opts, inputs, outputs)
    print(f"wrote {scores_path} ({len(estimates)} estimates)")
    return 0


def _method_rows(
    estimates: list[estimators.DifficultyEstimate],
    gold_lookup: dict[str, float],
    method: str,
) -> tuple[int, float, float | None, list[float]]:
    draws = estimators.by_draw(estimates)
    rhos = []
    n = 0
    for draw_key in sorted(draws, key=lambda d: (d is not None, d)):
        pairs = [(e.question_id, e.score) for e in draws[draw_key]]
        gold = [(qid, gold_lookup[qid]) for qid, _ in pairs]
        result = ranking.spearman(pairs, gold)
        rhos.append(result.rho)
        n = result.n
    mean, std = ranking.draw_stats(rhos)
    return n, mean, (std if len(rhos) > 1 else None), rhos


def cmd_eval(args: argparse.Namespace) -> int:
    opts = _Options(args, _load_config(args))
    corpus = load_corpus(args.corpus)
    per_file: list[list[estimators.DifficultyEstimate]] = [
        estimators.read_estimates_csv(path) for path in args.scores
    ]
    all_estimates = [e for batch in per_file for e in batch]
    ids = {e.question_id for e in all_estimates}
    gold_lookup = dict(_gold_pairs(corpus, ids))

    by_method: dict[str, list[estimators.DifficultyEstimate]] = {}
    for est in all_estimates:
        by_method.setdefault(est.method, []).append(est)

    rows: list[tuple[str, int, float, float | None]] = []
    for method, ests in by_method.items():
        n, mean, std, _ = _method_rows(ests, gold_lookup, method)
        rows.append((method, n, mean, std))

    if opts.get("combine"):
        if len(per_file) != 2:
            raise QdrankError("--combine needs exactly two score files")
        combined = _combine_files(per_file[0], per_file[1])
        n, mean, std, _ = _method_rows(combined, gold_lookup, "combined")
        rows.append(("combined", n, mean, std))

    out = _out_dir(opts)
    eval_path = out / "eval.csv"
    ranking.write_eval_csv(eval_path, rows)
    outputs = [eval_path]

    print(f"{'method':<14}{'n':>6}{'spearman x100':>18}")
    for method, n, mean, std in rows:
        shown = f"{mean * 100:.1f}" if std is None else f"{mean * 100:.1f} ± {std * 100:.1f}"
        print(f"{method:<14}{n:>6}{shown:>18}")

    if opts.get("group_by_grade"):
        grade_rows = _grade_rows(corpus, by_method, gold_lookup)
        grade_path = out / "eval_by_grade.csv"
        with grade_path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["grade", "method", "n", "mean_rho", "std_rho"])
            for grade, method, n, mean, std in grade_rows:
                writer.writerow(
                    [grade, method, n, repr(mean), "" if std is None else repr(std)]
                )
        outputs.append(grade_path)
        print(f"{'grade':<8}{'method':<14}{'n':>6}{'spearman x100':>18}")
        for grade, method, n, mean, std in grade_rows:
            shown = f"{mean * 100:.1f}" if std is None else f"{mean * 100:.1f} ± {std * 100:.1f}"
            print(f"{grade:<8}{method:<14}{n:>6}{shown:>18}")

    _write_manifest(out, "eval", opts, [Path(args.corpus), *map(Path, args.scores)], outputs)
    return 0


def _combine_files(
    batch_a: list[estimators.DifficultyEstimate],
    batch_b: list[estimators.DifficultyEstimate],
) -> list[estimators.DifficultyEstimate]:
    """Rank-average two score files draw by draw.

    Equal draw counts pair up in order; a single-draw file broadcasts
    against every draw of the other.
    """
    draws_a = estimators.by_draw(batch_a)
    draws_b = estimators.by_draw(batch_b)
    keys_a = sorted(draws_a, key=lambda d: (d is not None, d))
    keys_b = sorted(draws_b, key=lambda d: (d is not None, d))
    if len(keys_a) == len(keys_b):
        pairing = list(zip(keys_a, keys_b))
    elif len(keys_a) == 1:
        pairing = [(keys_a[0], kb) for kb in keys_b]
    elif len(keys_b) == 1:
        pairing = [(ka, keys_b[0]) for ka in keys_a]
    else:
        raise QdrankError(
            f"cannot pair {len(keys_a)} draws with {len(keys_b)} draws for --combine"
        )
    combined: list[estimators.DifficultyEstimate] = []
    for draw_no, (ka, kb) in enumerate(pairing):
        merged = estimators.combine(draws_a[ka], draws_b[kb])
        draw_index = draw_no if len(pairing) > 1 else None
        combined.extend(
            estimators.DifficultyEstimate(e.question_id, e.method, e.score, draw_index)
            for e in merged
        )
    return combined


def _grade_rows(corpus, by_method, gold_lookup):
    grade_of = {q.id: q.grade for q in corpus}
    rows = []
    for method, ests in by_method.items():
        by_grade: dict[str, list] = {}
        for est in ests:
            grade = grade_of.get(est.question_id)
            if grade is not None:
                by_grade.setdefault(grade, []).append(est)
        for grade in sorted(by_grade):
            subset = by_grade[grade]
            if len({e.question_id for e in subset}) < 2:
                continue
            n, mean, std, _ = _method_rows(subset, gold_lookup, method)
            rows.append((grade, method, n, mean, std))
    return rows


def cmd_curve(args: argparse.Namespace) -> int:
    opts = _Options(args, _load_config(args))
    corpus = load_corpus(args.corpus)
    seed = int(opts.get("seed", 0))
    k_list = [int(k) for k in str(opts.get("k_list", "")).split(",") if k]
    if not k_list:
        raise QdrankError("--k-list must name at least one K")
    methods = [m for m in str(opts.get("methods", "comparative")).split(",") if m]
    draws = int(opts.get("draws", 30))
    judge = _build_judge(opts, corpus, seed)
    gold = _gold_pairs(corpus, set(corpus.ids()))

    out = _out_dir(opts)
    outputs = []
    for method in methods:
        if method not in ("comparative", "absolute"):
            raise QdrankError(f"curve supports comparative/absolute, not {method!r}")
        estimates_by_k = {}
        for k in k_list:
            cfg = RunConfig(k=k, draws=draws, seed=derive_seed(seed, "curve", method, k), position_policy=opts.get("position_policy", "random"))
            if method == "comparative":
                estimates, _ = run_comparative(corpus, judge, cfg, keep_records=False)
            else:
                estimates = run_absolute(corpus, judge, cfg)
            estimates_by_k[k] = list(estimators.by_draw(estimates).values())
        rows = ranking.correlation_curve(estimates_by_k, gold)
        path = out / f"curve_{method}.csv"
        ranking.write_curve_csv(path, rows)
        outputs.append(path)
        for k, mean, std in rows:
            print(f"{method} K={k}: rho {mean * 100:.1f} ± {std * 100:.1f}")
    _write_manifest(out, "curve", opts, [Path(args.corpus)], outputs)
    return 0


def cmd_bias(args: argparse.Namespace) -> int:
    opts = _Options(args, _load_config(args))
    corpus = load_corpus(args.corpus)
    seed = int(opts.get("seed", 0))
    n_pairs = int(opts.get("n_pairs", 1000))
    judge = _build_judge(opts, corpus, seed)
    report = measure_position_bias(corpus, judge, n_pairs, derive_rng(seed, "bias-pairs"))
    print(f"pairs judged (both orders): {report.n_pairs}")
    print(f"parsed judgments:           {report.n_judgments}")
    print(f"unparsed judgments:         {report.n_unparsed}")
    print(f"first-pick rate:            {report.first_pick_rate:.4f}")
    print(f"first-pick excess:          {report.first_pick_excess:+.4f}")
    print(f"inconsistency rate:         {report.inconsistency_rate:.4f}")
    out = _out_dir(opts)
    bias_path = out / "bias.csv"
    with bias_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["n_pairs", "n_judgments", "n_unparsed", "first_pick_rate", "first_pick_excess", "inconsistency_rate"]
        )
        writer.writerow(
            [
                report.n_pairs,
                report.n_judgments,
                report.n_unparsed,
                repr(report.first_pick_rate),
                repr(report.first_pick_excess),
                repr(report.inconsistency_rate),
            ]
        )
    _write_manifest(out, "bias", opts, [Path(args.corpus)], [bias_path])
    return 0


def _parse_grade_specs(raw: str) -> dict[str, GradeSpec]:
    text = raw
    if not raw.lstrip().startswith("{"):
        try:
            text = Path(raw).read_text(encoding="utf-8")
        except OSError as exc:
            raise QdrankError(f"cannot read spec {raw}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise QdrankError(f"grade spec is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise QdrankError("grade spec must be a JSON object keyed by grade")
    specs = {}
    for grade, entry in payload.items():
        if not isinstance(entry, dict):
            raise QdrankError(f"grade {grade!r}: spec entry must be an object")
        specs[grade] = GradeSpec(
            count=int(entry["count"]),
            mean=float(entry["mean"]),
            std=float(entry["std"]),
            dist_count=int(entry["dist_count"]) if "dist_count" in entry else None,
        )
    return specs


def cmd_simulate(args: argparse.Namespace) -> int:
    opts = _Options(args, _load_config(args))
    seed = int(opts.get("seed", 0))
    preset = opts.get("preset")
    spec_raw = opts.get("spec")
    if preset == "cmcqrd":
        specs = CMCQRD_SHAPE
    elif spec_raw:
        specs = _parse_grade_specs(spec_raw)
    else:
        raise QdrankError("simulate needs --preset cmcqrd or --spec")
    corpus = make_synthetic_corpus(
        specs, seed=seed, cohort_size=int(opts.get("cohort_size", 500))
    )
    out = _out_dir(opts)
    corpus_path = out / "corpus.jsonl"
    save_corpus(corpus, corpus_path)
    _write_manifest(out, "simulate", opts, [], [corpus_path])
    print(f"wrote {corpus_path} ({len(corpus)} questions)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _shared_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="root seed for all derived randomness")
    parser.add_argument("--config", help="JSON config file layered under CLI flags")
    parser.add_argument("--out-dir", dest="out_dir", help="directory for outputs + manifest")
    parser.add_argument("--parallelism", type=int, help="concurrent judge calls")


def _judge_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--judge", choices=["remote", "sim"], help="judge backend")
    parser.add_argument("--sim-beta", dest="sim_beta", type=float, help="comparison discrimination")
    parser.add_argument("--sim-epsilon", dest="sim_epsilon", type=float, help="first-position bias weight")
    parser.add_argument("--sim-sigma", dest="sim_sigma", type=float, help="absolute-score noise std")
    parser.add_argument("--sim-scale-lo", dest="sim_scale_lo", type=float, help="latent mapped to score 1")
    parser.add_argument("--sim-scale-hi", dest="sim_scale_hi", type=float, help="latent mapped to score 10")
    parser.add_argument("--base-url", dest="base_url", help="remote endpoint base URL")
    parser.add_argument("--model", help="remote model name")
    parser.add_argument("--temperature", type=float, help="remote sampling temperature")
    parser.add_argument("--max-retries", dest="max_retries", type=int, help="remote retry budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdrank", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"qdrank {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load a corpus and report per-grade counts and coverage")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("estimate", help="score every question with one estimation method")
    p.add_argument("corpus")
    p.add_argument("--method", choices=["level", "rc", "absolute", "comparative"])
    p.add_argument("--probs", help="probability JSONL for level/rc methods")
    p.add_argument("--k", type=int, help="comparisons or samples per question (default 250)")
    p.add_argument("--draws", type=int, help="independent repetitions (default 30)")
    p.add_argument(
        "--position-policy",
        dest="position_policy",
        choices=["target-first", "target-second", "random", "balanced"],
    )
    p.add_argument("--dump-raw", dest="dump_raw", action="store_const", const=True,
                   help="write raw judge replies to a sidecar JSONL")
    _judge_flags(p)
    _shared_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval", help="Spearman correlation of score files against gold difficulty")
    p.add_argument("scores", nargs="+", help="estimate CSV files")
    p.add_argument("--corpus", required=True, help="corpus JSONL carrying gold_difficulty")
    p.add_argument("--combine", action="store_const", const=True,
                   help="also rank-average the two score files")
    p.add_argument("--group-by-grade", dest="group_by_grade", action="store_const", const=True)
    _shared_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curve", help="correlation versus K for the zero-shot methods")
    p.add_argument("corpus")
    p.add_argument("--k-list", dest="k_list", help="comma-separated K values")
    p.add_argument("--draws", type=int)
    p.add_argument("--methods", help="comma-separated subset of comparative,absolute")
    p.add_argument(
        "--position-policy",
        dest="position_policy",
        choices=["target-first", "target-second", "random", "balanced"],
    )
    _judge_flags(p)
    _shared_flags(p)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("bias", help="measure position bias by judging pairs in both orders")
    p.add_argument("corpus")
    p.add_argument("--n-pairs", dest="n_pairs", type=int)
    _judge_flags(p)
    _shared_flags(p)
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("simulate", help="emit a synthetic corpus with gold difficulties")
    p.add_argument("--preset", choices=["cmcqrd"])
    p.add_argument("--spec", help="JSON object or file: grade -> {count, mean, std, dist_count}")
    p.add_argument("--cohort-size", dest="cohort_size", type=int)
    _shared_flags(p)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except JudgeBackendError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except QdrankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
