"""Turn system outputs into continuous difficulty scores.

Four score sources share the ``DifficultyEstimate`` shape: the level-to-score
mapping, the true-class complement, the mean of repeated absolute judge
samples, and the pairwise win count. ``combine`` merges two estimate lists by
averaging their ranks. Only the relative order of scores is meaningful.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import ranking
from .corpus import AnswerDistribution, LevelDistribution
from .errors import QdrankError

METHODS = frozenset({"level", "rc", "absolute", "comparative", "combined", "human"})


class EmptyListError(QdrankError):
    pass


class OutOfRangeError(QdrankError):
    pass


class MixedTargetError(QdrankError):
    pass


class AllUnparsedError(QdrankError):
    pass


@dataclass(frozen=True)
class DifficultyEstimate:
    """(question, method, score); larger score means judged harder.

    ``draw_index`` is set when the estimate came from one of several
    repeated draws.
    """

    question_id: str
    method: str
    score: float
    draw_index: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise QdrankError(f"unknown method {self.method!r}")
        if not math.isfinite(self.score):
            raise QdrankError(f"{self.question_id}: score must be finite")


def level_map(dist: LevelDistribution) -> float:
    """Expected level score: 0.0*p_easy + 0.5*p_medium + 1.0*p_hard."""
    return 0.0 * dist.p_easy + 0.5 * dist.p_medium + 1.0 * dist.p_hard


def ensemble_mean(dists: Sequence[LevelDistribution]) -> LevelDistribution:
    """Elementwise mean of level distributions (probability averaging)."""
    if not dists:
        raise EmptyListError("ensemble_mean needs at least one distribution")
    n = len(dists)
    return LevelDistribution(
        p_easy=sum(d.p_easy for d in dists) / n,
        p_medium=sum(d.p_medium for d in dists) / n,
        p_hard=sum(d.p_hard for d in dists) / n,
    )


def rc_complement(dist: AnswerDistribution, correct_index: int) -> float:
    """Complement of the probability assigned to the correct option."""
    if not 0 <= correct_index < len(dist.probs):
        raise OutOfRangeError(
            f"correct_index {correct_index} out of range for {len(dist.probs)} options"
        )
    return 1.0 - dist.probs[correct_index]


def absolute_aggregate(samples: Sequence[float]) -> float:
    """Mean of repeated 1-10 absolute difficulty samples."""
    if not samples:
        raise EmptyListError("no samples to aggregate")
    for s in samples:
        if not 1 <= s <= 10:
            raise OutOfRangeError(f"sample {s} outside [1, 10]")
    return float(sum(samples)) / len(samples)


def win_count(records: Sequence) -> float:
    """Win count of one target over its K comparisons.

    Records with verdict "unparsed" are excluded from the denominator and
    the count is rescaled to the nominal K (wins * K / (K - unparsed)) so
    scores stay comparable across targets; all-unparsed is an error.
    Accepts any records with ``target_id`` and ``verdict`` attributes.
    """
    if not records:
        raise EmptyListError("no comparison records")
    target = records[0].target_id
    wins = 0
    unparsed = 0
    for rec in records:
        if rec.target_id != target:
            raise MixedTargetError(f"records mix targets {target!r} and {rec.target_id!r}")
        if rec.verdict == "target-win":
            wins += 1
        elif rec.verdict == "unparsed":
            unparsed += 1
    k = len(records)
    if unparsed == k:
        raise AllUnparsedError(f"all {k} comparisons for {target!r} were unparsed")
    return wins * k / (k - unparsed)


def combine(
    estimates_a: Sequence[DifficultyEstimate],
    estimates_b: Sequence[DifficultyEstimate],
) -> list[DifficultyEstimate]:
    """Merge two estimate lists by averaging their average-tie ranks.

    Consumes ranks only, so it is invariant under any strictly monotone
    transform of either input's scores. Both lists must cover the same ids,
    one estimate per id.
    """
    a_scores = [(e.question_id, e.score) for e in estimates_a]
    b_scores = [(e.question_id, e.score) for e in estimates_b]
    a_map = dict(a_scores)
    b_map = dict(b_scores)
    if len(a_map) != len(a_scores) or len(b_map) != len(b_scores):
        raise ranking.IdMismatchError("duplicate ids within an estimate list")
    if set(a_map) != set(b_map):
        raise ranking.IdMismatchError("combine requires identical id sets")
    ranks_a = ranking.to_ranks(a_scores)
    ranks_b = ranking.to_ranks(b_scores)
    rank_a = dict(zip(ranks_a.ids, ranks_a.ranks))
    rank_b = dict(zip(ranks_b.ids, ranks_b.ranks))
    return [
        DifficultyEstimate(
            question_id=qid,
            method="combined",
            score=(rank_a[qid] + rank_b[qid]) / 2.0,
        )
        for qid, _ in a_scores
    ]


def by_draw(estimates: Sequence[DifficultyEstimate]) -> dict[int | None, list[DifficultyEstimate]]:
    """Group a flat estimate list by draw index, preserving order."""
    out: dict[int | None, list[DifficultyEstimate]] = {}
    for est in estimates:
        out.setdefault(est.draw_index, []).append(est)
    return out


def write_estimates_csv(path: str | Path, estimates: Sequence[DifficultyEstimate]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["question_id", "method", "draw_index", "score"])
        for est in estimates:
            writer.writerow(
                [
                    est.question_id,
                    est.method,
                    "" if est.draw_index is None else est.draw_index,
                    repr(float(est.score)),
                ]
            )


def read_estimates_csv(path: str | Path) -> list[DifficultyEstimate]:
    path = Path(path)
    estimates: list[DifficultyEstimate] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"question_id", "method", "draw_index", "score"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise QdrankError(f"{path}: expected header {sorted(expected)}")
        for row in reader:
            estimates.append(
                DifficultyEstimate(
                    question_id=row["question_id"],
                    method=row["method"],
                    score=float(row["score"]),
                    draw_index=int(row["draw_index"]) if row["draw_index"] else None,
                )
            )
    if not estimates:
        raise QdrankError(f"{path}: no estimates")
    return estimates
