"""Experiment orchestration: opponent sampling, repeated draws, judge
dispatch, record collection, and position-bias measurement.

A judge is anything exposing ``parallelism``, ``resample_retries``, and the
``compare(first, second, labels)`` / ``score(question, labels)`` calls from
the judge module. Work is dispatched one (question, draw) block at a time,
optionally across a thread pool; results are keyed, then sorted, so a run is
byte-reproducible at any parallelism.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._streams import derive_rng
from .corpus import Corpus
from .errors import JudgeBackendError, QdrankError
from .estimators import AllUnparsedError, DifficultyEstimate, absolute_aggregate, win_count
from .judge import Verdict

logger = logging.getLogger(__name__)

POSITION_POLICIES = ("target-first", "target-second", "random", "balanced")


class KTooLargeError(QdrankError):
    pass


class JudgeFailureError(JudgeBackendError):
    """A judge call failed mid-run; carries whatever records completed."""

    def __init__(self, message: str, records: list[ComparisonRecord]):
        self.records = records
        super().__init__(message)


class AllSamplesUnparseableError(QdrankError):
    pass


@dataclass(frozen=True)
class ComparisonRecord:
    """One pairwise judgment, resolved to the target's point of view."""

    target_id: str
    opponent_id: str
    target_position: str  # "first" | "second"
    verdict: str  # "target-win" | "target-loss" | "unparsed"
    draw_index: int
    raw: str = ""

    def __post_init__(self):
        if self.target_id == self.opponent_id:
            raise QdrankError(f"target and opponent are both {self.target_id!r}")


@dataclass(frozen=True)
class RunConfig:
    """Shape of one zero-shot experiment."""

    k: int
    draws: int = 30
    seed: int = 0
    position_policy: str = "random"

    def __post_init__(self):
        if self.k < 1:
            raise QdrankError("k must be >= 1")
        if self.draws < 1:
            raise QdrankError("draws must be >= 1")
        if self.position_policy not in POSITION_POLICIES:
            raise QdrankError(f"unknown position policy {self.position_policy!r}")


def verdict_outcome(target_position: str, verdict: Verdict) -> str:
    """Map a positional verdict onto the target: a win iff the judge picked
    the slot the target occupied."""
    if verdict.value == "unparsed":
        return "unparsed"
    return "target-win" if verdict.value == target_position else "target-loss"


def sample_opponents(
    target_id: str, corpus: Corpus, k: int, stream: np.random.Generator
) -> list[str]:
    """K distinct opponent ids, uniform without replacement."""
    others = [q.id for q in corpus if q.id != target_id]
    if k > len(others):
        raise KTooLargeError(f"k={k} but only {len(others)} possible opponents")
    picked = stream.choice(len(others), size=k, replace=False)
    return [others[i] for i in picked]


def _target_first_flags(
    policy: str, k: int, rng: np.random.Generator
) -> np.ndarray:
    if policy == "target-first":
        return np.ones(k, dtype=bool)
    if policy == "target-second":
        return np.zeros(k, dtype=bool)
    if policy == "balanced":
        flags = np.zeros(k, dtype=bool)
        flags[0::2] = True  # ceil(k/2) firsts
        return flags
    return rng.random(k) < 0.5


def _run_blocks(
    blocks: Sequence[tuple[tuple, object]],
    worker: Callable,
    parallelism: int,
) -> dict:
    """Run block workers, possibly threaded; returns {key: result}.

    On a judge failure the run aborts and the partial results are attached
    to the raised JudgeFailureError.
    """
    results: dict = {}
    if parallelism <= 1:
        for key, payload in blocks:
            try:
                results[key] = worker(payload)
            except JudgeBackendError as exc:
                raise JudgeFailureError(
                    str(exc), _collect_partial_records(results)
                ) from exc
        return results
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = {pool.submit(worker, payload): key for key, payload in blocks}
        done, not_done = wait(futures, return_when=FIRST_EXCEPTION)
        failure: Exception | None = None
        for fut in done:
            try:
                results[futures[fut]] = fut.result()
            except JudgeBackendError as exc:
                failure = exc
        for fut in not_done:
            fut.cancel()
        if failure is not None:
            raise JudgeFailureError(
                str(failure), _collect_partial_records(results)
            ) from failure
    return results


def _collect_partial_records(results: dict) -> list[ComparisonRecord]:
    records: list[ComparisonRecord] = []
    for value in results.values():
        if isinstance(value, tuple) and len(value) == 3:
            records.extend(value[2])
    return records


def run_comparative(
    corpus: Corpus,
    judge,
    cfg: RunConfig,
    keep_records: bool = True,
) -> tuple[list[DifficultyEstimate], list[ComparisonRecord]]:
    """Win-count difficulty estimates over repeated draws.

    Per draw and question, K opponents are sampled fresh, each comparison is
    judged under the position policy, and the win count (rescaled past any
    unparsed verdicts) is the question's score for that draw. Records are
    retained unless ``keep_records`` is off (large sweeps only need the
    estimates).
    """
    n = len(corpus)
    if cfg.k > n - 1:
        raise KTooLargeError(f"k={cfg.k} requires a corpus of at least {cfg.k + 1} questions")
    by_id = {q.id: q for q in corpus}
    retries = getattr(judge, "resample_retries", 0)

    blocks = []
    for draw in range(cfg.draws):
        for target in corpus:
            rng = derive_rng(cfg.seed, "draw", target.id, draw)
            opponents = sample_opponents(target.id, corpus, cfg.k, rng)
            flags = _target_first_flags(cfg.position_policy, cfg.k, rng)
            blocks.append(((draw, target.id), (target, draw, opponents, flags)))

    def worker(payload) -> tuple[int, int, list[ComparisonRecord]]:
        target, draw, opponents, flags = payload
        wins = 0
        unparsed = 0
        records: list[ComparisonRecord] = []
        for opponent_id, target_first in zip(opponents, flags):
            opponent = by_id[opponent_id]
            position = "first" if target_first else "second"
            pair = (target, opponent) if target_first else (opponent, target)
            order_flag = 1 if target_first else 0
            outcome = "unparsed"
            raw = ""
            for attempt in range(retries + 1):
                verdict = judge.compare(
                    pair[0], pair[1], (target.id, opponent_id, draw, order_flag, attempt)
                )
                raw = verdict.raw
                outcome = verdict_outcome(position, verdict)
                if outcome != "unparsed":
                    break
            if outcome == "target-win":
                wins += 1
            elif outcome == "unparsed":
                unparsed += 1
            if keep_records:
                records.append(
                    ComparisonRecord(
                        target_id=target.id,
                        opponent_id=opponent_id,
                        target_position=position,
                        verdict=outcome,
                        draw_index=draw,
                        raw=raw,
                    )
                )
        return wins, unparsed, records

    results = _run_blocks(blocks, worker, getattr(judge, "parallelism", 1))

    estimates: list[DifficultyEstimate] = []
    records: list[ComparisonRecord] = []
    for draw in range(cfg.draws):
        for target in corpus:
            wins, unparsed, block_records = results[(draw, target.id)]
            if keep_records:
                score = win_count(block_records)
                records.extend(block_records)
            else:
                if unparsed == cfg.k:
                    raise AllUnparsedError(
                        f"all {cfg.k} comparisons for {target.id!r} were unparsed"
                    )
                score = wins * cfg.k / (cfg.k - unparsed)
            estimates.append(
                DifficultyEstimate(
                    question_id=target.id,
                    method="comparative",
                    score=score,
                    draw_index=draw,
                )
            )
    records.sort(key=lambda r: (r.target_id, r.opponent_id, r.draw_index, r.target_position))
    return estimates, records


def run_absolute(
    corpus: Corpus, judge, cfg: RunConfig
) -> list[DifficultyEstimate]:
    """Mean-of-K-samples difficulty estimates over repeated draws.

    Unparseable replies are resampled up to the judge's retry budget, then
    dropped from the mean; a question whose samples all fail is an error.
    """
    retries = getattr(judge, "resample_retries", 0)
    blocks = [
        ((draw, target.id), (target, draw))
        for draw in range(cfg.draws)
        for target in corpus
    ]

    def worker(payload) -> tuple[float, int, list]:
        target, draw = payload
        samples: list[int] = []
        for k in range(cfg.k):
            for attempt in range(retries + 1):
                value, _raw = judge.score(target, (target.id, draw, k, attempt))
                if value is not None:
                    samples.append(value)
                    break
        if not samples:
            raise AllSamplesUnparseableError(
                f"question {target.id!r}, draw {draw}: no parseable samples"
            )
        return absolute_aggregate(samples), len(samples), []

    results = _run_blocks(blocks, worker, getattr(judge, "parallelism", 1))

    estimates = []
    for draw in range(cfg.draws):
        for target in corpus:
            score, n_kept, _ = results[(draw, target.id)]
            if n_kept < cfg.k:
                logger.warning(
                    "question %s draw %d: %d of %d samples dropped as unparseable",
                    target.id, draw, cfg.k - n_kept, cfg.k,
                )
            estimates.append(
                DifficultyEstimate(
                    question_id=target.id,
                    method="absolute",
                    score=score,
                    draw_index=draw,
                )
            )
    return estimates


@dataclass(frozen=True)
class BiasReport:
    """Position-bias statistics from judging sampled pairs in both orders.

    ``first_pick_rate`` is the fraction of parsed judgments choosing
    position one, ``first_pick_excess`` its surplus over 0.5, and
    ``inconsistency_rate`` the fraction of pairs whose two orderings picked
    the same position (i.e. contradicted each other on content).
    """

    n_pairs: int
    n_judgments: int
    n_unparsed: int
    first_pick_rate: float
    first_pick_excess: float
    inconsistency_rate: float


def measure_position_bias(
    corpus: Corpus, judge, n_pairs: int, stream: np.random.Generator
) -> BiasReport:
    """Judge ``n_pairs`` random unordered pairs in both orders."""
    if n_pairs < 1:
        raise QdrankError("n_pairs must be >= 1")
    n = len(corpus)
    if n < 2:
        raise QdrankError("need at least 2 questions")
    questions = list(corpus)
    a_idx = stream.integers(0, n, size=n_pairs)
    b_idx = stream.integers(0, n - 1, size=n_pairs)
    b_idx = b_idx + (b_idx >= a_idx)

    blocks = []
    for pair_no in range(n_pairs):
        qa = questions[int(a_idx[pair_no])]
        qb = questions[int(b_idx[pair_no])]
        blocks.append(((pair_no,), (pair_no, qa, qb)))

    def worker(payload) -> tuple[Verdict, Verdict]:
        pair_no, qa, qb = payload
        forward = judge.compare(qa, qb, (qa.id, qb.id, pair_no, 1))
        reverse = judge.compare(qb, qa, (qb.id, qa.id, pair_no, 0))
        return forward, reverse

    results = _run_blocks(blocks, worker, getattr(judge, "parallelism", 1))

    first_picks = 0
    parsed = 0
    unparsed = 0
    inconsistent = 0
    both_parsed_pairs = 0
    for pair_no in range(n_pairs):
        forward, reverse = results[(pair_no,)]
        for verdict in (forward, reverse):
            if verdict.value == "unparsed":
                unparsed += 1
            else:
                parsed += 1
                if verdict.value == "first":
                    first_picks += 1
        if forward.value != "unparsed" and reverse.value != "unparsed":
            both_parsed_pairs += 1
            if forward.value == reverse.value:
                inconsistent += 1
    rate = first_picks / parsed if parsed else math.nan
    return BiasReport(
        n_pairs=n_pairs,
        n_judgments=parsed,
        n_unparsed=unparsed,
        first_pick_rate=rate,
        first_pick_excess=rate - 0.5,
        inconsistency_rate=inconsistent / both_parsed_pairs if both_parsed_pairs else math.nan,
    )


def write_records_csv(path: str | Path, records: Sequence[ComparisonRecord]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target_id", "opponent_id", "target_position", "verdict", "draw_index"])
        for rec in records:
            writer.writerow(
                [rec.target_id, rec.opponent_id, rec.target_position, rec.verdict, rec.draw_index]
            )


def write_raw_sidecar(path: str | Path, records: Sequence[ComparisonRecord]) -> None:
    """Raw judge replies, one JSON object per record, in record-log order."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "target_id": rec.target_id,
                        "opponent_id": rec.opponent_id,
                        "target_position": rec.target_position,
                        "verdict": rec.verdict,
                        "draw_index": rec.draw_index,
                        "raw": rec.raw,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")
