"""Rank statistics: tie-aware ranks, Spearman's correlation, draw
aggregation, and correlation-versus-K curves.

Spearman is always computed as Pearson on average-tie rank vectors so that
integer win counts (which tie often at small K) are handled; the closed-form
1 - 6*sum(d^2)/(n(n^2-1)) identity holds on tie-free input and is kept as a
test oracle only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import QdrankError


class NanScoreError(QdrankError):
    pass


class IdMismatchError(QdrankError):
    pass


class DegenerateInputError(QdrankError):
    """A score vector is constant; rank correlation is undefined."""


class MissingGoldError(QdrankError):
    pass


@dataclass(frozen=True)
class RankVector:
    """1-based average-tie ranks; higher score means higher rank number."""

    ids: tuple[str, ...]
    ranks: tuple[float, ...]


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    n: int
    mean_rho: float | None = None
    std_rho: float | None = None


def rank_array(values: np.ndarray) -> np.ndarray:
    """Average-tie ranks of a 1-D array, 1-based, ascending in value."""
    a = np.asarray(values, dtype=np.float64)
    n = a.size
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def to_ranks(scores: Sequence[tuple[str, float]]) -> RankVector:
    """Rank (id, score) pairs; ties get the average of the ranks they span."""
    if not scores:
        raise QdrankError("cannot rank an empty score list")
    ids = tuple(qid for qid, _ in scores)
    values = np.array([s for _, s in scores], dtype=np.float64)
    if not np.all(np.isfinite(values)):
        bad = ids[int(np.argmin(np.isfinite(values)))]
        raise NanScoreError(f"non-finite score for id {bad!r}")
    return RankVector(ids=ids, ranks=tuple(rank_array(values)))


def spearman(
    x: Sequence[tuple[str, float]], y: Sequence[tuple[str, float]]
) -> CorrelationResult:
    """Spearman's rank correlation of two id-keyed score lists.

    The two lists must cover the same id set (any order); each side needs at
    least two items and at least two distinct values.
    """
    x_map = dict(x)
    y_map = dict(y)
    if len(x_map) != len(x) or len(y_map) != len(y):
        raise IdMismatchError("duplicate ids within a score list")
    if set(x_map) != set(y_map):
        missing = set(x_map) ^ set(y_map)
        raise IdMismatchError(f"id sets differ (symmetric difference size {len(missing)})")
    n = len(x_map)
    if n < 2:
        raise DegenerateInputError("need at least 2 items")
    ids = list(x_map)
    xv = np.array([x_map[i] for i in ids], dtype=np.float64)
    yv = np.array([y_map[i] for i in ids], dtype=np.float64)
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(yv))):
        raise NanScoreError("non-finite score")
    if np.all(xv == xv[0]) or np.all(yv == yv[0]):
        raise DegenerateInputError("constant score vector")
    rx = rank_array(xv)
    ry = rank_array(yv)
    rx -= rx.mean()
    ry -= ry.mean()
    rho = float(np.sum(rx * ry) / np.sqrt(np.sum(rx * rx) * np.sum(ry * ry)))
    return CorrelationResult(rho=rho, n=n)


def draw_stats(rhos: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation over draws."""
    if len(rhos) == 0:
        raise QdrankError("draw_stats needs at least one value")
    arr = np.asarray(rhos, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _draw_pairs(draw: Iterable) -> list[tuple[str, float]]:
    out = []
    for item in draw:
        if isinstance(item, tuple):
            out.append((item[0], float(item[1])))
        else:  # DifficultyEstimate-like
            out.append((item.question_id, float(item.score)))
    return out


def correlation_curve(
    estimates_by_k: Mapping[int, Sequence[Iterable]],
    gold: Sequence[tuple[str, float]],
) -> list[tuple[int, float, float]]:
    """Per-K (mean_rho, std_rho) of per-draw estimates against gold scores.

    ``estimates_by_k`` maps K to a sequence of draws, each draw being
    (id, score) pairs or objects with ``question_id``/``score``. Rows come
    back sorted ascending by K.
    """
    gold_map = dict(gold)
    rows: list[tuple[int, float, float]] = []
    for k in sorted(estimates_by_k):
        rhos = []
        for draw in estimates_by_k[k]:
            pairs = _draw_pairs(draw)
            for qid, _ in pairs:
                if qid not in gold_map:
                    raise MissingGoldError(f"no gold difficulty for id {qid!r}")
            gold_side = [(qid, gold_map[qid]) for qid, _ in pairs]
            rhos.append(spearman(pairs, gold_side).rho)
        mean, std = draw_stats(rhos)
        rows.append((k, mean, std))
    return rows


def write_curve_csv(path: str | Path, rows: Sequence[tuple[int, float, float]]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["K", "mean_rho", "std_rho"])
        for k, mean, std in rows:
            writer.writerow([k, repr(float(mean)), repr(float(std))])


def write_eval_csv(
    path: str | Path, rows: Sequence[tuple[str, int, float, float | None]]
) -> None:
    """Rows of (method, n, mean_rho, std_rho); std is empty for single draws."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "n", "mean_rho", "std_rho"])
        for method, n, mean, std in rows:
            writer.writerow([method, n, repr(float(mean)), "" if std is None else repr(float(std))])
