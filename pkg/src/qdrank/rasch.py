"""Dichotomous Rasch cohorts: simulation, difficulty fitting, and synthetic
corpora with grade-wise human answer distributions.

P(correct) = logistic(ability - difficulty). Fitting is joint maximum
likelihood by alternating damped Newton sweeps over abilities and
difficulties under a mean-zero ability constraint. Joint ML carries a known
finite-sample bias away from zero, which is acceptable here: everything
downstream consumes difficulty *ranks*, not calibrated values. Rows or
columns that are all-correct or all-wrong have no finite ML estimate; they
are dropped with a warning unless they are the only thing being fitted.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._streams import derive_rng
from .corpus import GRADES, AnswerDistribution, Corpus, Question
from .errors import QdrankError

logger = logging.getLogger(__name__)

OPTION_COUNT = 4


class InvalidSkewError(QdrankError):
    pass


class InvalidSpecError(QdrankError):
    pass


class NonConvergenceError(QdrankError):
    pass


class DegenerateItemError(QdrankError):
    pass


class DegenerateExamineeError(QdrankError):
    pass


@dataclass(frozen=True)
class RaschParams:
    """Latent abilities (one per examinee) and item difficulties.

    Fitted output satisfies mean(abilities) = 0; ``item_ids`` aligns with
    ``difficulties`` when known.
    """

    abilities: np.ndarray
    difficulties: np.ndarray
    item_ids: tuple[str, ...] | None = None


@dataclass(frozen=True)
class ResponseMatrix:
    """Binary correctness matrix (examinee x item) plus per-item option
    choice counts for building answer distributions."""

    correct: np.ndarray
    item_ids: tuple[str, ...]
    choice_counts: np.ndarray  # (n_items, n_options)
    correct_indices: tuple[int, ...]

    @property
    def n_examinees(self) -> int:
        return self.correct.shape[0]

    @property
    def n_items(self) -> int:
        return self.correct.shape[1]

    def answer_distribution(self, item: int) -> AnswerDistribution:
        counts = self.choice_counts[item]
        return AnswerDistribution.from_raw(counts / counts.sum())


def _expit(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def simulate_cohort(
    n_examinees: int,
    difficulties: Sequence[float],
    theta_mean: float,
    theta_std: float,
    distractor_skew: Sequence[float] | None,
    stream: np.random.Generator,
    *,
    correct_indices: Sequence[int] | None = None,
    item_ids: Sequence[str] | None = None,
) -> ResponseMatrix:
    """Simulate one cohort answering every item.

    Abilities are Normal(theta_mean, theta_std); each response is
    Bernoulli(logistic(ability - difficulty)). Wrong answers are spread over
    the distractors by ``distractor_skew`` (uniform when None), giving each
    item an empirical option-choice count.
    """
    if n_examinees < 1:
        raise QdrankError("n_examinees must be >= 1")
    if theta_std < 0:
        raise QdrankError("theta_std must be >= 0")
    b = np.asarray(difficulties, dtype=np.float64)
    n_items = b.size
    if distractor_skew is None:
        skew = np.full(OPTION_COUNT - 1, 1.0 / (OPTION_COUNT - 1))
    else:
        skew = np.asarray(distractor_skew, dtype=np.float64)
        if skew.size != OPTION_COUNT - 1 or np.any(skew < 0) or not np.isfinite(skew).all():
            raise InvalidSkewError(
                f"distractor_skew must be {OPTION_COUNT - 1} non-negative reals, got {skew}"
            )
        total = skew.sum()
        if abs(total - 1.0) > 1e-6:
            raise InvalidSkewError(f"distractor_skew sums to {total}, expected 1")
        skew = skew / total
    if correct_indices is None:
        correct_idx = np.zeros(n_items, dtype=np.int64)
    else:
        correct_idx = np.asarray(correct_indices, dtype=np.int64)
        if correct_idx.size != n_items or np.any((correct_idx < 0) | (correct_idx >= OPTION_COUNT)):
            raise QdrankError("correct_indices must give one option index per item")
    ids = tuple(item_ids) if item_ids is not None else tuple(f"item-{i:04d}" for i in range(n_items))

    theta = stream.normal(theta_mean, theta_std, size=n_examinees)
    probs = _expit(theta[:, None] - b[None, :])
    correct = (stream.random((n_examinees, n_items)) < probs).astype(np.uint8)

    counts = np.zeros((n_items, OPTION_COUNT), dtype=np.int64)
    n_correct = correct.sum(axis=0)
    for i in range(n_items):
        wrong = n_examinees - int(n_correct[i])
        distractor_counts = stream.multinomial(wrong, skew)
        slot = 0
        for opt in range(OPTION_COUNT):
            if opt == correct_idx[i]:
                counts[i, opt] = n_correct[i]
            else:
                counts[i, opt] = distractor_counts[slot]
                slot += 1
    return ResponseMatrix(
        correct=correct,
        item_ids=ids,
        choice_counts=counts,
        correct_indices=tuple(int(c) for c in correct_idx),
    )


def _drop_degenerate(m: ResponseMatrix) -> tuple[np.ndarray, list[str], np.ndarray]:
    """Iteratively remove all-0/all-1 rows and columns; returns the kept
    submatrix, kept item ids, and kept examinee indices."""
    x = m.correct.astype(np.float64)
    row_keep = np.ones(x.shape[0], dtype=bool)
    col_keep = np.ones(x.shape[1], dtype=bool)
    while True:
        sub = x[np.ix_(row_keep, col_keep)]
        n_rows, n_cols = sub.shape
        if n_rows == 0 or n_cols == 0:
            break
        col_sums = sub.sum(axis=0)
        bad_cols = (col_sums == 0) | (col_sums == n_rows)
        row_sums = sub.sum(axis=1)
        bad_rows = (row_sums == 0) | (row_sums == n_cols)
        if not bad_cols.any() and not bad_rows.any():
            break
        if bad_cols.any():
            dropped = [mid for mid, bad in zip(np.array(m.item_ids)[col_keep], bad_cols) if bad]
            logger.warning("dropping degenerate items (all correct or all wrong): %s", dropped)
            col_keep[np.where(col_keep)[0][bad_cols]] = False
        if bad_rows.any():
            idx = np.where(row_keep)[0][bad_rows]
            logger.warning("dropping %d degenerate examinees", idx.size)
            row_keep[idx] = False
    kept_ids = [mid for mid, keep in zip(m.item_ids, col_keep) if keep]
    return x[np.ix_(row_keep, col_keep)], kept_ids, np.where(row_keep)[0]


def fit_difficulty(m: ResponseMatrix, tol: float = 1e-6, max_iter: int = 500) -> RaschParams:
    """Joint ML difficulty estimates under mean-zero abilities.

    Alternates Newton updates on abilities and difficulties (steps damped to
    one logit) until the largest parameter change falls below ``tol``.
    """
    n_examinees, n_items = m.correct.shape
    col_sums = m.correct.sum(axis=0)
    if n_items == 1 and col_sums[0] in (0, n_examinees):
        raise DegenerateItemError(
            f"item {m.item_ids[0]!r} is {'all correct' if col_sums[0] else 'all wrong'}; "
            "its difficulty has no finite estimate"
        )
    row_sums = m.correct.sum(axis=1)
    if n_examinees == 1 and row_sums[0] in (0, n_items):
        raise DegenerateExamineeError("the only examinee answered uniformly")

    x, kept_ids, kept_rows = _drop_degenerate(m)
    if x.shape[1] == 0:
        raise DegenerateItemError("no items left after dropping degenerate rows/columns")
    if x.shape[0] == 0:
        raise DegenerateExamineeError("no examinees left after dropping degenerate rows/columns")

    n_e, n_i = x.shape
    p_row = x.mean(axis=1)
    p_col = x.mean(axis=0)
    theta = np.log(p_row / (1.0 - p_row))
    b = -np.log(p_col / (1.0 - p_col))
    shift = theta.mean()
    theta -= shift
    b -= shift

    for iteration in range(max_iter):
        probs = _expit(theta[:, None] - b[None, :])
        info_rows = (probs * (1.0 - probs)).sum(axis=1)
        step_theta = np.clip((x - probs).sum(axis=1) / info_rows, -1.0, 1.0)
        theta = theta + step_theta
        shift = theta.mean()
        theta -= shift
        b -= shift

        probs = _expit(theta[:, None] - b[None, :])
        info_cols = (probs * (1.0 - probs)).sum(axis=0)
        step_b = np.clip((probs - x).sum(axis=0) / info_cols, -1.0, 1.0)
        b = b + step_b

        if max(np.abs(step_theta).max(), np.abs(step_b).max()) < tol:
            return RaschParams(abilities=theta, difficulties=b, item_ids=tuple(kept_ids))
    raise NonConvergenceError(f"no convergence after {max_iter} iterations (tol={tol})")


def cohort_invariance_report(
    difficulties: Sequence[float],
    cohort_a: tuple[float, float],
    cohort_b: tuple[float, float],
    n_each: int,
    seed: int,
) -> tuple[float, dict]:
    """Fit the same items from two independently simulated cohorts and
    report the Spearman correlation between the fitted difficulties.

    Cohort streams are derived from (seed, cohort mean, cohort std, n_each),
    so two calls with identical cohort specs see identical responses.
    """
    from .ranking import spearman

    item_ids = tuple(f"item-{i:04d}" for i in range(len(difficulties)))
    fits = {}
    for label, (mean, std) in (("a", cohort_a), ("b", cohort_b)):
        rng = derive_rng(seed, "cohort", mean, std, n_each)
        matrix = simulate_cohort(n_each, difficulties, mean, std, None, rng, item_ids=item_ids)
        fits[label] = fit_difficulty(matrix)
    shared = sorted(set(fits["a"].item_ids) & set(fits["b"].item_ids))
    scores = {}
    for label in ("a", "b"):
        lookup = dict(zip(fits[label].item_ids, fits[label].difficulties))
        scores[label] = [(mid, float(lookup[mid])) for mid in shared]
    rho = spearman(scores["a"], scores["b"]).rho
    summary = {
        "n_items": len(difficulties),
        "n_shared_items": len(shared),
        "n_each": n_each,
        "cohort_a": cohort_a,
        "cohort_b": cohort_b,
        "rho_ab": rho,
    }
    return rho, summary


@dataclass(frozen=True)
class GradeSpec:
    """Per-grade generation recipe: question count, difficulty mean/std,
    and how many questions receive a human answer distribution."""

    count: int
    mean: float
    std: float
    dist_count: int | None = None

    def __post_init__(self):
        if self.count < 1:
            raise InvalidSpecError("count must be >= 1")
        if self.std < 0:
            raise InvalidSpecError("std must be >= 0")
        if self.dist_count is not None and not 0 <= self.dist_count <= self.count:
            raise InvalidSpecError("dist_count must be in [0, count]")


# Grade sizes and human-distribution coverage shaped like the CMCQRD test
# set; difficulty means rise by one logit per grade with std at half the gap.
CMCQRD_SHAPE: dict[str, GradeSpec] = {
    "B1": GradeSpec(count=140, mean=-1.5, std=0.5, dist_count=115),
    "B2": GradeSpec(count=327, mean=-0.5, std=0.5, dist_count=222),
    "C1": GradeSpec(count=137, mean=0.5, std=0.5, dist_count=72),
    "C2": GradeSpec(count=54, mean=1.5, std=0.5, dist_count=39),
}


def make_synthetic_corpus(
    spec: Mapping[str, GradeSpec | tuple],
    seed: int,
    cohort_size: int = 500,
    name: str = "synthetic",
) -> Corpus:
    """Synthetic corpus with gold difficulties drawn per grade and human
    answer distributions simulated by a separate cohort per grade.

    Each grade's cohort ability is centred on that grade's difficulty mean,
    mimicking test takers matched to their level: within-grade answer
    distributions track difficulty well while pooled-across-grade ones do
    not.
    """
    if not spec:
        raise InvalidSpecError("spec must name at least one grade")
    normalized: dict[str, GradeSpec] = {}
    for grade, entry in spec.items():
        if grade not in GRADES:
            raise InvalidSpecError(f"unknown grade {grade!r}")
        normalized[grade] = entry if isinstance(entry, GradeSpec) else GradeSpec(*entry)

    questions: list[Question] = []
    for grade, gspec in normalized.items():
        rng = derive_rng(seed, "grade", grade)
        gold = rng.normal(gspec.mean, gspec.std, size=gspec.count)
        correct_idx = rng.integers(0, OPTION_COUNT, size=gspec.count)
        ids = [f"{grade}-{i:04d}" for i in range(gspec.count)]
        cohort = simulate_cohort(
            cohort_size,
            gold,
            theta_mean=gspec.mean,
            theta_std=1.0,
            distractor_skew=None,
            stream=derive_rng(seed, "cohort", grade),
            correct_indices=correct_idx,
            item_ids=ids,
        )
        dist_count = gspec.count if gspec.dist_count is None else gspec.dist_count
        with_dist = set(
            derive_rng(seed, "dist", grade).choice(gspec.count, size=dist_count, replace=False)
        )
        for i in range(gspec.count):
            questions.append(
                Question(
                    id=ids[i],
                    context=f"Placeholder context for {ids[i]}.",
                    question=f"Placeholder question for {ids[i]}?",
                    options=tuple(f"option {label} of {ids[i]}" for label in "ABCD"),
                    correct_index=int(correct_idx[i]),
                    grade=grade,
                    gold_difficulty=float(gold[i]),
                    human_dist=cohort.answer_distribution(i) if i in with_dist else None,
                )
            )
    return Corpus(questions=tuple(questions), name=name)


def write_fit_csv(path: str | Path, params: RaschParams) -> None:
    if params.item_ids is None:
        raise QdrankError("fitted params carry no item ids")
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "b_hat"])
        for item_id, b_hat in zip(params.item_ids, params.difficulties):
            writer.writerow([item_id, repr(float(b_hat))])
