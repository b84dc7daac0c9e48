from __future__ import annotations

import numpy as np
import pytest

from qdrank import absolute_aggregate, combine, ensemble_mean, level_map, rc_complement, win_count
from qdrank.corpus import AnswerDistribution, LevelDistribution
from qdrank.estimators import (
    AllUnparsedError,
    DifficultyEstimate,
    EmptyListError,
    MixedTargetError,
    OutOfRangeError,
    read_estimates_csv,
    write_estimates_csv,
)
from qdrank.ranking import IdMismatchError
from qdrank.scheduler import ComparisonRecord


def test_level_map_endpoints_and_interior():
    assert level_map(LevelDistribution(1, 0, 0)) == 0.0
    assert level_map(LevelDistribution(0, 0, 1)) == 1.0
    assert level_map(LevelDistribution(0, 1, 0)) == 0.5
    assert level_map(LevelDistribution(0.2, 0.5, 0.3)) == 0.55


def test_level_map_monotone_in_hard_mass():
    # shift mass from easy to hard with p_medium fixed
    rng = np.random.default_rng(0)
    for _ in range(50):
        p_med = rng.uniform(0, 0.9)
        rest = 1 - p_med
        h1, h2 = sorted(rng.uniform(0, rest, size=2))
        if h2 - h1 < 1e-9:
            continue
        lo = level_map(LevelDistribution(rest - h1, p_med, h1))
        hi = level_map(LevelDistribution(rest - h2, p_med, h2))
        assert hi > lo


def test_ensemble_mean():
    single = ensemble_mean([LevelDistribution(1, 0, 0)])
    assert (single.p_easy, single.p_medium, single.p_hard) == (1, 0, 0)
    merged = ensemble_mean([LevelDistribution(1, 0, 0), LevelDistribution(0, 1, 0)])
    assert (merged.p_easy, merged.p_medium, merged.p_hard) == (0.5, 0.5, 0.0)
    rng = np.random.default_rng(1)
    dists = []
    for _ in range(5):
        raw = rng.dirichlet([1, 1, 1])
        dists.append(LevelDistribution.from_raw(raw))
    mean = ensemble_mean(dists)
    assert mean.p_easy + mean.p_medium + mean.p_hard == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(EmptyListError):
        ensemble_mean([])


def test_rc_complement():
    assert rc_complement(AnswerDistribution((1.0, 0.0, 0.0, 0.0)), 0) == 0.0
    assert rc_complement(AnswerDistribution((0.25, 0.25, 0.25, 0.25)), 2) == 0.75
    assert rc_complement(AnswerDistribution((0.1, 0.6, 0.2, 0.1)), 1) == pytest.approx(0.4)
    with pytest.raises(OutOfRangeError):
        rc_complement(AnswerDistribution((0.5, 0.5)), 2)


def test_rc_complement_sums_with_true_class_exactly():
    rng = np.random.default_rng(2)
    for _ in range(100):
        dist = AnswerDistribution.from_raw(rng.dirichlet([1, 1, 1, 1]))
        j = int(rng.integers(0, 4))
        assert rc_complement(dist, j) + dist.probs[j] == 1.0


def test_absolute_aggregate():
    assert absolute_aggregate([5, 5, 5]) == 5.0
    assert absolute_aggregate([1, 10]) == 5.5
    for k in (1, 3, 17):
        assert absolute_aggregate([7] * k) == 7.0
    with pytest.raises(EmptyListError):
        absolute_aggregate([])
    with pytest.raises(OutOfRangeError):
        absolute_aggregate([5, 11])


def _record(target, opponent, verdict, draw=0, position="first"):
    return ComparisonRecord(
        target_id=target, opponent_id=opponent, target_position=position,
        verdict=verdict, draw_index=draw,
    )


def test_win_count_plain_and_rescaled():
    all_wins = [_record("t", f"o{i}", "target-win") for i in range(5)]
    assert win_count(all_wins) == 5.0
    all_losses = [_record("t", f"o{i}", "target-loss") for i in range(5)]
    assert win_count(all_losses) == 0.0
    mixed = (
        [_record("t", f"o{i}", "target-win") for i in range(3)]
        + [_record("t", "o3", "target-loss"), _record("t", "o4", "unparsed")]
    )
    # 3 wins out of 4 parsed, rescaled to nominal K=5
    assert win_count(mixed) == pytest.approx(3 * 5 / 4)


def test_win_count_order_invariant_and_errors():
    recs = (
        [_record("t", f"o{i}", "target-win") for i in range(4)]
        + [_record("t", f"o{i+4}", "target-loss") for i in range(3)]
        + [_record("t", "o9", "unparsed")]
    )
    base = win_count(recs)
    rng = np.random.default_rng(3)
    for _ in range(10):
        shuffled = list(recs)
        rng.shuffle(shuffled)
        assert win_count(shuffled) == base
    with pytest.raises(MixedTargetError):
        win_count([_record("t", "o1", "target-win"), _record("u", "o2", "target-win")])
    with pytest.raises(AllUnparsedError):
        win_count([_record("t", "o1", "unparsed")])


def _estimates(scores, method="comparative"):
    return [
        DifficultyEstimate(question_id=f"q{i}", method=method, score=float(s))
        for i, s in enumerate(scores)
    ]


def test_combine_identical_rankings_is_idempotent():
    a = _estimates([1.0, 5.0, 3.0])
    b = _estimates([10.0, 50.0, 30.0], method="level")
    merged = combine(a, b)
    by_id = {e.question_id: e.score for e in merged}
    assert by_id["q1"] > by_id["q2"] > by_id["q0"]
    assert all(e.method == "combined" for e in merged)


def test_combine_opposed_rankings_tie():
    a = _estimates([1.0, 2.0, 3.0])
    b = _estimates([3.0, 2.0, 1.0])
    merged = combine(a, b)
    assert [e.score for e in merged] == [2.0, 2.0, 2.0]


def test_combine_symmetric_and_monotone_invariant():
    rng = np.random.default_rng(4)
    a = _estimates(rng.standard_normal(20))
    b = _estimates(rng.standard_normal(20))
    ab = {e.question_id: e.score for e in combine(a, b)}
    ba = {e.question_id: e.score for e in combine(b, a)}
    assert ab == ba
    # strictly monotone transform of one side leaves the combination unchanged
    squashed = [
        DifficultyEstimate(e.question_id, e.method, float(np.tanh(e.score) * 100 + 7))
        for e in a
    ]
    assert {e.question_id: e.score for e in combine(squashed, b)} == ab


def test_combine_id_mismatch():
    a = _estimates([1.0, 2.0])
    b = _estimates([1.0, 2.0, 3.0])
    with pytest.raises(IdMismatchError):
        combine(a, b)


def test_estimates_csv_round_trip(tmp_path):
    estimates = [
        DifficultyEstimate("q1", "comparative", 3.75, 0),
        DifficultyEstimate("q2", "comparative", 0.0, 0),
        DifficultyEstimate("q1", "level", 0.55, None),
    ]
    path = tmp_path / "scores.csv"
    write_estimates_csv(path, estimates)
    assert read_estimates_csv(path) == estimates
