"""Difficulty ranking for multiple-choice reading-comprehension questions.

Estimators turn probability distributions and judge verdicts into relative
difficulty scores; the scheduler runs zero-shot absolute and comparative
experiments against a remote or simulated judge; ranking evaluates against
gold difficulty with Spearman's correlation; the rasch module simulates and
fits cohorts for desk-scale gold scores.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .corpus import (
    AnswerDistribution,
    Corpus,
    LevelDistribution,
    Question,
    attach_probs,
    human_difficulty_signal,
    load_corpus,
    save_corpus,
    split_by_grade,
)
from .errors import JudgeBackendError, QdrankError
from .estimators import (
    DifficultyEstimate,
    absolute_aggregate,
    combine,
    ensemble_mean,
    level_map,
    rc_complement,
    win_count,
)
from .judge import (
    JudgeConfig,
    RemoteJudge,
    SimJudgeParams,
    SimulatedJudge,
    Verdict,
    parse_absolute,
    parse_comparative,
    remote_complete,
    render_absolute_prompt,
    render_comparative_prompt,
    sim_absolute,
    sim_compare,
)
from .ranking import CorrelationResult, RankVector, correlation_curve, draw_stats, spearman, to_ranks
from .rasch import (
    CMCQRD_SHAPE,
    GradeSpec,
    RaschParams,
    ResponseMatrix,
    cohort_invariance_report,
    fit_difficulty,
    make_synthetic_corpus,
    simulate_cohort,
)
from .scheduler import (
    BiasReport,
    ComparisonRecord,
    RunConfig,
    measure_position_bias,
    run_absolute,
    run_comparative,
    sample_opponents,
)

__all__ = [
    "AnswerDistribution",
    "BiasReport",
    "CMCQRD_SHAPE",
    "ComparisonRecord",
    "CorrelationResult",
    "Corpus",
    "DifficultyEstimate",
    "GradeSpec",
    "JudgeBackendError",
    "JudgeConfig",
    "LevelDistribution",
    "QdrankError",
    "Question",
    "RankVector",
    "RaschParams",
    "RemoteJudge",
    "ResponseMatrix",
    "RunConfig",
    "SimJudgeParams",
    "SimulatedJudge",
    "Verdict",
    "absolute_aggregate",
    "attach_probs",
    "cohort_invariance_report",
    "combine",
    "correlation_curve",
    "draw_stats",
    "ensemble_mean",
    "fit_difficulty",
    "human_difficulty_signal",
    "level_map",
    "load_corpus",
    "make_synthetic_corpus",
    "measure_position_bias",
    "parse_absolute",
    "parse_comparative",
    "rc_complement",
    "remote_complete",
    "render_absolute_prompt",
    "render_comparative_prompt",
    "run_absolute",
    "run_comparative",
    "sample_opponents",
    "save_corpus",
    "sim_absolute",
    "sim_compare",
    "simulate_cohort",
    "spearman",
    "split_by_grade",
    "to_ranks",
    "win_count",
]
