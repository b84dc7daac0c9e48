"""Question corpora: JSONL ingestion, validation, slicing, and the
human-response difficulty signal.

A corpus is immutable after load; every operation that "modifies" questions
(such as attaching probability vectors) returns a new ``Corpus``.

JSONL schema, one question per line:
``id``, ``context``, ``question``, ``options`` (array), ``correct_index``
(0-based), optional ``grade``, ``gold_difficulty``, ``human_dist`` (array).
Probability files carry ``id``, ``kind`` ("level" | "answer"), ``probs``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import QdrankError

GRADES = ("B1", "B2", "C1", "C2", "easy", "medium", "hard")

_SUM_TOL = 1e-6


class CorpusIOError(QdrankError):
    """File missing or unreadable."""


class SchemaError(QdrankError):
    """A record failed validation; carries the 1-based line number."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        suffix = f" (field: {field})" if field else ""
        super().__init__(f"{prefix}{message}{suffix}")


class DuplicateIdError(SchemaError):
    pass


class UnknownIdError(QdrankError):
    pass


class MalformedVectorError(QdrankError):
    pass


class MissingGradeError(QdrankError):
    pass


class NoHumanDistError(QdrankError):
    pass


def _check_probs(probs: Iterable[float], what: str) -> tuple[float, ...]:
    vec = tuple(float(p) for p in probs)
    if any(not math.isfinite(p) or p < 0 for p in vec):
        raise MalformedVectorError(f"{what}: entries must be finite and >= 0, got {vec}")
    total = sum(vec)
    if abs(total - 1.0) > _SUM_TOL:
        raise MalformedVectorError(f"{what}: entries sum to {total}, expected 1 within {_SUM_TOL}")
    return vec


def _renormalize(vec: tuple[float, ...]) -> tuple[float, ...]:
    total = sum(vec)
    return tuple(p / total for p in vec)


@dataclass(frozen=True)
class AnswerDistribution:
    """Probability over a question's options (human test takers or an
    answer-selection system)."""

    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", _check_probs(self.probs, "answer distribution"))

    @classmethod
    def from_raw(cls, probs: Iterable[float]) -> AnswerDistribution:
        """Validate, then renormalize away float round-trip noise."""
        checked = _check_probs(probs, "answer distribution")
        return cls(_renormalize(checked))


@dataclass(frozen=True)
class LevelDistribution:
    """Probability over the easy/medium/hard levels."""

    p_easy: float
    p_medium: float
    p_hard: float

    def __post_init__(self):
        _check_probs((self.p_easy, self.p_medium, self.p_hard), "level distribution")

    @classmethod
    def from_raw(cls, probs: Iterable[float]) -> LevelDistribution:
        vec = tuple(float(p) for p in probs)
        if len(vec) != 3:
            raise MalformedVectorError(f"level distribution needs 3 entries, got {len(vec)}")
        checked = _renormalize(_check_probs(vec, "level distribution"))
        return cls(*checked)


@dataclass(frozen=True)
class Question:
    """One multiple-choice item: context passage, question stem, ordered
    options, and the correct option's index.

    ``grade``, ``gold_difficulty``, and ``human_dist`` are optional; loading
    keeps questions with missing optional fields and each operation excludes
    what it cannot use. ``level_dist`` / ``answer_dist`` are populated by
    ``attach_probs``.
    """

    id: str
    context: str
    question: str
    options: tuple[str, ...]
    correct_index: int
    grade: str | None = None
    gold_difficulty: float | None = None
    human_dist: AnswerDistribution | None = None
    level_dist: LevelDistribution | None = None
    answer_dist: AnswerDistribution | None = None

    def __post_init__(self):
        if not self.id:
            raise SchemaError("id must be non-empty", field="id")
        object.__setattr__(self, "options", tuple(self.options))
        if len(self.options) < 2:
            raise SchemaError(f"{self.id}: need at least 2 options", field="options")
        if any(not opt for opt in self.options):
            raise SchemaError(f"{self.id}: option texts must be non-empty", field="options")
        if not 0 <= self.correct_index < len(self.options):
            raise SchemaError(
                f"{self.id}: correct_index {self.correct_index} out of range for "
                f"{len(self.options)} options",
                field="correct_index",
            )
        if self.grade is not None and self.grade not in GRADES:
            raise SchemaError(f"{self.id}: unknown grade {self.grade!r}", field="grade")
        if self.gold_difficulty is not None and not math.isfinite(self.gold_difficulty):
            raise SchemaError(f"{self.id}: gold_difficulty must be finite", field="gold_difficulty")
        if self.human_dist is not None and len(self.human_dist.probs) != len(self.options):
            raise SchemaError(
                f"{self.id}: human_dist length {len(self.human_dist.probs)} != "
                f"{len(self.options)} options",
                field="human_dist",
            )


@dataclass(frozen=True)
class Corpus:
    """Ordered, id-unique collection of questions."""

    questions: tuple[Question, ...]
    name: str = "corpus"

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        if not self.questions:
            raise SchemaError("corpus must be non-empty")
        seen: set[str] = set()
        for q in self.questions:
            if q.id in seen:
                raise DuplicateIdError(f"duplicate question id {q.id!r}")
            seen.add(q.id)

    def __len__(self) -> int:
        return len(self.questions)

    def __iter__(self):
        return iter(self.questions)

    def by_id(self, question_id: str) -> Question:
        for q in self.questions:
            if q.id == question_id:
                return q
        raise UnknownIdError(f"no question with id {question_id!r}")

    def ids(self) -> list[str]:
        return [q.id for q in self.questions]


def _question_from_record(rec: dict, line: int) -> Question:
    required = ("id", "context", "question", "options", "correct_index")
    for field in required:
        if field not in rec:
            raise SchemaError("missing required field", line=line, field=field)
    human = rec.get("human_dist")
    try:
        human_dist = AnswerDistribution.from_raw(human) if human is not None else None
        gold = rec.get("gold_difficulty")
        return Question(
            id=str(rec["id"]),
            context=str(rec["context"]),
            question=str(rec["question"]),
            options=tuple(str(o) for o in rec["options"]),
            correct_index=int(rec["correct_index"]),
            grade=rec.get("grade"),
            gold_difficulty=float(gold) if gold is not None else None,
            human_dist=human_dist,
        )
    except SchemaError as exc:
        raise SchemaError(str(exc), line=line, field=exc.field) from exc
    except (MalformedVectorError, TypeError, ValueError) as exc:
        raise SchemaError(str(exc), line=line) from exc


def load_corpus(path: str | Path, format: str = "jsonl") -> Corpus:
    """Load and validate a JSONL corpus; rejects bad records with their
    line numbers."""
    if format != "jsonl":
        raise CorpusIOError(f"unsupported format {format!r}")
    path = Path(path)
    if not path.is_file():
        raise CorpusIOError(f"no such file: {path}")
    questions: list[Question] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line=line_no) from exc
            if not isinstance(rec, dict):
                raise SchemaError("record must be a JSON object", line=line_no)
            q = _question_from_record(rec, line_no)
            if q.id in seen:
                raise DuplicateIdError(f"duplicate question id {q.id!r}", line=line_no, field="id")
            seen.add(q.id)
            questions.append(q)
    if not questions:
        raise SchemaError(f"{path}: corpus file contains no records")
    return Corpus(questions=tuple(questions), name=path.stem)


def question_to_record(q: Question) -> dict:
    rec: dict = {
        "id": q.id,
        "context": q.context,
        "question": q.question,
        "options": list(q.options),
        "correct_index": q.correct_index,
    }
    if q.grade is not None:
        rec["grade"] = q.grade
    if q.gold_difficulty is not None:
        rec["gold_difficulty"] = q.gold_difficulty
    if q.human_dist is not None:
        rec["human_dist"] = list(q.human_dist.probs)
    return rec


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to JSONL; load(save(c)) round-trips all fields."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for q in corpus.questions:
            fh.write(json.dumps(question_to_record(q), ensure_ascii=False))
            fh.write("\n")


def attach_probs(corpus: Corpus, probs_path: str | Path, kind: str) -> Corpus:
    """Attach per-question probability vectors from a JSONL file.

    ``kind`` selects the target slot: "level" expects 3-vectors, "answer"
    expects one entry per option. Unreferenced questions pass through
    unchanged; every record must match an existing question id, and an id
    may be assigned at most once.
    """
    if kind not in ("level", "answer"):
        raise MalformedVectorError(f"kind must be 'level' or 'answer', got {kind!r}")
    probs_path = Path(probs_path)
    if not probs_path.is_file():
        raise CorpusIOError(f"no such file: {probs_path}")
    by_id = {q.id: q for q in corpus.questions}
    assigned: dict[str, object] = {}
    with probs_path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line=line_no) from exc
            qid = rec.get("id")
            if qid not in by_id:
                raise UnknownIdError(f"line {line_no}: id {qid!r} not in corpus")
            if rec.get("kind") != kind:
                raise SchemaError(
                    f"record kind {rec.get('kind')!r} does not match requested {kind!r}",
                    line=line_no,
                    field="kind",
                )
            if qid in assigned:
                raise DuplicateIdError(f"id {qid!r} assigned twice", line=line_no, field="id")
            probs = rec.get("probs")
            if probs is None:
                raise SchemaError("missing probs", line=line_no, field="probs")
            question = by_id[qid]
            if kind == "level":
                assigned[qid] = LevelDistribution.from_raw(probs)
            else:
                if len(probs) != len(question.options):
                    raise MalformedVectorError(
                        f"line {line_no}: {qid}: vector length {len(probs)} != "
                        f"{len(question.options)} options"
                    )
                assigned[qid] = AnswerDistribution.from_raw(probs)
    field = "level_dist" if kind == "level" else "answer_dist"
    updated = tuple(
        dataclasses.replace(q, **{field: assigned[q.id]}) if q.id in assigned else q
        for q in corpus.questions
    )
    return Corpus(questions=updated, name=corpus.name)


def split_by_grade(corpus: Corpus) -> dict[str, Corpus]:
    """Partition into per-grade corpora, preserving question order."""
    buckets: dict[str, list[Question]] = {}
    for q in corpus.questions:
        if q.grade is None:
            raise MissingGradeError(f"question {q.id!r} has no grade")
        buckets.setdefault(q.grade, []).append(q)
    return {
        grade: Corpus(questions=tuple(qs), name=f"{corpus.name}:{grade}")
        for grade, qs in buckets.items()
    }


def human_difficulty_signal(corpus: Corpus) -> list[tuple[str, float]]:
    """Difficulty proxy from human answer distributions.

    Score is 1 minus the probability mass on the correct option, so larger
    means harder. Requires every question to carry ``human_dist``.
    """
    out: list[tuple[str, float]] = []
    for q in corpus.questions:
        if q.human_dist is None:
            raise NoHumanDistError(f"question {q.id!r} has no human answer distribution")
        out.append((q.id, 1.0 - q.human_dist.probs[q.correct_index]))
    return out
