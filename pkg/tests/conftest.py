from __future__ import annotations

import json

import numpy as np
import pytest

from qdrank import Corpus, Question


def build_latent_corpus(
    n: int, seed: int = 0, spread: str = "normal", equal_value: float | None = None
) -> Corpus:
    """Corpus of n placeholder questions whose gold difficulties act as the
    simulated judge's latents.

    spread="grid" gives distinct latents with a guaranteed minimum gap
    (shuffled linspace over [-3, 3]); "normal" draws N(0, 1).
    """
    rng = np.random.default_rng(seed)
    if equal_value is not None:
        latents = np.full(n, equal_value)
    elif spread == "grid":
        latents = rng.permutation(np.linspace(-3.0, 3.0, n))
    else:
        latents = rng.standard_normal(n)
    questions = tuple(
        Question(
            id=f"q{i:04d}",
            context=f"Context passage {i}.",
            question=f"Question stem {i}?",
            options=(f"alpha {i}", f"bravo {i}", f"charlie {i}", f"delta {i}"),
            correct_index=i % 4,
            gold_difficulty=float(latents[i]),
        )
        for i in range(n)
    )
    return Corpus(questions=questions, name=f"latent-{n}")


def gold_pairs(corpus: Corpus) -> list[tuple[str, float]]:
    return [(q.id, q.gold_difficulty) for q in corpus]


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


@pytest.fixture
def fixture_question() -> Question:
    return Question(
        id="fx-1",
        context="The tide pools along the northern coast hold a surprising range of life.",
        question="What does the passage say about tide pools?",
        options=(
            "They are empty at low tide",
            "They support many organisms",
            "They occur only in the south",
            "They are man-made structures",
        ),
        correct_index=1,
        grade="B2",
        gold_difficulty=0.4,
    )


@pytest.fixture
def small_records():
    return [
        {
            "id": "a1",
            "context": "First context.",
            "question": "First question?",
            "options": ["w", "x", "y", "z"],
            "correct_index": 2,
            "grade": "B1",
            "gold_difficulty": -0.5,
            "human_dist": [0.1, 0.2, 0.6, 0.1],
        },
        {
            "id": "a2",
            "context": "Second context.",
            "question": "Second question?",
            "options": ["p", "q", "r", "s"],
            "correct_index": 0,
            "grade": "B1",
            "gold_difficulty": 0.1,
        },
        {
            "id": "a3",
            "context": "Third context.",
            "question": "Third question?",
            "options": ["j", "k"],
            "correct_index": 1,
            "grade": "C2",
            "gold_difficulty": 1.2,
            "human_dist": [0.55, 0.45],
        },
    ]
