"""Difficulty judges: prompt rendering, reply parsing, a remote
chat-completion backend, and a statistically controlled simulator.

The two prompt templates live as frozen text assets under ``templates/``;
rendering only substitutes the question fields, so the surrounding bytes
never drift. Parsing is deliberately lenient (first valid token) because
real model replies wrap the answer in prose.

The simulated judge draws every verdict from a stream derived from
(seed, target id, opponent id, draw index, order flag), so identical
configurations reproduce identical verdicts under any execution order or
parallelism.
"""

from __future__ import annotations

import math
import os
import re
import time
from dataclasses import dataclass
from importlib import resources

import requests

from ._streams import CallStream
from .corpus import Corpus, Question
from .errors import JudgeBackendError, QdrankError

OPTION_LABELS = ("A", "B", "C", "D")

API_KEY_ENV = "QDRANK_API_KEY"


class TooManyOptionsError(QdrankError):
    """The prompt templates enumerate options A-D only."""


class UnparseableReplyError(QdrankError):
    pass


class JudgeConfigError(QdrankError):
    pass


class AuthError(JudgeBackendError):
    pass


class NetworkError(JudgeBackendError):
    pass


class MalformedResponseError(JudgeBackendError):
    pass


def _load_template(name: str) -> str:
    return (resources.files("qdrank") / "templates" / name).read_text(encoding="utf-8")


ABSOLUTE_TEMPLATE = _load_template("absolute_v1.txt")
COMPARATIVE_TEMPLATE = _load_template("comparative_v1.txt")

# "10" must win over "1" at the same position, hence the alternation order.
_ABS_TOKEN = re.compile(r"(?<!\d)(10|[1-9])(?!\d)")
_CMP_TOKEN = re.compile(r"(?<!\d)([12])(?!\d)")


@dataclass(frozen=True)
class JudgeConfig:
    """Backend selection and remote-call policy.

    ``temperature`` defaults to 1.0: repeated sampling of the same prompt
    must produce distinct replies.
    """

    backend: str
    base_url: str = ""
    model: str = ""
    temperature: float = 1.0
    max_output_tokens: int = 16
    max_retries: int = 3
    parallelism: int = 1
    timeout: float = 60.0
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.backend not in ("remote", "simulated"):
            raise JudgeConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "remote" and (not self.base_url or not self.model):
            raise JudgeConfigError("remote backend requires base_url and model")
        if self.temperature < 0:
            raise JudgeConfigError("temperature must be >= 0")
        if self.max_retries < 0:
            raise JudgeConfigError("max_retries must be >= 0")
        if self.parallelism < 1:
            raise JudgeConfigError("parallelism must be >= 1")


@dataclass(frozen=True)
class SimJudgeParams:
    """Knobs of the simulated judge.

    ``beta`` is the discrimination of the pairwise comparison (how sharply
    the win probability tracks the latent difficulty gap), ``epsilon`` the
    probability of blindly picking the first position, ``sigma_abs`` the
    noise on absolute scores, and [scale_lo, scale_hi] the latent range
    mapped onto the 1-10 scale.
    """

    beta: float
    epsilon: float = 0.0
    sigma_abs: float = 0.0
    scale_lo: float = -3.0
    scale_hi: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.beta <= 0:
            raise JudgeConfigError("beta must be > 0")
        if not 0.0 <= self.epsilon <= 1.0:
            raise JudgeConfigError("epsilon must be in [0, 1]")
        if self.sigma_abs < 0:
            raise JudgeConfigError("sigma_abs must be >= 0")
        if not self.scale_lo < self.scale_hi:
            raise JudgeConfigError("scale_lo must be < scale_hi")


@dataclass(frozen=True)
class Verdict:
    """Outcome of one pairwise judgment; ``raw`` keeps the reply for audit."""

    value: str  # "first" | "second" | "unparsed"
    raw: str


def _options_block(q: Question) -> str:
    if len(q.options) > len(OPTION_LABELS):
        raise TooManyOptionsError(
            f"{q.id}: {len(q.options)} options, template supports at most {len(OPTION_LABELS)}"
        )
    return "\n".join(f"{label}) {text}" for label, text in zip(OPTION_LABELS, q.options))


def render_absolute_prompt(q: Question) -> str:
    """Instantiate the frozen absolute-scoring template for one question."""
    return ABSOLUTE_TEMPLATE.format(
        context=q.context, question=q.question, options=_options_block(q)
    )


def render_comparative_prompt(q1: Question, q2: Question) -> str:
    """Instantiate the frozen pairwise template; q1 fills block "1:",
    q2 fills block "2:"."""
    return COMPARATIVE_TEMPLATE.format(
        context_1=q1.context,
        question_1=q1.question,
        options_1=_options_block(q1),
        context_2=q2.context,
        question_2=q2.question,
        options_2=_options_block(q2),
    )


def parse_absolute(reply: str) -> int:
    """First integer token in [1, 10], scanning left to right."""
    match = _ABS_TOKEN.search(reply)
    if match is None:
        raise UnparseableReplyError(f"no score in {reply!r}")
    return int(match.group(1))


def parse_comparative(reply: str) -> Verdict:
    """First standalone "1" or "2" decides; anything else is unparsed.

    Total over all strings: never raises.
    """
    match = _CMP_TOKEN.search(reply)
    if match is None:
        return Verdict(value="unparsed", raw=reply)
    return Verdict(value="first" if match.group(1) == "1" else "second", raw=reply)


def remote_complete(cfg: JudgeConfig, prompt: str, *, sleep=time.sleep) -> str:
    """One sampled completion from a chat-completion endpoint.

    Transient failures (connection errors, timeouts, 429, 5xx) are retried
    up to ``cfg.max_retries`` with exponential backoff; auth failures and
    malformed replies are not.
    """
    if cfg.backend != "remote":
        raise JudgeConfigError("remote_complete requires the remote backend")
    api_key = os.environ.get(API_KEY_ENV)
    if not api_key:
        raise AuthError(f"{API_KEY_ENV} is not set")
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    body = {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    }
    headers = {"Authorization": f"Bearer {api_key}"}
    last_error: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        try:
            response = requests.post(url, json=body, headers=headers, timeout=cfg.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_error = exc
            if attempt < cfg.max_retries:
                sleep(cfg.backoff_base * 2**attempt)
            continue
        if response.status_code in (401, 403):
            raise AuthError(f"HTTP {response.status_code} from {url}")
        if response.status_code == 429 or response.status_code >= 500:
            last_error = NetworkError(f"HTTP {response.status_code} from {url}")
            if attempt < cfg.max_retries:
                sleep(cfg.backoff_base * 2**attempt)
            continue
        if response.status_code != 200:
            raise MalformedResponseError(f"HTTP {response.status_code} from {url}")
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"cannot read completion text: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponseError("completion text is not a string")
        return content
    raise NetworkError(
        f"giving up after {cfg.max_retries + 1} attempts: {last_error}"
    ) from last_error


def _logistic(x: float) -> float:
    if x >= 50.0:
        return 1.0
    if x <= -50.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))


def sim_absolute(latent_z: float, params: SimJudgeParams, stream) -> int:
    """Simulated 1-10 absolute score for a latent difficulty.

    Affine map of [scale_lo, scale_hi] onto [1, 10], Gaussian noise of
    ``sigma_abs``, round half-up, clamp.
    """
    span = params.scale_hi - params.scale_lo
    score = 1.0 + 9.0 * (latent_z - params.scale_lo) / span
    if params.sigma_abs > 0.0:
        score += params.sigma_abs * stream.normal()
    return min(10, max(1, math.floor(score + 0.5)))


def sim_compare(z_first: float, z_second: float, params: SimJudgeParams, stream) -> Verdict:
    """Simulated pairwise verdict; never unparsed.

    With probability ``epsilon`` the first position wins outright; otherwise
    the first wins with probability logistic(beta * (z_first - z_second)).
    """
    p_first = params.epsilon + (1.0 - params.epsilon) * _logistic(
        params.beta * (z_first - z_second)
    )
    if stream.random() < p_first:
        return Verdict(value="first", raw="1")
    return Verdict(value="second", raw="2")


class SimulatedJudge:
    """Judge backed by latent difficulties instead of a model.

    Latents come from the questions' gold difficulties; every call derives
    its own random stream from the judge seed plus the caller's labels.
    """

    def __init__(self, params: SimJudgeParams, latents: dict[str, float], parallelism: int = 1):
        self.params = params
        self.latents = dict(latents)
        self.parallelism = parallelism
        self.resample_retries = 0  # simulated replies always parse

    @classmethod
    def from_corpus(cls, params: SimJudgeParams, corpus: Corpus, parallelism: int = 1):
        latents = {}
        for q in corpus:
            if q.gold_difficulty is None:
                raise JudgeConfigError(
                    f"simulated judge needs gold_difficulty for every question; {q.id!r} has none"
                )
            latents[q.id] = q.gold_difficulty
        return cls(params, latents, parallelism=parallelism)

    def compare(self, first: Question, second: Question, labels: tuple) -> Verdict:
        stream = CallStream(self.params.seed, ("cmp",) + labels)
        return sim_compare(self.latents[first.id], self.latents[second.id], self.params, stream)

    def score(self, question: Question, labels: tuple) -> tuple[int | None, str]:
        stream = CallStream(self.params.seed, ("abs",) + labels)
        value = sim_absolute(self.latents[question.id], self.params, stream)
        return value, str(value)


class RemoteJudge:
    """Judge backed by a chat-completion endpoint."""

    def __init__(self, cfg: JudgeConfig):
        if cfg.backend != "remote":
            raise JudgeConfigError("RemoteJudge requires a remote JudgeConfig")
        self.cfg = cfg
        self.parallelism = cfg.parallelism
        self.resample_retries = cfg.max_retries

    def compare(self, first: Question, second: Question, labels: tuple) -> Verdict:
        reply = remote_complete(self.cfg, render_comparative_prompt(first, second))
        return parse_comparative(reply)

    def score(self, question: Question, labels: tuple) -> tuple[int | None, str]:
        reply = remote_complete(self.cfg, render_absolute_prompt(question))
        try:
            return parse_absolute(reply), reply
        except UnparseableReplyError:
            return None, reply
