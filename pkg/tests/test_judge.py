from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from qdrank import (
    Question,
    SimJudgeParams,
    parse_absolute,
    parse_comparative,
    remote_complete,
    render_absolute_prompt,
    render_comparative_prompt,
    sim_absolute,
    sim_compare,
)
from qdrank._streams import CallStream
from qdrank.judge import (
    ABSOLUTE_TEMPLATE,
    COMPARATIVE_TEMPLATE,
    AuthError,
    JudgeConfig,
    JudgeConfigError,
    MalformedResponseError,
    NetworkError,
    TooManyOptionsError,
    UnparseableReplyError,
)


# ---------------------------------------------------------------------------
# prompt rendering
# ---------------------------------------------------------------------------


def test_absolute_prompt_structure(fixture_question):
    prompt = render_absolute_prompt(fixture_question)
    q = fixture_question
    expected = (
        f"{q.context}\n\n{q.question}\n"
        f"A) {q.options[0]}\nB) {q.options[1]}\nC) {q.options[2]}\nD) {q.options[3]}\n\n"
        "Provide a score between 1 and 10 that measures the difficulty of the question. "
        "Return only a single score."
    )
    assert prompt == expected
    assert prompt.endswith("Return only a single score.")


def test_comparative_prompt_structure(fixture_question):
    q2 = Question(
        id="fx-2", context="Second passage.", question="Second stem?",
        options=("one", "two", "three", "four"), correct_index=0,
    )
    prompt = render_comparative_prompt(fixture_question, q2)
    assert prompt.startswith("1:\n\n")
    assert "\n\n\n2:\n\n" in prompt
    assert prompt.endswith("Which reading comprehension question is more difficult, 1 or 2? Return only 1 or 2.")
    assert prompt.index(fixture_question.context) < prompt.index(q2.context)


def test_prompts_contain_everything_verbatim(fixture_question):
    prompt = render_absolute_prompt(fixture_question)
    assert fixture_question.context in prompt
    assert fixture_question.question in prompt
    for opt in fixture_question.options:
        assert opt in prompt
    q2 = Question(
        id="fx-3", context="Another passage entirely.", question="Another stem?",
        options=("p1", "p2", "p3", "p4"), correct_index=2,
    )
    pairwise = render_comparative_prompt(fixture_question, q2)
    for text in (fixture_question.context, fixture_question.question, q2.context, q2.question,
                 *fixture_question.options, *q2.options):
        assert text in pairwise


def test_prompt_rendering_deterministic_and_order_sensitive(fixture_question):
    q2 = Question(
        id="fx-2", context="Second passage.", question="Second stem?",
        options=("one", "two", "three", "four"), correct_index=0,
    )
    assert render_absolute_prompt(fixture_question) == render_absolute_prompt(fixture_question)
    ab = render_comparative_prompt(fixture_question, q2)
    assert ab == render_comparative_prompt(fixture_question, q2)
    assert ab != render_comparative_prompt(q2, fixture_question)


def test_prompt_fewer_options_renders_present_labels_only():
    q = Question(id="two", context="c", question="q?", options=("yes", "no"), correct_index=0)
    prompt = render_absolute_prompt(q)
    assert "A) yes\nB) no\n" in prompt
    assert "C)" not in prompt


def test_prompt_too_many_options():
    q = Question(
        id="five", context="c", question="q?",
        options=("a", "b", "c", "d", "e"), correct_index=0,
    )
    with pytest.raises(TooManyOptionsError):
        render_absolute_prompt(q)


def test_templates_frozen_sentences():
    assert ABSOLUTE_TEMPLATE.endswith("Return only a single score.")
    assert COMPARATIVE_TEMPLATE.endswith("Return only 1 or 2.")


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def test_parse_absolute_examples():
    assert parse_absolute("7") == 7
    assert parse_absolute("Score: 10") == 10
    with pytest.raises(UnparseableReplyError):
        parse_absolute("hard to say")


def test_parse_absolute_exhaustive_embeddings():
    # every score 1..10 embedded in prose comes back out
    for score in range(1, 11):
        for template in ("{}", "Score: {}", "I'd say {} overall", "{}/10", "({})"):
            assert parse_absolute(template.format(score)) == score
    # "10" wins over its leading "1"
    assert parse_absolute("10") == 10
    # out-of-range tokens are skipped, later valid ones found
    assert parse_absolute("0 is wrong but 12 too; call it 9") == 9


def _safe_parse(text):
    try:
        return parse_absolute(text)
    except UnparseableReplyError:
        return None


def test_parse_absolute_rejects_out_of_range_only():
    for text in ("0", "11", "42", "zero", ""):
        assert _safe_parse(text) is None


def test_parse_comparative_examples():
    assert parse_comparative("2").value == "second"
    assert parse_comparative("Question 1 is more difficult").value == "first"
    assert parse_comparative("both equal").value == "unparsed"
    verdict = parse_comparative("no idea")
    assert verdict.raw == "no idea"


def test_parse_comparative_never_raises():
    rng = np.random.default_rng(6)
    for _ in range(500):
        length = int(rng.integers(0, 40))
        text = "".join(chr(int(c)) for c in rng.integers(32, 0x2FF, size=length))
        verdict = parse_comparative(text)
        assert verdict.value in ("first", "second", "unparsed")
    assert parse_comparative("").value == "unparsed"
    assert parse_comparative("12 or 21").value == "unparsed"


# ---------------------------------------------------------------------------
# simulated judge primitives
# ---------------------------------------------------------------------------


def _stream(seed=0, labels=("t",)):
    return CallStream(seed, labels)


def test_sim_absolute_endpoints_and_midpoint():
    params = SimJudgeParams(beta=1.0, sigma_abs=0.0, scale_lo=-3.0, scale_hi=3.0)
    assert sim_absolute(-3.0, params, _stream()) == 1
    assert sim_absolute(3.0, params, _stream()) == 10
    # midpoint maps to 5.5, which rounds half-up to 6
    assert sim_absolute(0.0, params, _stream()) == 6


def test_sim_absolute_monotone_without_noise():
    params = SimJudgeParams(beta=1.0, sigma_abs=0.0, scale_lo=-2.0, scale_hi=2.0)
    latents = np.linspace(-3.0, 3.0, 101)  # includes out-of-scale values
    scores = [sim_absolute(float(z), params, _stream()) for z in latents]
    assert all(b >= a for a, b in zip(scores, scores[1:]))
    assert min(scores) == 1 and max(scores) == 10


def test_sim_compare_pure_position_bias():
    params = SimJudgeParams(beta=1.0, epsilon=1.0, seed=1)
    for i in range(50):
        verdict = sim_compare(-5.0, 5.0, params, _stream(labels=("b", i)))
        assert verdict.value == "first"


def test_sim_compare_deterministic_limit():
    params = SimJudgeParams(beta=1e6, epsilon=0.0, seed=2)
    for i in range(50):
        assert sim_compare(1.0, 0.999, params, _stream(labels=("d", i))).value == "first"
        assert sim_compare(0.999, 1.0, params, _stream(labels=("e", i))).value == "second"


def test_sim_compare_mixture_rate_matches_analytic():
    # epsilon=0.2, equal latents: P(first) = 0.2 + 0.8*0.5 = 0.6
    params = SimJudgeParams(beta=1.0, epsilon=0.2, seed=3)
    wins = sum(
        sim_compare(0.0, 0.0, params, _stream(labels=("m", i))).value == "first"
        for i in range(10_000)
    )
    assert 0.58 <= wins / 10_000 <= 0.62


def test_sim_compare_antisymmetric_in_distribution():
    # same stream on swapped latents gives mirrored verdict probabilities;
    # check empirically over many independent streams
    params = SimJudgeParams(beta=0.8, epsilon=0.0, seed=4)
    n = 20_000
    first_ab = sum(
        sim_compare(0.7, -0.2, params, _stream(labels=("p", i))).value == "first"
        for i in range(n)
    )
    second_ba = sum(
        sim_compare(-0.2, 0.7, params, _stream(labels=("q", i))).value == "second"
        for i in range(n)
    )
    assert abs(first_ab / n - second_ba / n) < 0.015


def test_sim_params_validation():
    with pytest.raises(JudgeConfigError):
        SimJudgeParams(beta=0.0)
    with pytest.raises(JudgeConfigError):
        SimJudgeParams(beta=1.0, epsilon=1.5)
    with pytest.raises(JudgeConfigError):
        SimJudgeParams(beta=1.0, scale_lo=2.0, scale_hi=-2.0)


# ---------------------------------------------------------------------------
# remote judge against a stub endpoint
# ---------------------------------------------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    script: list = []  # (status, payload) per request, shared via class
    seen: list = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        type(self).seen.append({"path": self.path, "body": body, "auth": self.headers.get("Authorization")})
        status, payload = self.script.pop(0) if self.script else (200, {"choices": [{"message": {"content": "2"}}]})
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.script = []
    _StubHandler.seen = []
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def _cfg(base_url, **overrides):
    defaults = dict(
        backend="remote", base_url=base_url, model="stub-model",
        max_retries=3, timeout=2.0, backoff_base=0.0,
    )
    defaults.update(overrides)
    return JudgeConfig(**defaults)


def test_remote_complete_round_trip(stub_server, monkeypatch):
    monkeypatch.setenv("QDRANK_API_KEY", "sk-test")
    _StubHandler.script = [(200, {"choices": [{"message": {"content": "Question 1"}}]})]
    text = remote_complete(_cfg(stub_server), "which is harder?")
    assert text == "Question 1"
    call = _StubHandler.seen[0]
    assert call["path"] == "/chat/completions"
    assert call["auth"] == "Bearer sk-test"
    assert call["body"]["messages"] == [{"role": "user", "content": "which is harder?"}]
    assert call["body"]["model"] == "stub-model"


def test_remote_complete_auth_error_no_retry(stub_server, monkeypatch):
    monkeypatch.setenv("QDRANK_API_KEY", "sk-test")
    _StubHandler.script = [(401, {"error": "bad key"})]
    with pytest.raises(AuthError):
        remote_complete(_cfg(stub_server), "p")
    assert len(_StubHandler.seen) == 1


def test_remote_complete_missing_key(stub_server, monkeypatch):
    monkeypatch.delenv("QDRANK_API_KEY", raising=False)
    with pytest.raises(AuthError):
        remote_complete(_cfg(stub_server), "p")


def test_remote_complete_retries_transient_then_succeeds(stub_server, monkeypatch):
    monkeypatch.setenv("QDRANK_API_KEY", "sk-test")
    _StubHandler.script = [
        (500, {"error": "boom"}),
        (429, {"error": "slow down"}),
        (200, {"choices": [{"message": {"content": "9"}}]}),
    ]
    assert remote_complete(_cfg(stub_server), "p") == "9"
    assert len(_StubHandler.seen) == 3


def test_remote_complete_exhausts_retries(stub_server, monkeypatch):
    monkeypatch.setenv("QDRANK_API_KEY", "sk-test")
    _StubHandler.script = [(500, {})] * 4
    with pytest.raises(NetworkError):
        remote_complete(_cfg(stub_server), "p")
    assert len(_StubHandler.seen) == 4  # initial try + 3 retries


def test_remote_complete_timeouts_then_success(monkeypatch):
    monkeypatch.setenv("QDRANK_API_KEY", "sk-test")
    cfg = _cfg("http://example.invalid", max_retries=3)
    calls = {"n": 0}

    import requests

    def fake_post(url, json=None, headers=None, timeout=None):
        calls["n"] += 1
        if calls["n"] <= 2:
            raise requests.Timeout("simulated timeout")

        class Resp:
            status_code = 200

            def json(self):
                return {"choices": [{"message": {"content": "4"}}]}

        return Resp()

    monkeypatch.setattr(requests, "post", fake_post)
    assert remote_complete(cfg, "p") == "4"
    assert calls["n"] == 3


def test_remote_complete_malformed_response(stub_server, monkeypatch):
    monkeypatch.setenv("QDRANK_API_KEY", "sk-test")
    _StubHandler.script = [(200, {"unexpected": True})]
    with pytest.raises(MalformedResponseError):
        remote_complete(_cfg(stub_server), "p")


def test_judge_config_validation():
    with pytest.raises(JudgeConfigError):
        JudgeConfig(backend="remote")  # missing base_url/model
    with pytest.raises(JudgeConfigError):
        JudgeConfig(backend="nope")
