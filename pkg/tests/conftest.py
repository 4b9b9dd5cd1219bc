import json

import httpx
import numpy as np
import pytest

from pac_reasoning.core import CalibrationRecord


def make_records(u, losses=None, *, expert_tokens=100, cheap_tokens=40, score_kind="logits"):
    """Calibration records with ids r0, r1, ...; losses given means the expert side is filled in."""
    out = []
    for i, ui in enumerate(u):
        kw = {}
        if losses is not None:
            kw = {"expert_answer": f"e{i}", "loss": float(losses[i])}
        out.append(
            CalibrationRecord(
                id=f"r{i}",
                uncertainty=float(ui),
                cheap_answer=f"c{i}",
                cheap_tokens=cheap_tokens,
                expert_tokens=expert_tokens,
                gold_answer=f"e{i}",
                score_kind=score_kind,
                prompt=f"question {i}",
                **kw,
            )
        )
    return out


@pytest.fixture
def synthetic_set():
    rng = np.random.default_rng(7)
    u = rng.beta(2, 5, 400)
    losses = (rng.random(400) < 0.6 * u).astype(float)
    return u, losses


class FakeOpenAI:
    """Minimal chat-completions / embeddings server for httpx.MockTransport.

    ``replies`` maps a substring of the last user message to a reply text;
    ``failures`` is a list of status codes returned before succeeding.
    """

    def __init__(self, replies=None, *, logprobs=(-0.2231, -0.2231), failures=(), completion_tokens=7):
        self.replies = replies or {}
        self.logprobs = list(logprobs)
        self.failures = list(failures)
        self.completion_tokens = completion_tokens
        self.requests = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        self.requests.append((request.url.path, body))
        if self.failures:
            return httpx.Response(self.failures.pop(0), text="try later")
        if request.url.path.endswith("/embeddings"):
            text = body["input"]
            vec = [float(len(text)), 1.0, float(sum(map(ord, text)) % 7)]
            return httpx.Response(200, json={"data": [{"embedding": vec}]})
        last = body["messages"][-1]["content"]
        text = next((v for k, v in self.replies.items() if k in last), "42")
        choice = {"message": {"role": "assistant", "content": text}}
        if body.get("logprobs"):
            choice["logprobs"] = {"content": [{"token": "t", "logprob": lp} for lp in self.logprobs]}
        usage = {"completion_tokens": self.completion_tokens} if self.completion_tokens is not None else None
        return httpx.Response(200, json={"choices": [choice], "usage": usage})


@pytest.fixture
def fake_openai():
    return FakeOpenAI



# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[str, str] = {}


def record_acceptance(criterion: str, passed: bool | None, detail: str) -> None:
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    ACCEPTANCE_LINES[criterion] = f"[{status}] criterion {criterion}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split(".")[0]), k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
