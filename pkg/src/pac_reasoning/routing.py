"""Apply a calibrated threshold to test items."""

from __future__ import annotations

import threading
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .calibration import ThresholdPolicy
from .core import CalibrationRecord, RoutingDecision
from .exceptions import PolicyMismatchError

ExpertFn = Callable[[str], "tuple[str, int]"]


@dataclass(frozen=True)
class TestItem:
    __test__ = False  # not a pytest class

    id: str
    prompt: str
    cheap_answer: str
    uncertainty: float
    cheap_tokens: int
    score_kind: str | None = None

    @classmethod
    def from_record(cls, rec: CalibrationRecord, prompt: str = "") -> TestItem:
        return cls(rec.id, prompt, rec.cheap_answer, rec.uncertainty, rec.cheap_tokens, rec.score_kind)


class CachedExpert:
    """Memoizes expert answers by item id so nothing is billed twice.

    Concurrent requests for the same id wait on one underlying call.
    """

    def __init__(self, expert: ExpertFn, seed: dict[str, tuple[str, int]] | None = None):
        self._expert = expert
        self._answers: dict[str, tuple[str, int]] = dict(seed or {})
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self.calls = 0

    def __call__(self, item_id: str) -> tuple[str, int]:
        if item_id in self._answers:
            return self._answers[item_id]
        with self._guard:
            lock = self._locks.setdefault(item_id, threading.Lock())
        with lock:
            if item_id not in self._answers:
                answer = self._expert(item_id)
                with self._guard:
                    self.calls += 1
                self._answers[item_id] = answer
        return self._answers[item_id]

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._answers

    @property
    def answers(self) -> dict[str, tuple[str, int]]:
        return dict(self._answers)


@dataclass
class RoutingResult:
    decisions: list[RoutingDecision]
    failures: list[str] = field(default_factory=list)
    expert_tokens: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def check_score_kind(policy: ThresholdPolicy, items: Sequence[TestItem]) -> None:
    """Refuse to route scores of a different family than the policy was calibrated on."""
    if policy.score_kind is None:
        return
    kinds = {it.score_kind for it in items if it.score_kind is not None}
    bad = kinds - {policy.score_kind}
    if bad:
        raise PolicyMismatchError(
            f"policy was calibrated on {policy.score_kind!r} scores but items carry {sorted(bad)}"
        )


def route(
    items: Sequence[TestItem],
    policy: ThresholdPolicy,
    expert: ExpertFn,
    *,
    max_parallel: int = 1,
) -> RoutingResult:
    """Route each item: expert answer when ``uncertainty >= threshold``, else the cheap answer.

    A failed expert call marks that decision failed; it never falls back to
    the cheap answer. Output order matches input order.
    """
    check_score_kind(policy, items)
    thr = policy.threshold
    hot = [it for it in items if it.uncertainty >= thr]

    outcomes: dict[str, tuple[str, int] | Exception] = {}

    def call(item_id: str):
        try:
            return expert(item_id)
        except Exception as exc:
            return exc

    if max_parallel > 1 and len(hot) > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            for it, res in zip(hot, pool.map(call, [it.id for it in hot])):
                outcomes[it.id] = res
    else:
        for it in hot:
            outcomes[it.id] = call(it.id)

    decisions: list[RoutingDecision] = []
    failures: list[str] = []
    tokens: dict[str, int] = {}
    for it in items:
        if it.uncertainty < thr:
            decisions.append(RoutingDecision(it.id, False, it.cheap_answer, it.uncertainty, thr))
            continue
        res = outcomes[it.id]
        if isinstance(res, Exception):
            failures.append(it.id)
            decisions.append(
                RoutingDecision(it.id, True, None, it.uncertainty, thr, failed=True, error=str(res))
            )
        else:
            text, n_tok = res
            tokens[it.id] = int(n_tok)
            decisions.append(RoutingDecision(it.id, True, text, it.uncertainty, thr))
    return RoutingResult(decisions, failures, tokens)
