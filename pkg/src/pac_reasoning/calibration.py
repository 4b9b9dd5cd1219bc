"""Threshold selection from a UCB curve, inductive and transductive."""

from __future__ import annotations

import json
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .core import CalibrationRecord, RiskBudget
from .exceptions import ConfigError, PartialResultError
from .ucb import (
    BOUND_KINDS,
    SamplingPlan,
    UcbCurve,
    WeightedLossSamples,
    build_curve,
    calibration_grid,
    draw_samples,
)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Calibrated threshold plus what is needed to reproduce it.

    Items with uncertainty ``>= threshold`` go to the expert. An infeasible
    calibration is stored as ``threshold = 0`` so that every item does.
    """

    threshold: float
    feasible: bool
    bound_kind: str
    alpha: float
    epsilon: float
    m: int
    seed: int
    curve_digest: str
    score_kind: str | None = None
    n_cal: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0 or math.isnan(self.threshold):
            raise ConfigError(f"policy threshold {self.threshold} outside [0, 1]")
        if not self.feasible and self.threshold != 0.0:
            raise ConfigError("an infeasible policy must carry threshold 0")
        if self.bound_kind not in BOUND_KINDS:
            raise ConfigError(f"unknown bound kind {self.bound_kind!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ThresholdPolicy:
        try:
            return cls(
                threshold=float(d["threshold"]),
                feasible=bool(d["feasible"]),
                bound_kind=str(d["bound_kind"]),
                alpha=float(d["alpha"]),
                epsilon=float(d["epsilon"]),
                m=int(d["m"]),
                seed=int(d["seed"]),
                curve_digest=str(d["curve_digest"]),
                score_kind=d.get("score_kind"),
                n_cal=d.get("n_cal"),
            )
        except KeyError as exc:
            raise ConfigError(f"policy is missing field {exc.args[0]!r}") from None

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> ThresholdPolicy:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def select_threshold(
    curve: UcbCurve,
    budget: RiskBudget,
    *,
    m: int = 0,
    seed: int = 0,
    score_kind: str | None = None,
    n_cal: int | None = None,
) -> ThresholdPolicy:
    """Largest grid point whose bound is ``<= epsilon``.

    Scans the whole grid, since the bound itself need not be monotone.
    """
    ok = np.flatnonzero(curve.bounds <= budget.epsilon)
    feasible = ok.size > 0
    threshold = float(curve.grid[ok[-1]]) if feasible else 0.0
    return ThresholdPolicy(
        threshold=threshold,
        feasible=feasible,
        bound_kind=curve.bound_kind,
        alpha=budget.alpha,
        epsilon=budget.epsilon,
        m=int(m),
        seed=int(seed),
        curve_digest=curve.digest(),
        score_kind=score_kind,
        n_cal=n_cal,
    )


@dataclass
class CalibrationResult:
    policy: ThresholdPolicy
    curve: UcbCurve
    samples: WeightedLossSamples


def calibrate(
    items: Sequence[CalibrationRecord] | Sequence[float] | np.ndarray,
    loss_oracle,
    budget: RiskBudget,
    plan: SamplingPlan,
    bound_kind: str = "clt",
    *,
    score_kind: str | None = None,
) -> CalibrationResult:
    """Draw samples, build the UCB curve on the calibration grid and pick the threshold."""
    if len(items) and isinstance(items[0], CalibrationRecord):
        u = np.array([r.uncertainty for r in items], dtype=float)
    else:
        u = np.asarray(items, dtype=float)
    n = len(u)
    cap = budget.loss_upper if bound_kind == "hoeffding" else None
    samples = draw_samples(items, plan, loss_oracle, loss_cap=cap)
    curve = build_curve(
        samples,
        calibration_grid(u),
        budget.alpha,
        bound_kind,
        loss_cap=budget.loss_upper,
        min_weight=plan.min_weight(n),
    )
    policy = select_threshold(
        curve, budget, m=plan.sample_size, seed=plan.seed, score_kind=score_kind, n_cal=n
    )
    return CalibrationResult(policy, curve, samples)


def empirical_coverage_floor(alpha: float, n_test: int, slack: float, loss_range: float = 1.0) -> float:
    """Lower bound on ``P(empirical test risk <= epsilon + slack)``."""
    return 1.0 - alpha - math.exp(-2.0 * n_test * slack**2 / loss_range**2)


def empirical_bound_check(
    policy: ThresholdPolicy, test_risk: float, budget: RiskBudget, n_test: int, slack: float
) -> bool:
    """Whether a measured test risk lies within ``epsilon + slack``."""
    if slack <= 0:
        raise ValueError("slack must be positive")
    return test_risk <= budget.epsilon + slack


@dataclass
class TransductiveResult:
    labels: dict[str, str]
    policy: ThresholdPolicy
    curve: UcbCurve
    samples: WeightedLossSamples
    expert_ids: set[str] = field(default_factory=set)

    def __iter__(self):
        # allow ``labels, policy = transductive_label(...)``
        return iter((self.labels, self.policy))


def transductive_label(
    records: Sequence[CalibrationRecord],
    plan: SamplingPlan,
    budget: RiskBudget,
    bound_kind: str,
    expert: Callable[[str], str],
    loss_fn: Callable[[CalibrationRecord, str], float],
    *,
    max_parallel: int = 1,
) -> TransductiveResult:
    """Label a fixed dataset, calling the expert only where the budget demands it.

    ``expert(id)`` returns the reference answer and ``loss_fn(record,
    expert_answer)`` the loss of the record's cheap answer. Expert answers
    are fetched at most once per id across the sampling and labeling phases.
    """
    answers: dict[str, str] = {r.id: r.expert_answer for r in records if r.expert_answer is not None}
    by_id = {r.id: r for r in records}

    def ask(rid: str) -> str:
        if rid not in answers:
            answers[rid] = expert(rid)
        return answers[rid]

    def oracle(rid: str) -> float:
        rec = by_id[rid]
        if rec.loss is not None:
            return rec.loss
        return loss_fn(rec, ask(rid))

    result = calibrate(records, oracle, budget, plan, bound_kind)
    threshold = result.policy.threshold
    to_expert = [r.id for r in records if r.uncertainty >= threshold]
    pending = [rid for rid in to_expert if rid not in answers]

    failed: list[str] = []
    if max_parallel > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            futures = {rid: pool.submit(expert, rid) for rid in pending}
        for rid, fut in futures.items():
            try:
                answers[rid] = fut.result()
            except Exception:
                failed.append(rid)
    else:
        for rid in pending:
            try:
                answers[rid] = expert(rid)
            except Exception:
                failed.append(rid)

    failed_set = set(failed)
    labels: dict[str, str] = {}
    for r in records:
        if r.uncertainty >= threshold:
            if r.id not in failed_set:
                labels[r.id] = answers[r.id]
        else:
            labels[r.id] = r.cheap_answer
    out = TransductiveResult(labels, result.policy, result.curve, result.samples, set(answers))
    if failed:
        raise PartialResultError(
            f"{len(failed)} expert queries failed during final labeling", missing=failed, partial=out
        )
    return out
