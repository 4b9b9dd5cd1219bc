"""Domain types, loss functions and the risk / efficiency metrics."""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .exceptions import (
    DegenerateDivisionError,
    IncompleteRecordError,
    InvalidBudgetError,
    InvalidEmbeddingError,
    ShapeError,
    UndefinedRiskError,
)


@dataclass(frozen=True)
class RiskBudget:
    """Error tolerance ``epsilon`` at confidence ``1 - alpha``.

    ``loss_lower`` and ``loss_upper`` bound the per-item loss; the defaults
    fit the binary loss.
    """

    epsilon: float
    alpha: float
    loss_lower: float = 0.0
    loss_upper: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise InvalidBudgetError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not 0 < self.alpha < 1:
            raise InvalidBudgetError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.loss_lower < self.loss_upper:
            raise InvalidBudgetError(
                f"loss_lower must be < loss_upper, got [{self.loss_lower}, {self.loss_upper}]"
            )

    @property
    def loss_range(self) -> float:
        return self.loss_upper - self.loss_lower


@dataclass(frozen=True)
class CalibrationRecord:
    """One prompt's cheap answer, its uncertainty and, once queried, the expert side."""

    id: str
    uncertainty: float
    cheap_answer: str
    cheap_tokens: int
    expert_answer: str | None = None
    gold_answer: str | None = None
    loss: float | None = None
    expert_tokens: int | None = None
    flags: tuple[str, ...] = ()
    score_kind: str | None = None
    prompt: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.uncertainty <= 1.0:
            raise ValueError(f"record {self.id}: uncertainty {self.uncertainty} outside [0, 1]")
        if (self.loss is None) != (self.expert_answer is None):
            raise ValueError(f"record {self.id}: loss must be present exactly when expert_answer is")
        if self.cheap_tokens < 0 or (self.expert_tokens is not None and self.expert_tokens < 0):
            raise ValueError(f"record {self.id}: token counts must be nonnegative")

    @property
    def queried(self) -> bool:
        return self.expert_answer is not None

    def check_loss_range(self, budget: RiskBudget) -> None:
        if self.loss is not None and not budget.loss_lower <= self.loss <= budget.loss_upper:
            raise ValueError(
                f"record {self.id}: loss {self.loss} outside "
                f"[{budget.loss_lower}, {budget.loss_upper}]"
            )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return {k: v for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CalibrationRecord:
        return cls(
            id=str(d["id"]),
            uncertainty=float(d["uncertainty"]),
            cheap_answer=d.get("cheap_answer", ""),
            cheap_tokens=int(d.get("cheap_tokens", 0)),
            expert_answer=d.get("expert_answer"),
            gold_answer=d.get("gold_answer", d.get("gold")),
            loss=None if d.get("loss") is None else float(d["loss"]),
            expert_tokens=None if d.get("expert_tokens") is None else int(d["expert_tokens"]),
            flags=tuple(d.get("flags", ())),
            score_kind=d.get("score_kind"),
            prompt=d.get("prompt"),
        )


@dataclass(frozen=True)
class RoutingDecision:
    id: str
    used_expert: bool
    final_answer: str | None
    uncertainty: float
    threshold: float
    failed: bool = False
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        if not self.failed:
            d.pop("error")
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RoutingDecision:
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class EfficiencyReport:
    ecp_percent: float
    stp_percent: float
    empirical_risk: float | None
    n_test: int
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = {
            "ecp_percent": self.ecp_percent,
            "stp_percent": self.stp_percent,
            "empirical_risk": self.empirical_risk,
            "n_test": self.n_test,
        }
        d.update(self.extra)
        return d


def canonicalize(text: str, extractor: Callable[[str], str] | None = None) -> str:
    """Trim whitespace and apply an optional task-specific answer extractor."""
    text = text.strip()
    if extractor is not None:
        text = extractor(text).strip()
    return text


def binary_loss(candidate: str, reference: str, gold: str) -> float:
    """0-1 loss that only counts a miss when the reference itself is right.

    Inputs must already be canonicalized (see :func:`canonicalize`).
    """
    return float(reference == gold and candidate != gold)


def semantic_loss(candidate_embedding, reference_embedding) -> float:
    """Cosine distance ``1 - cos`` between two embedding vectors, in [0, 2]."""
    a = np.asarray(candidate_embedding, dtype=float)
    b = np.asarray(reference_embedding, dtype=float)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"embedding shapes differ or are not vectors: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0 or not (np.isfinite(na) and np.isfinite(nb)):
        raise InvalidEmbeddingError("embedding has zero or non-finite norm")
    cos = float(np.dot(a, b) / (na * nb))
    return float(min(2.0, max(0.0, 1.0 - cos)))


def empirical_risk(decisions: Sequence[RoutingDecision], losses: Mapping[str, float]) -> float:
    """Mean loss of the composite model over ``decisions``.

    ``losses[id]`` is the loss of the cheap answer against the reference.
    Expert-routed items contribute zero and need no entry.
    """
    if len(decisions) == 0:
        raise UndefinedRiskError("empirical risk of an empty decision list is undefined")
    total = 0.0
    for d in decisions:
        if d.used_expert:
            continue
        try:
            total += float(losses[d.id])
        except KeyError:
            raise IncompleteRecordError(f"no loss for cheap-routed item {d.id}") from None
    return total / len(decisions)


def efficiency_metrics(
    decisions: Sequence[RoutingDecision],
    records: Iterable[CalibrationRecord],
    losses: Mapping[str, float] | None = None,
) -> EfficiencyReport:
    """Expert Call Percentage and Saved Token Percentage for a routed batch.

    STP is ``100 * (1 - mean_i (cheap_i + used_expert_i * expert_i) / expert_i)``,
    so it is 0 when every cheap answer costs as much as the reference and
    goes negative when expert calls dominate.
    """
    n = len(decisions)
    if n == 0:
        raise UndefinedRiskError("efficiency metrics of an empty decision list are undefined")
    by_id = {r.id: r for r in records}
    n_expert = 0
    ratio_sum = 0.0
    for d in decisions:
        rec = by_id.get(d.id)
        if rec is None or rec.expert_tokens is None:
            raise IncompleteRecordError(f"item {d.id} is missing token counts")
        if rec.expert_tokens == 0:
            raise DegenerateDivisionError(f"item {d.id} has zero expert tokens")
        n_expert += d.used_expert
        ratio_sum += (rec.cheap_tokens + d.used_expert * rec.expert_tokens) / rec.expert_tokens
    risk = None
    if losses is not None:
        risk = empirical_risk(decisions, losses)
    return EfficiencyReport(
        ecp_percent=100.0 * n_expert / n,
        stp_percent=100.0 * (1.0 - ratio_sum / n),
        empirical_risk=risk,
        n_test=n,
    )
