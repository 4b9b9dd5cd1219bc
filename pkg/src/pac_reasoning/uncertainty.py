"""Uncertainty scores for the nonthinking model's answers.

Two families are supported: a white-box score from per-token probabilities
and a black-box score from repeated self-reported confidences.
"""

from __future__ import annotations

import math
import re
from collections.abc import Sequence
from dataclasses import dataclass

from .exceptions import EmptySequenceError, OutOfRangeError

SCORE_KINDS = ("logits", "verbalized")


@dataclass(frozen=True)
class TokenProbs:
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if not self.probs:
            raise EmptySequenceError("token probability sequence is empty")
        for p in self.probs:
            if not 0.0 < p <= 1.0:
                raise OutOfRangeError(f"token probability {p} outside (0, 1]")

    @property
    def length(self) -> int:
        return len(self.probs)

    @classmethod
    def from_logprobs(cls, logprobs: Sequence[float]) -> TokenProbs:
        # exp of a logprob slightly above 0 (endpoint rounding) is clipped to 1
        return cls(tuple(min(1.0, math.exp(lp)) for lp in logprobs))


@dataclass(frozen=True)
class VerbalizedTrials:
    confidences: tuple[float, ...]
    flags: tuple[bool, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "confidences", tuple(float(c) for c in self.confidences))
        if not self.flags:
            object.__setattr__(self, "flags", (False,) * len(self.confidences))
        if len(self.flags) != len(self.confidences):
            raise ValueError("flags must align with confidences")

    @property
    def n_trials(self) -> int:
        return len(self.confidences)

    @property
    def n_unparsed(self) -> int:
        return sum(self.flags)


def logits_uncertainty(tp: TokenProbs | Sequence[float]) -> float:
    """One minus the mean token probability."""
    probs = tp.probs if isinstance(tp, TokenProbs) else TokenProbs(tuple(tp)).probs
    return 1.0 - math.fsum(probs) / len(probs)


def verbalized_uncertainty(vt: VerbalizedTrials | Sequence[float]) -> float:
    """One minus the mean self-reported confidence."""
    conf = vt.confidences if isinstance(vt, VerbalizedTrials) else tuple(float(c) for c in vt)
    if not conf:
        raise EmptySequenceError("no verbalized confidence trials")
    for c in conf:
        if not 0.0 <= c <= 1.0:
            raise OutOfRangeError(f"verbalized confidence {c} outside [0, 1]")
    return 1.0 - math.fsum(conf) / len(conf)


_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")


def parse_confidence(reply: str) -> tuple[float, bool]:
    """Parse a verbalized confidence reply.

    Returns ``(confidence, flagged)``. The reply must be a bare number in
    [0, 1]; anything else yields ``(0.0, True)`` so the item is treated as
    maximally uncertain instead of being dropped.
    """
    text = reply.strip()
    if _NUMBER.fullmatch(text):
        value = float(text)
        if 0.0 <= value <= 1.0:
            return value, False
    return 0.0, True
