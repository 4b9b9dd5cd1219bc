"""Importance-sampled upper confidence bounds on the cumulative error.

A single draw of ``m`` weighted losses ``Z_j`` is shared by every candidate
threshold ``u``; the bound at ``u`` only looks at samples whose uncertainty
is ``<= u``. Two bounds are provided: a normal-approximation (CLT) bound and
a finite-sample Hoeffding bound.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.stats import norm

from .core import CalibrationRecord
from .exceptions import (
    EmptyGridError,
    InsufficientSamplesError,
    InvalidRangeError,
    SamplingError,
)

BOUND_KINDS = ("clt", "hoeffding")


@dataclass(frozen=True)
class SamplingPlan:
    """Per-index query probabilities ``weights``, draw count and seed.

    ``weights`` may be a scalar (same probability for every index) or one
    value per calibration item.
    """

    weights: Any
    sample_size: int
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.size == 0 or np.any(~(w > 0)) or np.any(w > 1):
            raise InvalidRangeError("sampling weights must lie in (0, 1]")
        if int(self.sample_size) < 1:
            raise InvalidRangeError("sample_size must be positive")

    @classmethod
    def default(cls, n: int, pi: float = 0.5, seed: int = 0) -> SamplingPlan:
        """Constant weight ``pi`` and ``m = n / pi`` draws."""
        return cls(weights=pi, sample_size=int(round(n / pi)), seed=seed)

    def weights_for(self, n: int) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 0:
            return np.full(n, float(w))
        if w.shape != (n,):
            raise InvalidRangeError(f"expected {n} sampling weights, got {w.shape}")
        return w

    def min_weight(self, n: int) -> float:
        return float(self.weights_for(n).min())


@dataclass(frozen=True)
class WeightedLossSample:
    index: int
    queried: bool
    weighted_loss: float
    uncertainty: float
    weight: float


@dataclass(frozen=True)
class WeightedLossSamples:
    """Array-backed sequence of :class:`WeightedLossSample` (0-based indices)."""

    index: np.ndarray
    queried: np.ndarray
    weighted_loss: np.ndarray
    uncertainty: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, j: int) -> WeightedLossSample:
        return WeightedLossSample(
            int(self.index[j]),
            bool(self.queried[j]),
            float(self.weighted_loss[j]),
            float(self.uncertainty[j]),
            float(self.weight[j]),
        )

    def __iter__(self):
        return (self[j] for j in range(len(self)))

    @property
    def n_queries(self) -> int:
        return int(self.queried.sum())

    def capped(self, loss_cap: float) -> np.ndarray:
        return np.minimum(self.weighted_loss, loss_cap / self.weight)


def draw_samples(
    items: Sequence[CalibrationRecord] | Sequence[float] | np.ndarray,
    plan: SamplingPlan,
    loss_oracle: Callable[[Any], float] | Sequence[float] | np.ndarray,
    *,
    loss_cap: float | None = None,
) -> WeightedLossSamples:
    """Draw ``plan.sample_size`` importance-weighted loss samples.

    Indices are drawn uniformly with replacement and each is queried with
    probability ``plan.weights[i]``. ``loss_oracle`` is either an array of
    losses (no external cost) or a callable invoked once per distinct
    queried item; callables receive the record id when ``items`` are
    :class:`CalibrationRecord` objects and the integer index otherwise.

    With ``loss_cap`` set, queried losses are capped at ``loss_cap / pi``.
    """
    if len(items) == 0:
        raise EmptyGridError("cannot sample from an empty calibration set")
    if isinstance(items[0], CalibrationRecord):
        keys = [r.id for r in items]
        u = np.array([r.uncertainty for r in items], dtype=float)
    else:
        keys = None
        u = np.asarray(items, dtype=float)
    n = len(u)
    pi = plan.weights_for(n)
    m = int(plan.sample_size)

    rng = np.random.default_rng(plan.seed)
    idx = rng.integers(0, n, size=m)
    queried = rng.random(m) < pi[idx]

    z = np.zeros(m)
    if callable(loss_oracle):
        cache: dict[int, float] = {}
        for j in np.flatnonzero(queried):
            i = int(idx[j])
            if i not in cache:
                try:
                    cache[i] = float(loss_oracle(keys[i] if keys is not None else i))
                except Exception as exc:
                    raise SamplingError(
                        f"loss oracle failed at sample {j} (item {i}): {exc}", position=int(j), index=i
                    ) from exc
            z[j] = cache[i]
    else:
        losses = np.asarray(loss_oracle, dtype=float)
        if losses.shape != (n,):
            raise InvalidRangeError(f"expected {n} losses, got {losses.shape}")
        z[queried] = losses[idx[queried]]
    w = pi[idx]
    z = z / w
    if loss_cap is not None:
        z = np.minimum(z, loss_cap / w)
    z[~queried] = 0.0
    return WeightedLossSamples(idx, queried, z, u[idx], w)


def normal_quantile(p: float) -> float:
    return float(norm.ppf(p))


def _masked(samples: WeightedLossSamples, u: float, values: np.ndarray | None = None) -> np.ndarray:
    values = samples.weighted_loss if values is None else values
    return np.where(samples.uncertainty <= u, values, 0.0)


def clt_bound(samples: WeightedLossSamples, u: float, alpha: float) -> float:
    """Mean of ``Z_j(u)`` plus ``z_{1-alpha}`` standard errors."""
    m = len(samples)
    if m < 2:
        raise InsufficientSamplesError("the CLT bound needs at least 2 samples")
    zu = _masked(samples, u)
    return float(zu.mean() + normal_quantile(1 - alpha) * zu.std(ddof=1) / math.sqrt(m))


def hoeffding_slack(m: int, alpha: float, loss_cap: float, min_weight: float) -> float:
    if loss_cap <= 0 or min_weight <= 0:
        raise InvalidRangeError("loss_cap and min_weight must be positive")
    r = loss_cap / min_weight
    return math.sqrt(r * r * math.log(2 / alpha) / (2 * m))


def hoeffding_bound(
    samples: WeightedLossSamples, u: float, alpha: float, loss_cap: float, min_weight: float
) -> float:
    """Mean of the capped ``Z_j(u)`` plus the Hoeffding slack for range ``B / min pi``."""
    m = len(samples)
    if m < 1:
        raise InsufficientSamplesError("the Hoeffding bound needs at least 1 sample")
    slack = hoeffding_slack(m, alpha, loss_cap, min_weight)
    return float(_masked(samples, u, samples.capped(loss_cap)).mean() + slack)


@dataclass(frozen=True)
class UcbCurve:
    grid: np.ndarray
    bounds: np.ndarray
    means: np.ndarray
    bound_kind: str
    alpha: float
    degenerate: np.ndarray

    def __post_init__(self):
        if len(self.grid) != len(self.bounds):
            raise ValueError("grid and bounds differ in length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")

    def __len__(self) -> int:
        return len(self.grid)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.bound_kind.encode())
        h.update(np.float64(self.alpha).tobytes())
        h.update(np.ascontiguousarray(self.grid, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.bounds, dtype="<f8").tobytes())
        return h.hexdigest()

    def rows(self):
        for u, mu, b in zip(self.grid, self.means, self.bounds):
            yield float(u), float(mu), float(b)


def calibration_grid(uncertainties) -> np.ndarray:
    """Sorted distinct calibration uncertainties; ties collapse to one point."""
    return np.unique(np.asarray(uncertainties, dtype=float))


def cumulative_moments(samples: WeightedLossSamples, grid: np.ndarray, values: np.ndarray | None = None):
    """Mean and (m-1)-denominator standard deviation of ``Z_j(u)`` for every ``u`` in ``grid``."""
    values = samples.weighted_loss if values is None else values
    m = len(samples)
    order = np.argsort(samples.uncertainty, kind="stable")
    us = samples.uncertainty[order]
    zs = values[order]
    s1 = np.concatenate(([0.0], np.cumsum(zs)))
    s2 = np.concatenate(([0.0], np.cumsum(zs * zs)))
    k = np.searchsorted(us, grid, side="right")
    mean = s1[k] / m
    if m > 1:
        var = np.maximum(s2[k] - s1[k] * s1[k] / m, 0.0) / (m - 1)
    else:
        var = np.zeros_like(mean)
    return mean, np.sqrt(var)


def build_curve(
    samples: WeightedLossSamples,
    grid,
    alpha: float,
    bound_kind: str = "clt",
    *,
    loss_cap: float | None = None,
    min_weight: float | None = None,
) -> UcbCurve:
    """Evaluate the chosen bound at every grid point from one shared sample set.

    The Hoeffding bound needs ``loss_cap`` (B) and ``min_weight`` (min pi).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyGridError("cannot build a UCB curve on an empty grid")
    m = len(samples)
    if bound_kind == "clt":
        if m < 2:
            raise InsufficientSamplesError("the CLT bound needs at least 2 samples")
        mean, sd = cumulative_moments(samples, grid)
        bounds = mean + normal_quantile(1 - alpha) * sd / math.sqrt(m)
        degenerate = sd == 0
    elif bound_kind == "hoeffding":
        if loss_cap is None or min_weight is None:
            raise InvalidRangeError("the Hoeffding bound needs loss_cap and min_weight")
        mean, _ = cumulative_moments(samples, grid, samples.capped(loss_cap))
        bounds = mean + hoeffding_slack(m, alpha, loss_cap, min_weight)
        degenerate = np.zeros(grid.shape, dtype=bool)
    else:
        raise ValueError(f"unknown bound kind {bound_kind!r}; expected one of {BOUND_KINDS}")
    return UcbCurve(grid, bounds, mean, bound_kind, float(alpha), degenerate)
