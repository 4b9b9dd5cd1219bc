"""scikit-learn style wrapper around calibration and routing."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_losses, check_uncertainty
from .calibration import calibrate
from .core import RiskBudget
from .routing import route
from .ucb import BOUND_KINDS, SamplingPlan


class PACRouter(BaseEstimator):
    """Calibrates the uncertainty threshold above which the expert model is called.

    Parameters
    ----------
    epsilon : float, default=0.08
        Tolerated expected loss of the routed model relative to the expert.
    alpha : float, default=0.05
        Allowed probability that the tolerance is exceeded.
    bound : {"clt", "hoeffding"}, default="clt"
        Upper confidence bound used during calibration.
    sampling_weight : float, default=0.5
        Probability of querying the expert for each drawn calibration index.
    n_samples : int or None, default=None
        Number of importance samples; ``None`` means ``n / sampling_weight``.
    loss_bounds : tuple of float, default=(0.0, 1.0)
        Range of the loss; the upper end caps the Hoeffding bound.
    random_state : int or None, default=None
        Seed for the sample draw. ``None`` draws a fresh seed, recorded in
        ``policy_.seed``.

    Attributes
    ----------
    threshold_ : float
        Calibrated threshold; scores ``>= threshold_`` go to the expert.
    feasible_ : bool
        False when no candidate threshold met the budget (everything is
        routed to the expert).
    curve_ : UcbCurve
    samples_ : WeightedLossSamples
    policy_ : ThresholdPolicy
    n_queries_ : int
        Number of expert queries made during calibration (distinct items).
    """

    def __init__(
        self,
        epsilon=0.08,
        alpha=0.05,
        bound="clt",
        sampling_weight=0.5,
        n_samples=None,
        loss_bounds=(0.0, 1.0),
        random_state=None,
    ):
        self.epsilon = epsilon
        self.alpha = alpha
        self.bound = bound
        self.sampling_weight = sampling_weight
        self.n_samples = n_samples
        self.loss_bounds = loss_bounds
        self.random_state = random_state

    def _budget(self) -> RiskBudget:
        lo, hi = self.loss_bounds
        return RiskBudget(float(self.epsilon), float(self.alpha), float(lo), float(hi))

    def fit(self, X, y=None, *, loss_oracle=None, score_kind=None):
        """Calibrate on uncertainty scores ``X``.

        Losses come either from ``y`` (one per item, only sampled entries are
        read) or from ``loss_oracle(i)``, called once per sampled item index.
        """
        if self.bound not in BOUND_KINDS:
            raise ValueError(f"bound must be one of {BOUND_KINDS}, got {self.bound!r}")
        u = check_uncertainty(X)
        if u.size == 0:
            raise ValueError("cannot calibrate on an empty set")
        budget = self._budget()
        if (y is None) == (loss_oracle is None):
            raise ValueError("pass exactly one of y or loss_oracle")
        if y is not None:
            losses = check_losses(y, u.size, budget.loss_lower, budget.loss_upper)
            queried: set[int] = set()

            def oracle(i):
                queried.add(i)
                return losses[i]
        else:
            queried = set()

            def oracle(i):
                queried.add(i)
                return loss_oracle(i)

        if self.random_state is None:
            seed = int(np.random.SeedSequence().generate_state(1, dtype=np.uint64)[0] >> 1)
        else:
            seed = int(self.random_state)
        m = self.n_samples if self.n_samples is not None else int(round(u.size / self.sampling_weight))
        plan = SamplingPlan(float(self.sampling_weight), int(m), seed)
        res = calibrate(u, oracle, budget, plan, self.bound, score_kind=score_kind)

        self.policy_ = res.policy
        self.curve_ = res.curve
        self.samples_ = res.samples
        self.threshold_ = res.policy.threshold
        self.feasible_ = res.policy.feasible
        self.n_queries_ = len(queried)
        self.n_features_in_ = 1
        return self

    def predict(self, X) -> np.ndarray:
        """Boolean mask, True where the expert model must answer."""
        check_is_fitted(self, "threshold_")
        return check_uncertainty(X) >= self.threshold_

    def decision_function(self, X) -> np.ndarray:
        """Signed distance to the threshold; nonnegative means expert."""
        check_is_fitted(self, "threshold_")
        return check_uncertainty(X) - self.threshold_

    def risk(self, X, losses) -> float:
        """Empirical risk of the routed model given each item's cheap-answer loss."""
        u = check_uncertainty(X)
        budget = self._budget()
        losses = check_losses(losses, u.size, budget.loss_lower, budget.loss_upper)
        return float(np.where(self.predict(u), 0.0, losses).mean())

    def route(self, items, expert, *, max_parallel: int = 1):
        """Route :class:`~pac_reasoning.routing.TestItem` objects with the fitted policy."""
        check_is_fitted(self, "policy_")
        return route(items, self.policy_, expert, max_parallel=max_parallel)
