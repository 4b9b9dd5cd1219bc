"""Risk-controlled routing between a cheap model and an expensive expert."""

__version__ = "0.1.0"

from .calibration import (
    CalibrationResult,
    ThresholdPolicy,
    TransductiveResult,
    calibrate,
    empirical_bound_check,
    empirical_coverage_floor,
    select_threshold,
    transductive_label,
)
from .core import (
    CalibrationRecord,
    EfficiencyReport,
    RiskBudget,
    RoutingDecision,
    binary_loss,
    canonicalize,
    efficiency_metrics,
    empirical_risk,
    semantic_loss,
)
from .estimator import PACRouter
from .routing import CachedExpert, RoutingResult, TestItem, route
from .ucb import (
    BOUND_KINDS,
    SamplingPlan,
    UcbCurve,
    WeightedLossSamples,
    build_curve,
    calibration_grid,
    clt_bound,
    draw_samples,
    hoeffding_bound,
    hoeffding_slack,
)
from .uncertainty import (
    SCORE_KINDS,
    TokenProbs,
    VerbalizedTrials,
    logits_uncertainty,
    parse_confidence,
    verbalized_uncertainty,
)

__all__ = [
    "BOUND_KINDS",
    "CachedExpert",
    "CalibrationRecord",
    "CalibrationResult",
    "EfficiencyReport",
    "PACRouter",
    "RiskBudget",
    "RoutingDecision",
    "RoutingResult",
    "SCORE_KINDS",
    "SamplingPlan",
    "TestItem",
    "ThresholdPolicy",
    "TokenProbs",
    "TransductiveResult",
    "UcbCurve",
    "VerbalizedTrials",
    "WeightedLossSamples",
    "binary_loss",
    "build_curve",
    "calibrate",
    "calibration_grid",
    "canonicalize",
    "clt_bound",
    "draw_samples",
    "efficiency_metrics",
    "empirical_bound_check",
    "empirical_coverage_floor",
    "empirical_risk",
    "hoeffding_bound",
    "hoeffding_slack",
    "logits_uncertainty",
    "parse_confidence",
    "route",
    "select_threshold",
    "semantic_loss",
    "transductive_label",
    "verbalized_uncertainty",
]
