"""Synthetic populations with known risk, used to check the guarantees empirically.

The simulator works at the level of (uncertainty, loss, token counts); no
text is generated. Every scenario pairs a Beta law for the uncertainty with
a loss law whose conditional mean is non-decreasing in the uncertainty, so
the true cumulative risk is a one-dimensional integral.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from scipy import integrate, stats

from .calibration import calibrate, empirical_coverage_floor
from .core import RiskBudget
from .exceptions import ConfigError, OracleError
from .ucb import BOUND_KINDS, SamplingPlan, build_curve, draw_samples

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


# ---------------------------------------------------------------------------
# laws


@dataclass(frozen=True)
class BetaUncertainty:
    a: float = 2.0
    b: float = 5.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ConfigError("beta parameters must be positive")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.beta(self.a, self.b, size)

    def pdf(self, u):
        return stats.beta.pdf(u, self.a, self.b)

    def ppf(self, q):
        return stats.beta.ppf(q, self.a, self.b)


@dataclass(frozen=True)
class BernoulliSigmoidLoss:
    """Binary loss with ``P(loss = 1 | U = u) = scale * sigmoid(k * (u - c))``."""

    k: float = 8.0
    c: float = 0.5
    scale: float = 1.0

    lower = 0.0
    upper = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError("k must be >= 0 so the loss link is non-decreasing")
        if not 0 <= self.scale <= 1:
            raise ConfigError("scale must lie in [0, 1]")

    def mean(self, u):
        return self.scale / (1.0 + np.exp(-self.k * (np.asarray(u, dtype=float) - self.c)))

    def sample(self, rng: np.random.Generator, u: np.ndarray) -> np.ndarray:
        return (rng.random(u.shape) < self.mean(u)).astype(float)


@dataclass(frozen=True)
class ClampedGaussianLoss:
    """Continuous loss ``clip(slope * u + offset + N(0, noise_sd^2), 0, 1)``."""

    slope: float = 1.0
    offset: float = 0.0
    noise_sd: float = 0.1

    lower = 0.0
    upper = 1.0

    def __post_init__(self):
        if self.slope < 0:
            raise ConfigError("slope must be >= 0 so the loss link is non-decreasing")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")

    def mean(self, u):
        mu = self.slope * np.asarray(u, dtype=float) + self.offset
        s = self.noise_sd
        if s == 0:
            return np.clip(mu, 0.0, 1.0)

        # E[clip(X, 0, 1)] = E[X+] - E[(X-1)+] for X ~ N(mu, s^2)
        def pos_part(x):
            return x * stats.norm.cdf(x / s) + s * stats.norm.pdf(x / s)

        return pos_part(mu) - pos_part(mu - 1.0)

    def sample(self, rng: np.random.Generator, u: np.ndarray) -> np.ndarray:
        noise = rng.normal(0.0, self.noise_sd, u.shape) if self.noise_sd > 0 else 0.0
        return np.clip(self.slope * u + self.offset + noise, 0.0, 1.0)


@dataclass(frozen=True)
class TokenLaw:
    """Expert answers cost ~lognormal tokens; cheap answers a fixed fraction of that."""

    expert_mean: float = 800.0
    expert_log_sd: float = 0.3
    cheap_ratio: float = 0.3

    def sample(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        mu = math.log(self.expert_mean) - 0.5 * self.expert_log_sd**2
        expert = np.maximum(1, np.rint(rng.lognormal(mu, self.expert_log_sd, size))).astype(np.int64)
        cheap = np.maximum(1, np.rint(self.cheap_ratio * expert)).astype(np.int64)
        return cheap, expert


LOSS_LAWS = {"bernoulli_sigmoid": BernoulliSigmoidLoss, "clamped_gaussian": ClampedGaussianLoss}


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class SimScenario:
    n_cal: int
    n_test: int
    uncertainty_law: BetaUncertainty
    loss_law: BernoulliSigmoidLoss | ClampedGaussianLoss
    budget: RiskBudget
    pi: float = 0.5
    m: int | None = None
    reps: int = 1000
    base_seed: int = 0
    bound_kind: str = "hoeffding"
    slack: float = 0.05
    tokens: TokenLaw = field(default_factory=TokenLaw)
    ucb_quantiles: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    name: str = "scenario"

    def __post_init__(self):
        if self.n_cal < 1 or self.n_test < 1:
            raise ConfigError("n_cal and n_test must be positive")
        if self.reps < 1:
            raise ConfigError("reps must be positive")
        if self.bound_kind not in BOUND_KINDS:
            raise ConfigError(f"bound must be one of {BOUND_KINDS}")
        if not 0 < self.pi <= 1:
            raise ConfigError("pi must lie in (0, 1]")
        if self.budget.loss_lower > self.loss_law.lower or self.budget.loss_upper < self.loss_law.upper:
            raise ConfigError("budget loss range must contain the loss law's range")

    @property
    def sample_size(self) -> int:
        return self.m if self.m is not None else int(round(self.n_cal / self.pi))

    def ucb_grid(self) -> np.ndarray:
        return np.asarray(self.uncertainty_law.ppf(np.asarray(self.ucb_quantiles)), dtype=float)

    def to_dict(self) -> dict[str, Any]:
        loss_name = next(k for k, v in LOSS_LAWS.items() if isinstance(self.loss_law, v))
        return {
            "name": self.name,
            "n_cal": self.n_cal,
            "n_test": self.n_test,
            "reps": self.reps,
            "base_seed": self.base_seed,
            "bound": self.bound_kind,
            "slack": self.slack,
            "ucb_quantiles": list(self.ucb_quantiles),
            "budget": {
                "epsilon": self.budget.epsilon,
                "alpha": self.budget.alpha,
                "loss_lower": self.budget.loss_lower,
                "loss_upper": self.budget.loss_upper,
            },
            "plan": {"pi": self.pi, **({} if self.m is None else {"m": self.m})},
            "uncertainty": {"law": "beta", "a": self.uncertainty_law.a, "b": self.uncertainty_law.b},
            "loss": {"law": loss_name, **_fields(self.loss_law)},
            "tokens": _fields(self.tokens),
        }


def _fields(obj) -> dict[str, Any]:
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


def scenario_from_dict(d: dict[str, Any]) -> SimScenario:
    """Build a scenario from the documented key/value schema (see README)."""
    try:
        unc = dict(d.get("uncertainty", {"law": "beta"}))
        if unc.pop("law", "beta") != "beta":
            raise ConfigError("only the 'beta' uncertainty law is supported")
        loss = dict(d.get("loss", {"law": "bernoulli_sigmoid"}))
        law = loss.pop("law", "bernoulli_sigmoid")
        if law not in LOSS_LAWS:
            raise ConfigError(f"unknown loss law {law!r}; expected one of {sorted(LOSS_LAWS)}")
        budget = RiskBudget(**d.get("budget", {"epsilon": 0.08, "alpha": 0.05}))
        plan = d.get("plan", {})
        return SimScenario(
            n_cal=int(d.get("n_cal", 500)),
            n_test=int(d.get("n_test", 500)),
            uncertainty_law=BetaUncertainty(**unc),
            loss_law=LOSS_LAWS[law](**loss),
            budget=budget,
            pi=float(plan.get("pi", 0.5)),
            m=None if plan.get("m") is None else int(plan["m"]),
            reps=int(d.get("reps", 1000)),
            base_seed=int(d.get("base_seed", 0)),
            bound_kind=str(d.get("bound", "hoeffding")),
            slack=float(d.get("slack", 0.05)),
            tokens=TokenLaw(**d.get("tokens", {})),
            ucb_quantiles=tuple(float(q) for q in d.get("ucb_quantiles", SimScenario.ucb_quantiles)),
            name=str(d.get("name", "scenario")),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def load_scenario(path) -> SimScenario:
    path = Path(path)
    try:
        raw = path.read_bytes()
        data = json.loads(raw) if path.suffix == ".json" else tomllib.loads(raw.decode())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_dict(data)


_DATA = Path(__file__).parent / "data"


def default_scenarios() -> list[SimScenario]:
    """The bundled scenarios, in file-name order."""
    return [load_scenario(p) for p in sorted(_DATA.glob("*.toml"))]


# ---------------------------------------------------------------------------
# ground truth


def true_risk(scenario: SimScenario, u: float) -> float:
    """Population cumulative risk ``E[loss * 1{U <= u}]`` by adaptive quadrature."""
    if u <= 0:
        return 0.0
    u = min(float(u), 1.0)
    law, loss = scenario.uncertainty_law, scenario.loss_law
    val, err = integrate.quad(
        lambda x: float(law.pdf(x) * loss.mean(x)), 0.0, u, epsabs=1e-13, epsrel=1e-10, limit=200
    )
    if not math.isfinite(val) or err > max(1e-9, 1e-7 * abs(val)):
        raise OracleError(f"risk integral did not converge at u={u} (estimate {val}, error {err})")
    return float(val)


# ---------------------------------------------------------------------------
# experiments


def _stream(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), k]))


def _plan_seed(seed: int) -> int:
    return int(np.random.SeedSequence([int(seed), 99]).generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class RepOutcomes:
    """Per-repetition raw results; every summary is derived from these."""

    seeds: np.ndarray
    threshold: np.ndarray
    feasible: np.ndarray
    true_risk: np.ndarray
    test_risk: np.ndarray
    ecp: np.ndarray
    stp: np.ndarray
    ucb_grid: np.ndarray
    ucb_bounds: np.ndarray  # reps x grid
    cal_cumulative: np.ndarray  # reps x grid, finite-sample L(u) of the calibration set
    population_cumulative: np.ndarray  # grid


def _one_rep(scenario: SimScenario, seed: int, grid: np.ndarray):
    data_rng, test_rng = _stream(seed, 0), _stream(seed, 1)
    law, loss = scenario.uncertainty_law, scenario.loss_law
    u_cal = law.sample(data_rng, scenario.n_cal)
    l_cal = loss.sample(data_rng, u_cal)
    plan = SamplingPlan(scenario.pi, scenario.sample_size, _plan_seed(seed))
    res = calibrate(u_cal, l_cal, scenario.budget, plan, scenario.bound_kind)
    thr = res.policy.threshold
    fixed = build_curve(
        res.samples,
        grid,
        scenario.budget.alpha,
        scenario.bound_kind,
        loss_cap=scenario.budget.loss_upper,
        min_weight=scenario.pi,
    )
    cal_cum = (l_cal[None, :] * (u_cal[None, :] <= grid[:, None])).mean(axis=1)

    u_test = law.sample(test_rng, scenario.n_test)
    l_test = loss.sample(test_rng, u_test)
    cheap, expert = scenario.tokens.sample(test_rng, scenario.n_test)
    hot = u_test >= thr
    test_risk = float(np.where(hot, 0.0, l_test).mean())
    ecp = 100.0 * hot.mean()
    stp = 100.0 * (1.0 - np.mean((cheap + hot * expert) / expert))
    return (
        thr,
        res.policy.feasible,
        true_risk(scenario, thr),
        test_risk,
        ecp,
        stp,
        fixed.bounds,
        cal_cum,
    )


def run_reps(scenario: SimScenario, n_jobs: int = 1) -> RepOutcomes:
    """Run calibrate + route for ``scenario.reps`` repetitions (seed = base_seed + rep)."""
    grid = scenario.ucb_grid()
    seeds = scenario.base_seed + np.arange(scenario.reps)
    if n_jobs == 1:
        rows = [_one_rep(scenario, int(s), grid) for s in seeds]
    else:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=n_jobs)(delayed(_one_rep)(scenario, int(s), grid) for s in seeds)
    cols = list(zip(*rows))
    return RepOutcomes(
        seeds=seeds,
        threshold=np.array(cols[0]),
        feasible=np.array(cols[1], dtype=bool),
        true_risk=np.array(cols[2]),
        test_risk=np.array(cols[3]),
        ecp=np.array(cols[4]),
        stp=np.array(cols[5]),
        ucb_grid=grid,
        ucb_bounds=np.vstack(cols[6]),
        cal_cumulative=np.vstack(cols[7]),
        population_cumulative=np.array([true_risk(scenario, u) for u in grid]),
    )


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def required_coverage(alpha: float, bound_kind: str, reps: int, asymptotic_allowance: float = 0.02) -> float:
    """Pass threshold for a coverage estimate over ``reps`` repetitions.

    ``1 - alpha`` for finite-sample bounds, ``1 - alpha - 0.02`` for the CLT
    bound, minus two binomial standard errors at that level.
    """
    target = 1 - alpha - (asymptotic_allowance if bound_kind == "clt" else 0.0)
    return target - 2 * binomial_se(target, reps)


@dataclass
class Check:
    name: str
    value: float
    required: float
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "value": self.value, "required": self.required, "passed": self.passed}


@dataclass
class CoverageReport:
    scenario: str
    bound_kind: str
    reps: int
    pac_coverage: float
    ucb_coverage: dict[float, float]
    ucb_population_coverage: dict[float, float]
    mean_risk: float
    mean_test_risk: float
    mean_ecp: float
    mean_stp: float
    mean_threshold: float
    infeasible_fraction: float
    empirical_bound_coverage: float | None = None
    empirical_bound_floor: float | None = None
    checks: list[Check] = field(default_factory=list)
    assertions_skipped: bool = False

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "bound_kind": self.bound_kind,
            "reps": self.reps,
            "pac_coverage": self.pac_coverage,
            "ucb_coverage": {f"{u:.6f}": v for u, v in self.ucb_coverage.items()},
            "ucb_population_coverage": {f"{u:.6f}": v for u, v in self.ucb_population_coverage.items()},
            "mean_risk": self.mean_risk,
            "mean_test_risk": self.mean_test_risk,
            "mean_ecp": self.mean_ecp,
            "mean_stp": self.mean_stp,
            "mean_threshold": self.mean_threshold,
            "infeasible_fraction": self.infeasible_fraction,
            "empirical_bound_coverage": self.empirical_bound_coverage,
            "empirical_bound_floor": self.empirical_bound_floor,
            "assertions_skipped": self.assertions_skipped,
            "checks": [c.to_dict() for c in self.checks],
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        lines = [
            f"scenario {self.scenario}  bound={self.bound_kind}  reps={self.reps}",
            f"  pac coverage            {self.pac_coverage:.4f}",
            f"  mean true risk R(u^)    {self.mean_risk:.4f}",
            f"  mean test risk          {self.mean_test_risk:.4f}",
            f"  mean threshold          {self.mean_threshold:.4f}",
            f"  mean ECP (%)            {self.mean_ecp:.2f}",
            f"  mean STP (%)            {self.mean_stp:.2f}",
            f"  infeasible fraction     {self.infeasible_fraction:.4f}",
        ]
        if self.empirical_bound_coverage is not None:
            lines.append(
                f"  empirical-risk coverage {self.empirical_bound_coverage:.4f}"
                f"  (floor {self.empirical_bound_floor:.4f})"
            )
        lines.append("  u         ucb-cov   ucb-pop-cov")
        for u, v in self.ucb_coverage.items():
            lines.append(f"  {u:<9.4f} {v:<9.4f} {self.ucb_population_coverage[u]:.4f}")
        if self.assertions_skipped:
            lines.append("  checks skipped (too few reps)")
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            lines.append(f"  [{mark}] {c.name}: {c.value:.4f} (required >= {c.required:.4f})")
        return "\n".join(lines) + "\n"


MIN_REPS_FOR_CHECKS = 100


def coverage_experiment(scenario: SimScenario, outcomes: RepOutcomes | None = None, n_jobs: int = 1) -> CoverageReport:
    """Estimate PAC coverage, per-threshold UCB coverage and efficiency over repetitions.

    ``ucb_coverage`` compares each bound with the cumulative error of the
    calibration set it was computed from (the quantity the importance
    sampled mean is unbiased for); ``ucb_population_coverage`` compares it
    with the population cumulative risk.
    """
    out = outcomes if outcomes is not None else run_reps(scenario, n_jobs=n_jobs)
    eps = scenario.budget.epsilon
    grid = out.ucb_grid
    cov = (out.cal_cumulative <= out.ucb_bounds).mean(axis=0)
    pop_cov = (out.population_cumulative[None, :] <= out.ucb_bounds).mean(axis=0)
    slack = scenario.slack
    emp_cov = empirical_bound_experiment(scenario, slack, out)
    floor = empirical_coverage_floor(scenario.budget.alpha, scenario.n_test, slack, scenario.budget.loss_range)

    report = CoverageReport(
        scenario=scenario.name,
        bound_kind=scenario.bound_kind,
        reps=scenario.reps,
        pac_coverage=float(np.mean(out.true_risk <= eps)),
        ucb_coverage={float(u): float(c) for u, c in zip(grid, cov)},
        ucb_population_coverage={float(u): float(c) for u, c in zip(grid, pop_cov)},
        mean_risk=float(out.true_risk.mean()),
        mean_test_risk=float(out.test_risk.mean()),
        mean_ecp=float(out.ecp.mean()),
        mean_stp=float(out.stp.mean()),
        mean_threshold=float(out.threshold.mean()),
        infeasible_fraction=float(1 - out.feasible.mean()),
        empirical_bound_coverage=emp_cov,
        empirical_bound_floor=floor,
    )
    if scenario.reps < MIN_REPS_FOR_CHECKS:
        report.assertions_skipped = True
        return report
    need = required_coverage(scenario.budget.alpha, scenario.bound_kind, scenario.reps)
    report.checks.append(Check("pac_coverage", report.pac_coverage, need, report.pac_coverage >= need))
    for u, c in report.ucb_coverage.items():
        report.checks.append(Check(f"ucb_coverage@{u:.4f}", c, need, c >= need))
    emp_need = floor - 2 * binomial_se(min(max(floor, 0.0), 1.0), scenario.reps)
    report.checks.append(Check("empirical_bound_coverage", emp_cov, emp_need, emp_cov >= emp_need))
    return report


def empirical_bound_experiment(scenario: SimScenario, slack: float, outcomes: RepOutcomes | None = None) -> float:
    """Fraction of repetitions whose test-set risk is ``<= epsilon + slack``."""
    out = outcomes if outcomes is not None else run_reps(scenario)
    return float(np.mean(out.test_risk <= scenario.budget.epsilon + slack))


# ---------------------------------------------------------------------------
# UCB-only and transductive experiments


@dataclass
class UcbCoverage:
    grid: np.ndarray
    coverage: np.ndarray  # against the calibration set's cumulative error
    population_coverage: np.ndarray
    reps: int
    m: int


def ucb_coverage_experiment(
    scenario: SimScenario, m: int | None = None, bound_kind: str | None = None, reps: int | None = None
) -> UcbCoverage:
    """Coverage of the bound at the scenario's fixed thresholds, without calibration.

    A fresh calibration set and sample draw are used in each repetition.
    """
    m = scenario.sample_size if m is None else int(m)
    kind = scenario.bound_kind if bound_kind is None else bound_kind
    reps = scenario.reps if reps is None else int(reps)
    grid = scenario.ucb_grid()
    pop = np.array([true_risk(scenario, u) for u in grid])
    law, loss = scenario.uncertainty_law, scenario.loss_law
    hit = np.zeros(len(grid))
    pop_hit = np.zeros(len(grid))
    for rep in range(reps):
        seed = scenario.base_seed + rep
        rng = _stream(seed, 0)
        u_cal = law.sample(rng, scenario.n_cal)
        l_cal = loss.sample(rng, u_cal)
        plan = SamplingPlan(scenario.pi, m, _plan_seed(seed))
        cap = scenario.budget.loss_upper if kind == "hoeffding" else None
        samples = draw_samples(u_cal, plan, l_cal, loss_cap=cap)
        curve = build_curve(
            samples, grid, scenario.budget.alpha, kind, loss_cap=scenario.budget.loss_upper, min_weight=scenario.pi
        )
        cal = (l_cal[None, :] * (u_cal[None, :] <= grid[:, None])).mean(axis=1)
        hit += cal <= curve.bounds
        pop_hit += pop <= curve.bounds
    return UcbCoverage(grid, hit / reps, pop_hit / reps, reps, m)


def transductive_experiment(
    uncertainty: np.ndarray,
    losses: np.ndarray,
    budget: RiskBudget,
    *,
    pi: float = 0.5,
    m: int | None = None,
    bound_kind: str = "hoeffding",
    seeds=range(1000),
) -> np.ndarray:
    """Cumulative error ``L(u^)`` of a fixed dataset for each algorithm seed.

    The dataset never changes; only the sampling randomness does.
    """
    u = np.asarray(uncertainty, dtype=float)
    losses = np.asarray(losses, dtype=float)
    m = int(round(len(u) / pi)) if m is None else int(m)
    out = []
    for seed in seeds:
        res = calibrate(u, losses, budget, SamplingPlan(pi, m, int(seed)), bound_kind)
        thr = res.policy.threshold
        out.append(float(np.mean(losses * (u <= thr))) if res.policy.feasible else 0.0)
    return np.array(out)


def with_overrides(scenario: SimScenario, **kw) -> SimScenario:
    budget_kw = {k: kw.pop(k) for k in ("epsilon", "alpha") if k in kw}
    if budget_kw:
        kw["budget"] = replace(scenario.budget, **budget_kw)
    return replace(scenario, **kw)
