"""
Convergence bound, stepsize schedule and multi-seed aggregation.

The bound for the time-averaged squared gradient norm of buffered
asynchronous aggregation after T server steps is

    8 sqrt(L) (f(w0) - f*) / sqrt(T)
    + 16 sqrt(L) (sigma^2/b + gamma^2) / sqrt(T)
    + 320 L (Q + 1) (tau^2 + 1) (sigma^2/b + n gamma^2) / T

under eta = 1 / (Q sqrt(L T)), beta = 1 / K and T >= 160 L (Q + 7) (tau + 1)^3.
"""

import logging
import math
from dataclasses import dataclass, field
from decimal import ROUND_CEILING, Decimal
from typing import Any, Dict, Mapping, Sequence, Tuple

import numpy as np

from fedbuff_validator.exceptions import ContractError
from fedbuff_validator.result_model import RunRecord

logger = logging.getLogger(__name__)

MIN_RATE_HORIZONS = 4


@dataclass(frozen=True)
class BoundInputs:
    """Every quantity the bound depends on."""
    L: float
    sigma_hat_sq: float
    gamma_sq: float
    f0_minus_fstar: float
    n: int
    Q: int
    K: int
    tau: int
    T: int

    def __post_init__(self) -> None:
        for name in ("L", "sigma_hat_sq", "gamma_sq", "f0_minus_fstar", "tau"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ContractError(f"BoundInputs.{name}", f"must be finite and nonnegative, got {value}")
        for name in ("n", "Q", "K", "T"):
            if getattr(self, name) < 1:
                raise ContractError(f"BoundInputs.{name}", f"must be >= 1, got {getattr(self, name)}")

    def with_horizon(self, T: int) -> "BoundInputs":
        return BoundInputs(self.L, self.sigma_hat_sq, self.gamma_sq, self.f0_minus_fstar,
                           self.n, self.Q, self.K, self.tau, T)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "L": self.L,
            "sigma_hat_sq": self.sigma_hat_sq,
            "gamma_sq": self.gamma_sq,
            "f0_minus_fstar": self.f0_minus_fstar,
            "n": self.n,
            "Q": self.Q,
            "K": self.K,
            "tau": self.tau,
            "T": self.T,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BoundInputs":
        return cls(
            L=float(data["L"]),
            sigma_hat_sq=float(data["sigma_hat_sq"]),
            gamma_sq=float(data["gamma_sq"]),
            f0_minus_fstar=float(data["f0_minus_fstar"]),
            n=int(data["n"]),
            Q=int(data["Q"]),
            K=int(data["K"]),
            tau=int(data["tau"]),
            T=int(data["T"]),
        )


@dataclass(frozen=True)
class AggregatedCurve:
    """Per-step mean of ||grad f(w^t)||^2 across seeds, with standard errors."""
    horizon_T: int
    seeds: Tuple[int, ...]
    mean_curve: np.ndarray
    stderr_curve: np.ndarray
    time_average: float
    time_average_stderr: float

    @property
    def num_runs(self) -> int:
        return len(self.seeds)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "horizon_T": self.horizon_T,
            "seeds": list(self.seeds),
            "time_average": self.time_average,
            "time_average_stderr": self.time_average_stderr,
        }


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of log(time-averaged grad norm^2) against log(T)."""
    horizons: Tuple[int, ...]
    values: Tuple[float, ...]
    slope: float
    intercept: float
    residual: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "horizons": list(self.horizons),
            "values": list(self.values),
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
        }


@dataclass
class BoundReport:
    """Empirical left-hand side next to the bound and its three terms."""
    inputs: BoundInputs
    terms: Tuple[float, float, float]
    bound_value: float
    empirical_lhs: float
    standard_error: float
    stderr_multiplier: float
    tolerance: float
    satisfied: bool
    num_seeds: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bound_inputs": self.inputs.to_dict(),
            "bound_terms": {
                "initial_gap": self.terms[0],
                "noise_and_diversity": self.terms[1],
                "staleness_drift": self.terms[2],
            },
            "bound_value": self.bound_value,
            "empirical_lhs": self.empirical_lhs,
            "standard_error": self.standard_error,
            "stderr_multiplier": self.stderr_multiplier,
            "tolerance": self.tolerance,
            "satisfied": self.satisfied,
            "num_seeds": self.num_seeds,
            **self.extra,
        }


def bound_terms(inp: BoundInputs) -> Tuple[float, float, float]:
    """The three terms of the bound, in order."""
    sqrt_L = math.sqrt(inp.L)
    sqrt_T = math.sqrt(inp.T)
    first = 8.0 * sqrt_L * inp.f0_minus_fstar / sqrt_T
    second = 16.0 * sqrt_L * (inp.sigma_hat_sq + inp.gamma_sq) / sqrt_T
    third = (
        320.0 * inp.L * (inp.Q + 1) * (inp.tau * inp.tau + 1)
        * (inp.sigma_hat_sq + inp.n * inp.gamma_sq) / inp.T
    )
    return first, second, third


def theorem_bound(inp: BoundInputs) -> float:
    """Right-hand side of the convergence bound in 64-bit floats."""
    first, second, third = bound_terms(inp)
    return first + second + third


def rate_decomposition(inp: BoundInputs) -> Dict[str, float]:
    """Split the bound into its O(1/sqrt(T)) and O(tau^2/T) parts."""
    first, second, third = bound_terms(inp)
    return {"inverse_sqrt_T": first + second, "tau_sq_over_T": third}


def horizon_threshold(L: float, Q: int, tau: int) -> int:
    """Smallest admissible horizon: ceil(160 L (Q + 7) (tau + 1)^3).

    Evaluated in decimal arithmetic on the shortest repr of L, so decimal
    inputs such as L = 0.01 give the exact integer ceiling.
    """
    if L <= 0 or Q < 1 or tau < 0:
        raise ContractError("horizon_threshold", f"need L > 0, Q >= 1, tau >= 0, got {L}, {Q}, {tau}")
    exact = Decimal(160) * Decimal(repr(float(L))) * (Q + 7) * (tau + 1) ** 3
    return int(exact.to_integral_value(rounding=ROUND_CEILING))


def schedule_stepsizes(L: float, Q: int, K: int, T: int, tau: int = 0) -> Tuple[float, float]:
    """Stepsizes eta = 1 / (Q sqrt(L T)) and beta = 1 / K.

    When T meets the horizon threshold for tau, eta <= 1 / (4 L (Q + 1))
    is checked as well.

    Returns:
        Tuple of (eta, beta)
    """
    if L <= 0 or T <= 0 or Q < 1 or K < 1:
        raise ContractError("schedule_stepsizes", f"need L, T > 0 and Q, K >= 1, got {L}, {T}, {Q}, {K}")
    eta = 1.0 / (Q * math.sqrt(L * T))
    beta = 1.0 / K
    if T >= horizon_threshold(L, Q, tau) and eta > 1.0 / (4.0 * L * (Q + 1)):
        raise ContractError(
            "Stepsize condition",
            f"eta={eta} exceeds 1/(4L(Q+1))={1.0 / (4.0 * L * (Q + 1))} at T={T}",
        )
    return eta, beta


def aggregate_curves(curves: Mapping[int, Sequence[float]]) -> AggregatedCurve:
    """Aggregate per-seed grad-norm curves keyed by seed.

    Args:
        curves: seed -> ||grad f(w^t)||^2 for t in [0, T)

    Returns:
        The aggregated curve; summation runs in seed order
    """
    if len(curves) < 2:
        raise ContractError("Too few runs", f"aggregation needs at least 2 seeds, got {len(curves)}")
    seeds = tuple(sorted(curves))
    lengths = {len(curves[s]) for s in seeds}
    if len(lengths) != 1:
        raise ContractError("Mismatched horizons", f"runs have different lengths {sorted(lengths)}")
    matrix = np.array([np.asarray(curves[s], dtype=np.float64) for s in seeds])
    if matrix.shape[1] == 0:
        raise ContractError("Empty runs", "runs have no metric rows")

    runs = matrix.shape[0]
    per_run_average = matrix.mean(axis=1)
    return AggregatedCurve(
        horizon_T=int(matrix.shape[1]),
        seeds=seeds,
        mean_curve=matrix.mean(axis=0),
        stderr_curve=matrix.std(axis=0, ddof=1) / math.sqrt(runs),
        time_average=float(per_run_average.mean()),
        time_average_stderr=float(per_run_average.std(ddof=1) / math.sqrt(runs)),
    )


def aggregate_runs(records: Sequence[RunRecord]) -> AggregatedCurve:
    """Monte-Carlo estimate of E||grad f(w^t)||^2 from runs that differ only by seed."""
    horizons = {r.horizon_T for r in records}
    if len(horizons) > 1:
        raise ContractError("Mismatched horizons", f"records have horizons {sorted(horizons)}")
    curves: Dict[int, np.ndarray] = {}
    for record in records:
        if record.seed in curves:
            raise ContractError("Duplicate seed", f"seed {record.seed} appears twice")
        if len(record.rows) != record.horizon_T:
            raise ContractError(
                "Incomplete run",
                f"seed {record.seed} has {len(record.rows)} rows for horizon {record.horizon_T}",
            )
        curves[record.seed] = record.grad_norms
    return aggregate_curves(curves)


def fit_rate_values(horizons: Sequence[int], values: Sequence[float]) -> RateFit:
    """Fit log(value) = slope * log(T) + intercept by least squares."""
    if len(horizons) != len(values):
        raise ContractError("fit_rate", "horizons and values differ in length")
    if len(horizons) < MIN_RATE_HORIZONS:
        raise ContractError("fit_rate", f"need at least {MIN_RATE_HORIZONS} horizons, got {len(horizons)}")
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ContractError("fit_rate", f"horizons must be strictly increasing, got {list(horizons)}")
    if any(not (v > 0 and math.isfinite(v)) for v in values) or any(h <= 0 for h in horizons):
        raise ContractError("fit_rate", "log-log fit needs positive finite values and horizons")

    x = np.log(np.asarray(horizons, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    residual = float(np.sqrt(np.mean((y - fitted) ** 2)))
    return RateFit(
        horizons=tuple(int(h) for h in horizons),
        values=tuple(float(v) for v in values),
        slope=float(slope),
        intercept=float(intercept),
        residual=residual,
    )


def fit_rate(curves: Sequence[AggregatedCurve]) -> RateFit:
    """Fit the decay exponent of the time-averaged gradient norm across horizons."""
    ordered = sorted(curves, key=lambda c: c.horizon_T)
    return fit_rate_values([c.horizon_T for c in ordered], [c.time_average for c in ordered])


def check_bound(
    curve: AggregatedCurve,
    inputs: BoundInputs,
    stderr_multiplier: float = 2.0,
    tolerance: float = 1e-12,
) -> BoundReport:
    """Compare LHS + m * SE against the bound.

    Args:
        curve: Aggregated runs at horizon inputs.T
        inputs: Bound inputs
        stderr_multiplier: m, the number of standard errors added to the estimate
        tolerance: Absolute slack for the degenerate LHS = RHS = 0 case

    Returns:
        The bound report
    """
    if curve.horizon_T != inputs.T:
        raise ContractError("Mismatched horizons", f"curve has T={curve.horizon_T}, inputs have T={inputs.T}")
    terms = bound_terms(inputs)
    bound_value = terms[0] + terms[1] + terms[2]
    satisfied = curve.time_average + stderr_multiplier * curve.time_average_stderr <= bound_value + tolerance
    report = BoundReport(
        inputs=inputs,
        terms=terms,
        bound_value=bound_value,
        empirical_lhs=curve.time_average,
        standard_error=curve.time_average_stderr,
        stderr_multiplier=stderr_multiplier,
        tolerance=tolerance,
        satisfied=bool(satisfied),
        num_seeds=curve.num_runs,
        extra={"rate_decomposition": rate_decomposition(inputs)},
    )
    logger.debug(f"Bound check: {report.to_dict()}")
    return report

