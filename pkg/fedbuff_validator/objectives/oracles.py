"""
Gradient oracles and constant certificates over client datasets.

p_i is the empirical distribution of a client's points, so f_i, its
gradient, the per-sample variance and the population diversity are exact
finite averages. Sums run over clients in index order.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from fedbuff_validator.config import Family, ProblemSpec
from fedbuff_validator.exceptions import ConfigError, ContractError
from fedbuff_validator.objectives.base_objective import (
    ClientDataset,
    ParamVector,
    ProblemConstants,
    as_param_vector,
    check_param_vector,
)
from fedbuff_validator.objectives.logistic import generate_logistic_clients, logistic_constants
from fedbuff_validator.objectives.quadratic import generate_quadratic_clients, quadratic_constants

logger = logging.getLogger(__name__)

GradientOracle = Callable[[ParamVector, np.random.Generator], ParamVector]

# Grid coordinates used by the probe set; higher coordinates of grid points stay at 0.
PROBE_GRID_DIMS = 4


def full_gradient(client: ClientDataset, w: ParamVector) -> ParamVector:
    """Exact gradient of f_i at w: the mean of all per-sample gradients."""
    check_param_vector(w, client.dim, "w")
    return client.objective.sample_gradients(w, client.features, client.labels).mean(axis=0)


def local_objective(client: ClientDataset, w: ParamVector) -> float:
    """Exact value of f_i at w."""
    check_param_vector(w, client.dim, "w")
    return float(client.objective.sample_losses(w, client.features, client.labels).mean())


def stochastic_gradient(
    client: ClientDataset,
    w: ParamVector,
    batch_size: int,
    rng_stream: np.random.Generator,
    full_batch: bool = False,
) -> ParamVector:
    """Mini-batch gradient with batch_size points sampled uniformly with replacement.

    Args:
        client: Client dataset to sample from
        w: Point to evaluate at
        batch_size: Number of points in the batch (b)
        rng_stream: The client's dedicated random stream
        full_batch: Use the whole dataset instead of sampling

    Returns:
        Average per-sample gradient over the batch
    """
    if batch_size < 1:
        raise ContractError("Invalid batch size", f"batch_size must be >= 1, got {batch_size}")
    if full_batch:
        return full_gradient(client, w)
    check_param_vector(w, client.dim, "w")
    index = rng_stream.integers(0, len(client), size=batch_size)
    grads = client.objective.sample_gradients(w, client.features[index], client.labels[index])
    return grads.mean(axis=0)


def make_gradient_oracle(client: ClientDataset, batch_size: int, full_batch: bool = False) -> GradientOracle:
    """Bind a client's batch oracle as ``oracle(w, rng) -> gradient``."""

    def oracle(w: ParamVector, rng: np.random.Generator) -> ParamVector:
        return stochastic_gradient(client, w, batch_size, rng, full_batch=full_batch)

    return oracle


def global_objective(clients: Sequence[ClientDataset], w: ParamVector) -> float:
    """f(w) = (1/n) sum_i f_i(w)."""
    total = 0.0
    for client in clients:
        total += local_objective(client, w)
    return total / len(clients)


def global_gradient(clients: Sequence[ClientDataset], w: ParamVector) -> ParamVector:
    """grad f(w) = (1/n) sum_i grad f_i(w), accumulated in client order."""
    total = np.zeros_like(w, dtype=np.float64)
    for client in clients:
        total = total + full_gradient(client, w)
    return total / len(clients)


def _diversity_at(clients: Sequence[ClientDataset], w: ParamVector) -> float:
    local = [full_gradient(c, w) for c in clients]
    total = np.zeros_like(w, dtype=np.float64)
    for g in local:
        total = total + g
    mean = total / len(clients)
    return float(np.mean([np.sum((g - mean) ** 2) for g in local]))


def measure_diversity(clients: Sequence[ClientDataset], probe_points: Sequence[ParamVector]) -> float:
    """Largest (1/n) sum_i ||grad f_i(w) - grad f(w)||^2 over the probe points.

    This is a lower bound on the true population diversity gamma^2.
    """
    if not probe_points:
        raise ContractError("No probe points", "measure_diversity needs at least one probe point")
    return max(_diversity_at(clients, w) for w in probe_points)


def _variance_at(client: ClientDataset, w: ParamVector) -> float:
    check_param_vector(w, client.dim, "w")
    grads = client.objective.sample_gradients(w, client.features, client.labels)
    deviations = grads - grads.mean(axis=0)[None, :]
    return float(np.mean(np.sum(deviations * deviations, axis=1)))


def estimate_variance(client: ClientDataset, probe_points: Sequence[ParamVector]) -> float:
    """Largest exact per-sample gradient variance of a client over the probe points."""
    if not probe_points:
        raise ContractError("No probe points", "estimate_variance needs at least one probe point")
    return max(_variance_at(client, w) for w in probe_points)


def generate_probe_points(d: int, radius: float = 5.0, count: int = 100, seed: int = 0) -> List[ParamVector]:
    """Certificate set: the grid {-R, 0, R} on the leading coordinates plus seeded uniform points.

    Args:
        d: Problem dimension
        radius: Half-width R of the probe box [-R, R]^d
        count: Number of random probe points
        seed: Seed of the random points

    Returns:
        List of probe points
    """
    grid_dims = min(d, PROBE_GRID_DIMS)
    axes = np.meshgrid(*[np.array([-radius, 0.0, radius])] * grid_dims, indexing="ij")
    grid = np.stack([a.reshape(-1) for a in axes], axis=1)
    probes = []
    for row in grid:
        point = np.zeros(d, dtype=np.float64)
        point[:grid_dims] = row
        probes.append(point)

    rng = np.random.default_rng(seed)
    for row in rng.uniform(-radius, radius, size=(count, d)):
        probes.append(as_param_vector(row))
    return probes


def check_smoothness(
    clients: Sequence[ClientDataset],
    L: float,
    pairs: int = 10_000,
    radius: float = 5.0,
    seed: int = 0,
) -> float:
    """Worst excess ||grad f_i(w) - grad f_i(u)|| - L ||w - u|| over random pairs and all clients.

    A value <= 0 (up to rounding) certifies the smoothness constant on the sampled box.
    """
    rng = np.random.default_rng(seed)
    d = clients[0].dim
    worst = -np.inf
    for _ in range(pairs):
        w = rng.uniform(-radius, radius, size=d)
        u = rng.uniform(-radius, radius, size=d)
        distance = float(np.linalg.norm(w - u))
        for client in clients:
            gap = float(np.linalg.norm(full_gradient(client, w) - full_gradient(client, u)))
            worst = max(worst, gap - L * distance)
    return float(worst)


@dataclass(frozen=True)
class Problem:
    """A generated problem: client datasets, constants and the initial model."""
    spec: ProblemSpec
    clients: Tuple[ClientDataset, ...]
    constants: ProblemConstants
    initial_model: ParamVector

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def d(self) -> int:
        return self.spec.d

    def f0_minus_fstar(self) -> float:
        return max(0.0, global_objective(self.clients, self.initial_model) - self.constants.f_star)


def generate_problem(spec: ProblemSpec, batch_size: int = 1) -> Tuple[List[ClientDataset], ProblemConstants]:
    """Generate the client datasets and the constants of a problem spec.

    Datasets are drawn deterministically from ``spec.seed``. Quadratic mixture
    constants are exact; logistic constants are closed-form bounds with f* = 0.

    Args:
        spec: Problem definition
        batch_size: Batch size b used for sigma_hat_sq

    Returns:
        Tuple of (client datasets, problem constants)
    """
    if spec.n < 1 or spec.d < 1 or spec.scale <= 0:
        raise ConfigError("ProblemSpec", f"need n >= 1, d >= 1 and scale > 0, got {spec.n}, {spec.d}, {spec.scale}")
    rng = np.random.default_rng(spec.seed)

    if spec.family == Family.QUADRATIC_MIXTURE:
        clients = generate_quadratic_clients(spec, rng)
        L, sigma_sq, gamma_sq, minimizer = quadratic_constants(clients, spec.scale)
        f_star = global_objective(clients, minimizer)
    elif spec.family == Family.LOGISTIC_NONCONVEX:
        clients = generate_logistic_clients(spec, rng)
        L, sigma_sq, gamma_sq = logistic_constants(clients, spec.regularizer_weight)
        f_star = 0.0
    else:
        raise ConfigError("ProblemSpec.family", f"Unknown family {spec.family}")

    constants = ProblemConstants.from_variance(L, sigma_sq, gamma_sq, f_star, batch_size)
    logger.debug(f"Generated {spec.family.value} problem with n={spec.n}, d={spec.d}: {constants.to_dict()}")
    return clients, constants


def build_problem(spec: ProblemSpec, batch_size: int = 1) -> Problem:
    """Generate a problem and attach the initial model (zeros unless configured)."""
    clients, constants = generate_problem(spec, batch_size)
    if spec.initial_model is not None:
        initial = as_param_vector(spec.initial_model)
    else:
        initial = np.zeros(spec.d, dtype=np.float64)
    return Problem(spec=spec, clients=tuple(clients), constants=constants, initial_model=initial)


def certify_constants(problem: Problem, probe_points: Sequence[ParamVector]) -> dict:
    """Grid estimates of sigma^2 and gamma^2 next to the configured bounds."""
    measured_variance = max(estimate_variance(c, probe_points) for c in problem.clients)
    measured_diversity = measure_diversity(problem.clients, probe_points)
    report = {
        "sigma_sq_bound": problem.constants.sigma_sq,
        "sigma_sq_measured": measured_variance,
        "gamma_sq_bound": problem.constants.gamma_sq,
        "gamma_sq_measured": measured_diversity,
    }
    if measured_variance > problem.constants.sigma_sq + 1e-9 or measured_diversity > problem.constants.gamma_sq + 1e-9:
        logger.warning(f"Measured constants exceed the configured bounds: {report}")
    return report


__all__ = [
    "GradientOracle",
    "Problem",
    "build_problem",
    "certify_constants",
    "check_smoothness",
    "estimate_variance",
    "full_gradient",
    "generate_probe_points",
    "generate_problem",
    "global_gradient",
    "global_objective",
    "local_objective",
    "make_gradient_oracle",
    "measure_diversity",
    "stochastic_gradient",
]
