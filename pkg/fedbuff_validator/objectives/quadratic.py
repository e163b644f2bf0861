"""
Quadratic mixture family: l(w, x) = (scale/2) * ||w - x||^2.

Each client owns a cloud of per-point centers x; its local objective is
f_i(w) = (scale/2) * mean ||w - x||^2 with gradient scale * (w - c_i), where
c_i is the client's mean point. Every constant is exact.
"""

import logging
from typing import List, Tuple

import numpy as np

from fedbuff_validator.config import Family, ProblemSpec
from fedbuff_validator.objectives.base_objective import ClientDataset, Objective, ParamVector

logger = logging.getLogger(__name__)


class QuadraticMixture(Objective):
    """Isotropic quadratic per-sample loss."""

    family = Family.QUADRATIC_MIXTURE

    def __init__(self, scale: float):
        self.scale = float(scale)

    def sample_losses(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        diff = w[None, :] - features
        return 0.5 * self.scale * np.sum(diff * diff, axis=1)

    def sample_gradients(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return self.scale * (w[None, :] - features)

    def hessian(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return self.scale * np.eye(w.shape[0])


def generate_quadratic_clients(spec: ProblemSpec, rng: np.random.Generator) -> List[ClientDataset]:
    """Draw client point clouds around centers placed by heterogeneity_shift.

    Explicit ``spec.centers`` override the random placement. With
    ``point_spread == 0`` every point of a client sits on its center.
    """
    objective = QuadraticMixture(spec.scale)
    if spec.centers is not None:
        centers = np.asarray(spec.centers, dtype=np.float64)
    else:
        centers = spec.heterogeneity_shift * rng.standard_normal((spec.n, spec.d))

    clients = []
    for i in range(spec.n):
        noise = rng.standard_normal((spec.points_per_client, spec.d))
        if spec.point_spread > 0 and spec.points_per_client > 1:
            noise = noise - noise.mean(axis=0)
        points = centers[i][None, :] + spec.point_spread * noise
        clients.append(
            ClientDataset(
                client_id=i,
                features=points,
                labels=np.zeros(spec.points_per_client, dtype=np.float64),
                objective=objective,
            )
        )
    return clients


def quadratic_constants(clients: List[ClientDataset], scale: float) -> Tuple[float, float, float, ParamVector]:
    """Exact (L, sigma_sq, gamma_sq, global minimizer) of a quadratic mixture.

    sigma_sq and gamma_sq do not depend on w for this family.
    """
    client_means = np.stack([c.features.mean(axis=0) for c in clients])
    grand_mean = client_means.mean(axis=0)

    sigma_sq = max(
        float(np.mean(np.sum((c.features - m[None, :]) ** 2, axis=1)))
        for c, m in zip(clients, client_means)
    )
    gamma_sq = float(np.mean(np.sum((client_means - grand_mean[None, :]) ** 2, axis=1)))

    logger.debug(f"Quadratic mixture: L={scale}, per-point dispersion={sigma_sq}, center dispersion={gamma_sq}")
    return float(scale), scale * scale * sigma_sq, scale * scale * gamma_sq, grand_mean
