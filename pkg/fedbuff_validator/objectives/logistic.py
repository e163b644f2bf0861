"""
Non-convex logistic family.

l(w, (x, y)) = log(1 + exp(-y <x, w>)) + lam * sum_j w_j^2 / (1 + w_j^2)

The regularizer is smooth, bounded and non-convex, so the loss is bounded
below by 0 with a closed-form smoothness bound max ||x||^2 / 4 + 2 lam.
"""

import logging
from typing import List, Tuple

import numpy as np

from fedbuff_validator.config import Family, ProblemSpec
from fedbuff_validator.objectives.base_objective import ClientDataset, Objective, ParamVector

logger = logging.getLogger(__name__)

# Label noise added to the planted margins before taking the sign.
LABEL_NOISE = 0.5


def _sigmoid_neg(margins: np.ndarray) -> np.ndarray:
    """sigma(-m) = 1 / (1 + exp(m)), evaluated without overflow."""
    return np.exp(-np.logaddexp(0.0, margins))


class LogisticNonconvex(Objective):
    """Logistic loss with the bounded non-convex regularizer."""

    family = Family.LOGISTIC_NONCONVEX

    def __init__(self, regularizer_weight: float):
        self.regularizer_weight = float(regularizer_weight)

    def _regularizer(self, w: ParamVector) -> float:
        sq = w * w
        return self.regularizer_weight * float(np.sum(sq / (1.0 + sq)))

    def _regularizer_gradient(self, w: ParamVector) -> np.ndarray:
        sq = w * w
        return self.regularizer_weight * 2.0 * w / (1.0 + sq) ** 2

    def sample_losses(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        margins = labels * (features @ w)
        return np.logaddexp(0.0, -margins) + self._regularizer(w)

    def sample_gradients(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        margins = labels * (features @ w)
        weights = -labels * _sigmoid_neg(margins)
        return weights[:, None] * features + self._regularizer_gradient(w)[None, :]

    def hessian(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        margins = labels * (features @ w)
        s = _sigmoid_neg(margins)
        curvature = s * (1.0 - s)
        data_part = (features * curvature[:, None]).T @ features / features.shape[0]
        sq = w * w
        reg_second = self.regularizer_weight * (2.0 - 6.0 * sq) / (1.0 + sq) ** 3
        return data_part + np.diag(reg_second)


def generate_logistic_clients(spec: ProblemSpec, rng: np.random.Generator) -> List[ClientDataset]:
    """Draw client feature clouds shifted by heterogeneity_shift, labels from a shared planted model."""
    objective = LogisticNonconvex(spec.regularizer_weight)
    planted = rng.standard_normal(spec.d)

    clients = []
    for i in range(spec.n):
        shift = spec.heterogeneity_shift * rng.standard_normal(spec.d)
        features = shift[None, :] + spec.point_spread * rng.standard_normal((spec.points_per_client, spec.d))
        scores = features @ planted + LABEL_NOISE * rng.standard_normal(spec.points_per_client)
        labels = np.where(scores >= 0.0, 1.0, -1.0)
        clients.append(ClientDataset(client_id=i, features=features, labels=labels, objective=objective))
    return clients


def logistic_constants(clients: List[ClientDataset], regularizer_weight: float) -> Tuple[float, float, float]:
    """Closed-form (L, sigma_sq, gamma_sq) upper bounds.

    The regularizer is identical across samples and clients, so it cancels
    from both deviations; the logistic part of a per-sample gradient has norm
    at most ||x||.
    """
    sq_norms = [np.sum(c.features * c.features, axis=1) for c in clients]
    L = max(float(np.max(s)) for s in sq_norms) / 4.0 + 2.0 * regularizer_weight
    sigma_sq = max(float(np.mean(s)) for s in sq_norms)
    gamma_sq = float(np.mean([float(np.mean(np.sqrt(s))) ** 2 for s in sq_norms]))
    return L, sigma_sq, gamma_sq
