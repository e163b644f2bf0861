"""
Base types shared by the synthetic objective families.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import numpy.typing as npt

from fedbuff_validator.config import Family
from fedbuff_validator.exceptions import ContractError, NonFiniteError

ParamVector = npt.NDArray[np.float64]


def as_param_vector(values: Sequence[float]) -> ParamVector:
    """Copy values into a fresh float64 parameter vector."""
    return np.array(values, dtype=np.float64, copy=True).reshape(-1)


def check_param_vector(w: np.ndarray, d: int, what: str = "parameter vector") -> None:
    """Check the dimension and finiteness of a parameter vector.

    Raises:
        ContractError: if the shape is not (d,)
        NonFiniteError: if any entry is NaN or Inf
    """
    if w.ndim != 1 or w.shape[0] != d:
        raise ContractError("Dimension mismatch", f"{what} has shape {w.shape}, expected ({d},)")
    if not np.all(np.isfinite(w)):
        raise NonFiniteError("Non-finite values", f"{what} contains NaN or Inf")


class Objective(ABC):
    """Per-sample loss family l(w, xi) with analytic gradients and Hessians."""

    family: Family

    @abstractmethod
    def sample_losses(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Losses of each row of ``features``, shape (m,)."""

    @abstractmethod
    def sample_gradients(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Gradients of each row of ``features``, shape (m, d)."""

    @abstractmethod
    def hessian(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Hessian of the mean loss over the rows, shape (d, d)."""


@dataclass(frozen=True)
class ClientDataset:
    """A client's finite dataset; sampling from it realizes the empirical distribution p_i."""
    client_id: int
    features: np.ndarray
    labels: np.ndarray
    objective: Objective

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ContractError(
                "Empty dataset",
                f"client {self.client_id} needs a non-empty (m, d) feature matrix, got {self.features.shape}",
            )
        if self.labels.shape != (self.features.shape[0],):
            raise ContractError(
                "Dimension mismatch",
                f"client {self.client_id} has {self.features.shape[0]} points but labels of shape {self.labels.shape}",
            )
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class ProblemConstants:
    """Constants consumed by the convergence bound."""
    L: float
    sigma_sq: float
    sigma_hat_sq: float
    gamma_sq: float
    f_star: float
    batch_size_b: int

    def __post_init__(self) -> None:
        if self.batch_size_b < 1:
            raise ContractError("ProblemConstants.batch_size_b", f"must be >= 1, got {self.batch_size_b}")
        for name in ("L", "sigma_sq", "sigma_hat_sq", "gamma_sq"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ContractError(f"ProblemConstants.{name}", f"must be finite and nonnegative, got {value}")
        if not math.isfinite(self.f_star):
            raise ContractError("ProblemConstants.f_star", f"must be finite, got {self.f_star}")

    @classmethod
    def from_variance(
        cls, L: float, sigma_sq: float, gamma_sq: float, f_star: float, batch_size_b: int
    ) -> "ProblemConstants":
        """Build constants with sigma_hat_sq = sigma_sq / b."""
        return cls(
            L=float(L),
            sigma_sq=float(sigma_sq),
            sigma_hat_sq=float(sigma_sq) / batch_size_b,
            gamma_sq=float(gamma_sq),
            f_star=float(f_star),
            batch_size_b=int(batch_size_b),
        )

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "sigma_sq": self.sigma_sq,
            "sigma_hat_sq": self.sigma_hat_sq,
            "gamma_sq": self.gamma_sq,
            "f_star": self.f_star,
            "batch_size_b": self.batch_size_b,
        }
