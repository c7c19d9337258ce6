"""Hermite-function basis for one particle in an isotropic harmonic well.

With width alpha = sqrt(k m) the basis functions are exact eigenfunctions of
HarmonicPotential(k), which makes them the zero-variance reference case for the
spectral estimator and the projector.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import Bounds
from scipy.special import eval_hermite

from src.config import LOG_LEVEL
from src.errors import ConfigValidationError, ParameterRangeError
from src.wavefunction import BasisValues

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)

WIDTH_BOUNDS = (0.05, 20.0)


@dataclass(frozen=True)
class HermiteBasis:
    """Products of one-dimensional Hermite functions H_n(sqrt(alpha) x) exp(-alpha x^2 / 2).

    Args:
        orders: One tuple of Hermite orders per basis function, one order per axis.
        width: Gaussian width parameter alpha.
    """

    orders: tuple[tuple[int, ...], ...]
    width: float = 1.0

    def __post_init__(self):
        orders = tuple(tuple(int(n) for n in entry) for entry in self.orders)
        if not orders or len({len(entry) for entry in orders}) != 1:
            raise ConfigValidationError("Hermite orders must be non-empty and share one dimension")
        if any(n < 0 for entry in orders for n in entry):
            raise ConfigValidationError("Hermite orders must be non-negative")
        low, high = WIDTH_BOUNDS
        if not low <= self.width <= high:
            raise ParameterRangeError(f"width must lie in [{low}, {high}], got {self.width}", "width", self.width)
        object.__setattr__(self, "orders", orders)

    @classmethod
    def one_dimensional(cls, size: int, width: float = 1.0) -> "HermiteBasis":
        return cls(tuple((n,) for n in range(size)), width)

    @property
    def size(self) -> int:
        return len(self.orders)

    @property
    def dim(self) -> int:
        return len(self.orders[0])

    def exact_energies(self, stiffness: float = 1.0, inv_mass: float = 1.0) -> np.ndarray:
        """Eigenvalues of the basis functions when width == sqrt(stiffness / inv_mass)."""
        frequency = np.sqrt(stiffness * inv_mass)
        return np.array([frequency * (sum(entry) + 0.5 * len(entry)) for entry in self.orders])

    def evaluate(self, coords: np.ndarray, derivatives: bool = True, strict: bool = True) -> BasisValues:
        coords = np.asarray(coords, dtype=float)
        if coords.ndim != 3 or coords.shape[2] != 1 or coords.shape[1] != self.dim:
            raise ConfigValidationError(f"Expected coordinates of shape (S, {self.dim}, 1), got {coords.shape}")
        x = coords[:, :, 0]
        root = np.sqrt(self.width)
        y = root * x
        logs, signs, grads, laplacians = [], [], [], []
        with np.errstate(divide="ignore", invalid="ignore"):
            for entry in self.orders:
                order = np.array(entry)
                value = eval_hermite(order, y)
                logs.append(np.sum(np.log(np.abs(value)) - 0.5 * self.width * x**2, axis=1))
                signs.append(np.prod(np.sign(value), axis=1))
                if derivatives:
                    first = 2.0 * order * eval_hermite(np.maximum(order - 1, 0), y) / value
                    second = 4.0 * order * (order - 1) * eval_hermite(np.maximum(order - 2, 0), y) / value
                    grads.append(root * first - self.width * x)
                    laplacians.append(np.sum(self.width * (second - first**2) - self.width, axis=1))
        logabs = np.stack(logs, axis=1)
        sign = np.stack(signs, axis=1)
        if not derivatives:
            return BasisValues(logabs, sign)
        gradient = np.stack(grads, axis=1)[:, :, :, None]
        laplacian = np.stack(laplacians, axis=1)[:, :, None]
        return BasisValues(logabs, sign, gradient, laplacian)

    def nonlinear_vector(self) -> np.ndarray:
        return np.array([self.width])

    def with_nonlinear_vector(self, vector) -> "HermiteBasis":
        return HermiteBasis(self.orders, float(np.asarray(vector, dtype=float)[0]))

    def bounds(self) -> Bounds:
        return Bounds(np.array([WIDTH_BOUNDS[0]]), np.array([WIDTH_BOUNDS[1]]))

    def parameter_names(self) -> list[str]:
        return ["width"]

    def reordered(self, order) -> "HermiteBasis":
        return HermiteBasis(tuple(self.orders[k] for k in order), self.width)
