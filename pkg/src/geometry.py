"""Cluster geometry: configurations, pair distances, Grammians and angle cosines.

Pair quantities use the flat upper-triangular ordering of
``scipy.spatial.distance.pdist``: the pair (i, j) with i < j sits at
``pair_index(i, j, n_atoms)``. Atom indices are zero based.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigvalsh, lu_factor, lu_solve
from scipy.spatial.distance import pdist, squareform

from src.config import COLLINEAR_RATIO, DISTANCE_TOLERANCE, LOG_LEVEL, OMEGA_FLOOR, REALIZABILITY_TOLERANCE
from src.errors import (
    ConfigValidationError,
    DegenerateConfigurationError,
    NearCollinearError,
    UnrealizableDistancesError,
)

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)


def pair_index(i: int, j: int, n_atoms: int) -> int:
    """Position of the unordered pair (i, j) in the flat distance array."""
    if i == j:
        raise ConfigValidationError(f"Pair index needs two distinct atoms, got ({i}, {j})")
    if i > j:
        i, j = j, i
    if j >= n_atoms or i < 0:
        raise ConfigValidationError(f"Atom index out of range for N={n_atoms}: ({i}, {j})")
    return n_atoms * i - i * (i + 1) // 2 + (j - i - 1)


def pair_count(n_atoms: int) -> int:
    return n_atoms * (n_atoms - 1) // 2


@dataclass(frozen=True)
class ClusterSpec:
    """Particle count, dimension and inverse mass of a homogeneous cluster.

    Args:
        n_atoms: Number of atoms N (at least 2).
        dim: Spatial dimension D (at least 1).
        inv_mass: Dimensionless inverse mass 1/m.
        species_label: Free-form species tag, e.g. ``"Ar"``.
    """

    n_atoms: int
    dim: int
    inv_mass: float
    species_label: str = ""

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 2:
            raise ConfigValidationError(f"n_atoms must be an integer >= 2, got {self.n_atoms}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigValidationError(f"dim must be an integer >= 1, got {self.dim}")
        if not (math.isfinite(self.inv_mass) and self.inv_mass > 0):
            raise ConfigValidationError(f"inv_mass must be positive, got {self.inv_mass}")

    @property
    def mass(self) -> float:
        return 1.0 / self.inv_mass

    @property
    def inv_masses(self) -> np.ndarray:
        return np.full(self.n_atoms, float(self.inv_mass))

    @property
    def n_pairs(self) -> int:
        return pair_count(self.n_atoms)


@dataclass(frozen=True)
class Configuration:
    """Cartesian coordinates of one cluster geometry, shape (D, N), read-only."""

    coords: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[0] < 1 or coords.shape[1] < 1:
            raise ConfigValidationError(f"Configuration must be a D x N matrix, got shape {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ConfigValidationError("Configuration contains non-finite coordinates")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.coords.shape[1]

    def translated(self, shift) -> "Configuration":
        return Configuration(self.coords + np.asarray(shift, dtype=float)[:, None])

    def transformed(self, matrix) -> "Configuration":
        return Configuration(np.asarray(matrix, dtype=float) @ self.coords)

    def permuted(self, order) -> "Configuration":
        return Configuration(self.coords[:, list(order)])


@dataclass(frozen=True)
class DistanceSet:
    """All N(N-1)/2 pair distances in flat upper-triangular order."""

    r: np.ndarray
    n_atoms: int

    def __post_init__(self):
        r = np.array(self.r, dtype=float).ravel()
        if r.size != pair_count(self.n_atoms):
            raise ConfigValidationError(
                f"Expected {pair_count(self.n_atoms)} distances for N={self.n_atoms}, got {r.size}"
            )
        if not np.all(np.isfinite(r)):
            raise ConfigValidationError("Distance set contains non-finite values")
        if r.size and r.min() <= DISTANCE_TOLERANCE:
            flat = int(np.argmin(r))
            pair = tuple(int(k) for k in np.column_stack(np.triu_indices(self.n_atoms, 1))[flat])
            raise DegenerateConfigurationError(f"Atoms {pair} coincide (r={r[flat]:.3e})", pair=pair)
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @classmethod
    def from_matrix(cls, matrix) -> "DistanceSet":
        matrix = np.asarray(matrix, dtype=float)
        return cls(squareform(matrix, checks=False), matrix.shape[0])

    def distance(self, i: int, j: int) -> float:
        return float(self.r[pair_index(i, j, self.n_atoms)])

    def matrix(self) -> np.ndarray:
        return squareform(self.r)

    def permuted(self, order) -> "DistanceSet":
        full = self.matrix()
        order = list(order)
        return DistanceSet.from_matrix(full[np.ix_(order, order)])


def pair_distances(config: Configuration) -> DistanceSet:
    """Compute every pairwise Euclidean distance of a configuration."""
    if config.n_atoms < 2:
        raise ConfigValidationError("Pair distances need at least two atoms")
    return DistanceSet(pdist(config.coords.T), config.n_atoms)


def cos_angle(dists: DistanceSet, i: int, j: int, k: int) -> float:
    """Cosine of the angle at atom i between the bonds to j and k (law of cosines)."""
    if i in (j, k):
        raise ConfigValidationError(f"Pivot {i} must differ from {j} and {k}")
    if j == k:
        return 1.0
    r_ij = dists.distance(i, j)
    r_ik = dists.distance(i, k)
    r_jk = dists.distance(j, k)
    return (r_ij**2 + r_ik**2 - r_jk**2) / (2.0 * r_ij * r_ik)


def _others(n_atoms: int, pivot: int) -> list[int]:
    if not 0 <= pivot < n_atoms:
        raise ConfigValidationError(f"Pivot {pivot} out of range for N={n_atoms}")
    return [j for j in range(n_atoms) if j != pivot]


def pivot_distances(dists: DistanceSet, pivot: int) -> np.ndarray:
    """Distances from the pivot to every other atom, in increasing atom order."""
    full = dists.matrix()
    return full[pivot, _others(dists.n_atoms, pivot)]


def gram_matrix(dists: DistanceSet, pivot: int = 0) -> np.ndarray:
    """Grammian of the N-1 difference vectors seen from the pivot atom.

    Entry (j, k) is r_ij * g_{i;jk} * r_ik = (r_ij^2 + r_ik^2 - r_jk^2) / 2.
    """
    others = _others(dists.n_atoms, pivot)
    full = dists.matrix()
    radial = full[pivot, others] ** 2
    cross = full[np.ix_(others, others)] ** 2
    return 0.5 * (radial[:, None] + radial[None, :] - cross)


def coordinate_gram_matrix(config: Configuration, pivot: int = 0) -> np.ndarray:
    """Inner products of the difference vectors computed straight from coordinates."""
    others = _others(config.n_atoms, pivot)
    vectors = config.coords[:, others] - config.coords[:, [pivot]]
    return vectors.T @ vectors


def pivot_cosines(dists: DistanceSet, pivot: int = 0) -> np.ndarray:
    """Matrix of angle cosines g_{i;jk} at the pivot."""
    radial = pivot_distances(dists, pivot)
    return gram_matrix(dists, pivot) / np.outer(radial, radial)


def gram_det(dists: DistanceSet, pivot: int = 0) -> float:
    """Squared volume of the parallelepiped spanned by the difference vectors.

    Raises:
        UnrealizableDistancesError: If the Grammian has a clearly negative eigenvalue.
    """
    eigenvalues = eigvalsh(gram_matrix(dists, pivot))
    largest = eigenvalues.max()
    if eigenvalues.min() < -REALIZABILITY_TOLERANCE * largest:
        raise UnrealizableDistancesError(
            f"Distances not realizable: Grammian eigenvalue {eigenvalues.min():.3e} (largest {largest:.3e})"
        )
    return max(float(np.prod(eigenvalues)), 0.0)


def simplex_volume(dists: DistanceSet) -> float:
    """Volume of the (N-1)-simplex spanned by the atoms."""
    return math.sqrt(gram_det(dists)) / math.factorial(dists.n_atoms - 1)


def check_noncollinear(dists: DistanceSet, omega: float, pivot: int = 0) -> None:
    """Raise if omega is too small, absolutely or relative to the pivot bond lengths."""
    scale = float(np.prod(pivot_distances(dists, pivot) ** 2))
    if omega < OMEGA_FLOOR or omega / scale < COLLINEAR_RATIO:
        raise NearCollinearError(f"Near-collinear configuration: omega={omega:.3e}, ratio={omega / scale:.3e}", omega)


def grammian_cofactors(dists: DistanceSet, pivot: int = 0) -> tuple[np.ndarray, np.ndarray, float]:
    """Grammian, its cofactor matrix and its determinant from one LU factorization."""
    gram = gram_matrix(dists, pivot)
    lu, piv = lu_factor(gram, check_finite=False)
    swaps = np.count_nonzero(piv != np.arange(piv.size))
    det = float(np.prod(np.diag(lu))) * (-1.0) ** swaps
    if det <= 0.0:
        raise NearCollinearError(f"Grammian is singular at pivot {pivot} (det={det:.3e})", det)
    inverse = lu_solve((lu, piv), np.eye(gram.shape[0]), check_finite=False)
    return gram, det * inverse.T, det


def omega_pivot_gradient(dists: DistanceSet, pivot: int = 0) -> np.ndarray:
    """d omega / d r_{pivot,j} for every j != pivot via the cofactor formula."""
    _, cofactors, _ = grammian_cofactors(dists, pivot)
    return 2.0 * pivot_distances(dists, pivot) * cofactors.sum(axis=1)


def omega_gradient(dists: DistanceSet) -> np.ndarray:
    """Gradient of omega with respect to every pair distance, flat pair order."""
    n = dists.n_atoms
    gradient = np.empty(pair_count(n))
    for i in range(n - 1):
        pivot_gradient = omega_pivot_gradient(dists, i)
        for j in range(i + 1, n):
            gradient[pair_index(i, j, n)] = pivot_gradient[j - 1]
    return gradient


def cramer_identity_residual(dists: DistanceSet, pivot: int = 0) -> float:
    """Worst relative violation of sum_k g_jk d omega/d r_k = 2 omega / r_j."""
    _, _, omega = grammian_cofactors(dists, pivot)
    radial = pivot_distances(dists, pivot)
    lhs = pivot_cosines(dists, pivot) @ omega_pivot_gradient(dists, pivot)
    rhs = 2.0 * omega / radial
    return float(np.max(np.abs(lhs - rhs) / np.abs(rhs)))


@lru_cache(maxsize=None)
def pair_indices(n_atoms: int) -> tuple[np.ndarray, np.ndarray]:
    first, second = np.triu_indices(n_atoms, 1)
    first.setflags(write=False)
    second.setflags(write=False)
    return first, second


@lru_cache(maxsize=None)
def incidence_matrix(n_atoms: int) -> np.ndarray:
    """Signed pair/atom incidence: -1 at the lower atom of a pair, +1 at the upper one."""
    first, second = pair_indices(n_atoms)
    incidence = np.zeros((first.size, n_atoms))
    incidence[np.arange(first.size), first] = -1.0
    incidence[np.arange(first.size), second] = 1.0
    incidence.setflags(write=False)
    return incidence


def batch_pair_geometry(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit difference vectors (S, D, P) and distances (S, P) for a batch (S, D, N).

    Coincident atoms give zero distance and non-finite unit vectors; callers decide
    whether that is an error or a rejected move.
    """
    first, second = pair_indices(coords.shape[2])
    difference = coords[:, :, second] - coords[:, :, first]
    distances = np.sqrt(np.einsum("sdp,sdp->sp", difference, difference))
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = difference / distances[:, None, :]
    return unit, distances


def cartesian_derivatives(
    unit: np.ndarray, distances: np.ndarray, grad_r: np.ndarray, hess_r: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Chain rule from pair-distance derivatives to Cartesian ones.

    Args:
        unit: Unit difference vectors, shape (S, D, P).
        distances: Pair distances, shape (S, P).
        grad_r: First derivatives of K functions in the pair distances, shape (S, K, P).
        hess_r: Second derivatives, shape (S, K, P, P).

    Returns:
        Cartesian gradients (S, K, D, N) and per-atom Laplacians (S, K, N).
    """
    dim = unit.shape[1]
    n_atoms = int(round((1 + math.sqrt(1 + 8 * distances.shape[1])) / 2))
    incidence = incidence_matrix(n_atoms)
    gradient = np.einsum("sdp,skp,pn->skdn", unit, grad_r, incidence, optimize=True)
    cosines = np.einsum("sdp,sdq->spq", unit, unit)
    laplacian = (dim - 1) * np.einsum("skp,sp,pn->skn", grad_r, 1.0 / distances, np.abs(incidence), optimize=True)
    laplacian += np.einsum("skpq,spq,pn,qn->skn", hess_r, cosines, incidence, incidence, optimize=True)
    return gradient, laplacian
