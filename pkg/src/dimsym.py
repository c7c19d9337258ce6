"""Exact dimensional transformation of the cluster Hamiltonian in distance coordinates.

With omega the Grammian determinant of the difference vectors, the similarity
transform chi = omega^((1-D)/4) removes every first-order term of the kinetic
operator and leaves the multiplicative term

    U_i = [(N-1)^2 - (N-D)^2] / 8 * sum_j (1/r_ij) d log(omega) / d r_ij,

which is symmetric about D = N. Hence the S-state spectra in D = N-1 and D = N+1
coincide and their eigenfunctions differ by a factor sqrt(omega).
"""

import logging
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from pydantic import BaseModel
from scipy.spatial.distance import pdist

from src.config import LOG_LEVEL, OMEGA_FLOOR
from src.errors import DomainError, IdentityViolationError, NearCollinearError, TransformInconsistencyError
from src.geometry import (
    ClusterSpec,
    Configuration,
    DistanceSet,
    check_noncollinear,
    coordinate_gram_matrix,
    cramer_identity_residual,
    gram_det,
    grammian_cofactors,
    pair_distances,
    pair_index,
    pivot_distances,
)
from src.hamiltonian import lj_pair, total_potential

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)

FORM_AGREEMENT = 1e-10


def amplitude(n_atoms: int, dim: float) -> float:
    """D-dependent amplitude [(N-1)^2 - (N-D)^2] / 8; exactly symmetric under D -> 2N - D."""
    return ((n_atoms - 1) ** 2 - (n_atoms - dim) ** 2) / 8.0


def is_physical_dimension(n_atoms: int, dim: float) -> bool:
    return dim >= n_atoms - 1


def chi(omega: float, dim: float, exponent: float | None = None) -> float:
    """omega^((1-D)/4); ``exponent`` overrides the power."""
    if not omega > 0:
        raise DomainError(f"chi needs omega > 0, got {omega}")
    power = (1.0 - dim) / 4.0 if exponent is None else exponent
    return omega**power


@dataclass(frozen=True)
class PivotGeometry:
    pivot: int
    radial: np.ndarray
    cosines: np.ndarray
    omega: float
    omega_gradient: np.ndarray


def pivot_geometry(dists: DistanceSet, pivot: int) -> PivotGeometry:
    """Bond lengths, angle cosines, omega and its cofactor gradient seen from one pivot."""
    gram, cofactors, omega = grammian_cofactors(dists, pivot)
    check_noncollinear(dists, omega, pivot)
    radial = pivot_distances(dists, pivot)
    return PivotGeometry(
        pivot=pivot,
        radial=radial,
        cosines=gram / np.outer(radial, radial),
        omega=omega,
        omega_gradient=2.0 * radial * cofactors.sum(axis=1),
    )


@dataclass(frozen=True)
class EffectivePotentialTerm:
    """U_i at one pivot, with both evaluations of the pivot sum."""

    pivot: int
    amplitude: float
    value: float
    log_form: float
    quadratic_form: float
    omega_gradient: np.ndarray


def effective_potential_term(dists: DistanceSet, pivot: int, dim: float) -> EffectivePotentialTerm:
    """Evaluate U_i through the log-derivative sum and the quadratic Grammian form.

    Raises:
        NearCollinearError: If omega is too small.
        IdentityViolationError: If the two forms disagree beyond 1e-10 relative.
    """
    geometry = pivot_geometry(dists, pivot)
    log_form = float(np.sum(geometry.omega_gradient / geometry.omega / geometry.radial))
    quadratic = float(geometry.omega_gradient @ geometry.cosines @ geometry.omega_gradient)
    quadratic_form = quadratic / (2.0 * geometry.omega**2)
    if abs(log_form - quadratic_form) > FORM_AGREEMENT * max(abs(log_form), abs(quadratic_form)):
        raise IdentityViolationError(
            f"U forms disagree at pivot {pivot}: {log_form!r} vs {quadratic_form!r}"
        )
    scale = amplitude(dists.n_atoms, dim)
    return EffectivePotentialTerm(pivot, scale, scale * quadratic_form, log_form, quadratic_form, geometry.omega_gradient)


def u_term(dists: DistanceSet, pivot: int, dim: float) -> float:
    return effective_potential_term(dists, pivot, dim).value


def effective_potential(dists: DistanceSet, spec: ClusterSpec, dim: float | None = None, inv_masses=None) -> float:
    """V - sum_i U_i / (2 m_i), the multiplicative part of the transformed Hamiltonian.

    Args:
        dists: Realizable, non-collinear distance set.
        spec: Cluster description (dimension and mass).
        dim: Real dimension overriding ``spec.dim``.
        inv_masses: Per-atom inverse masses overriding the equal-mass default.
    """
    dim = spec.dim if dim is None else dim
    inv_masses = spec.inv_masses if inv_masses is None else np.asarray(inv_masses, dtype=float)
    if not is_physical_dimension(dists.n_atoms, dim):
        logger.warning(f"D={dim} < N-1={dists.n_atoms - 1}: analytic continuation, not a physical spectrum")
    terms = [0.5 * inv_masses[i] * u_term(dists, i, dim) for i in range(dists.n_atoms)]
    return total_potential(dists) - math.fsum(terms)


class DistanceFunction(Protocol):
    def value(self, r: np.ndarray) -> float: ...

    def gradient(self, r: np.ndarray) -> np.ndarray: ...

    def hessian(self, r: np.ndarray) -> np.ndarray: ...


class ConstantFunction:
    def value(self, r):
        return 1.0

    def gradient(self, r):
        return np.zeros_like(r)

    def hessian(self, r):
        return np.zeros((r.size, r.size))


@dataclass(frozen=True)
class PairPowerSum:
    """phi = sum_pairs r^power."""

    power: float = 1.0

    def value(self, r):
        return float(np.sum(r**self.power))

    def gradient(self, r):
        return self.power * r ** (self.power - 1)

    def hessian(self, r):
        return np.diag(self.power * (self.power - 1) * r ** (self.power - 2))


@dataclass(frozen=True)
class PairExponential:
    """phi = exp(-rate * sum_pairs (r - center)^2)."""

    rate: float = 0.5
    center: float = 1.0

    def value(self, r):
        return float(np.exp(-self.rate * np.sum((r - self.center) ** 2)))

    def gradient(self, r):
        return -2.0 * self.rate * (r - self.center) * self.value(r)

    def hessian(self, r):
        slope = -2.0 * self.rate * (r - self.center)
        return self.value(r) * (np.outer(slope, slope) - 2.0 * self.rate * np.eye(r.size))


def verify_t_annihilation(
    dists: DistanceSet, dim: float, phi: DistanceFunction | None = None, exponent: float | None = None
) -> float:
    """Worst relative size of the first-order coefficients left by chi.

    For each pivot i and partner j the coefficient sum_k g_{i;jk} chi^-1 d chi/d r_ik + a_{i;j}/2
    with a_{i;j} = (D-1)/r_ij must vanish; residuals are relative to max(|a|/2, 1/r). With
    ``phi`` the coefficients are also applied to its gradient.
    """
    power = (1.0 - dim) / 4.0 if exponent is None else exponent
    r = dists.r
    gradient = None if phi is None else phi.gradient(r)
    worst = 0.0
    for pivot in range(dists.n_atoms):
        geometry = pivot_geometry(dists, pivot)
        log_chi_gradient = power * geometry.omega_gradient / geometry.omega
        half_a = 0.5 * (dim - 1.0) / geometry.radial
        coefficient = geometry.cosines @ log_chi_gradient + half_a
        scale = np.maximum(np.abs(half_a), 1.0 / geometry.radial)
        worst = max(worst, float(np.max(np.abs(coefficient) / scale)))
        if gradient is not None:
            partners = [j for j in range(dists.n_atoms) if j != pivot]
            slopes = gradient[[pair_index(pivot, j, dists.n_atoms) for j in partners]]
            reference = float(np.sum(np.abs(scale * slopes)))
            if reference > 0:
                worst = max(worst, abs(float(coefficient @ slopes)) / reference)
    return worst


@dataclass(frozen=True)
class ConsistencyReport:
    cartesian: float
    distance: float
    discrepancy: float
    step: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.discrepancy <= self.tolerance


def distance_hamiltonian(dists: DistanceSet, phi: DistanceFunction, dim: float, inv_masses) -> float:
    """V phi - sum_i (1/2m_i)(S_i phi + U_i phi) evaluated in distance coordinates."""
    r = dists.r
    value = phi.value(r)
    hessian = phi.hessian(r)
    n = dists.n_atoms
    kinetic = []
    for pivot in range(n):
        geometry = pivot_geometry(dists, pivot)
        rows = [pair_index(pivot, j, n) for j in range(n) if j != pivot]
        second_order = float(np.sum(geometry.cosines * hessian[np.ix_(rows, rows)]))
        term = effective_potential_term(dists, pivot, dim)
        kinetic.append(0.5 * inv_masses[pivot] * (second_order + term.value * value))
    return total_potential(dists) * value - math.fsum(kinetic)


def _transformed_value(coords: np.ndarray, phi: DistanceFunction, dim: float) -> float:
    omega = float(np.linalg.det(coordinate_gram_matrix(Configuration(coords))))
    return chi(omega, dim) * phi.value(pdist(coords.T))


def cartesian_hamiltonian(config: Configuration, phi: DistanceFunction, inv_masses, step: float) -> float:
    """chi^-1 H (chi phi) with a fourth-order central stencil for every Cartesian Laplacian."""
    coords = np.array(config.coords, dtype=float)
    dim = config.dim
    center = _transformed_value(coords, phi, dim)
    kinetic = []
    for atom in range(config.n_atoms):
        laplacian = 0.0
        for axis in range(dim):
            samples = {}
            for offset in (-2, -1, 1, 2):
                shifted = coords.copy()
                shifted[axis, atom] += offset * step
                samples[offset] = _transformed_value(shifted, phi, dim)
            laplacian += (
                -samples[-2] + 16.0 * samples[-1] - 30.0 * center + 16.0 * samples[1] - samples[2]
            ) / (12.0 * step**2)
        kinetic.append(-0.5 * inv_masses[atom] * laplacian)
    potential = math.fsum(lj_pair(pdist(coords.T)).tolist())
    return potential * phi.value(pdist(coords.T)) + math.fsum(kinetic) / center


def verify_transform_consistency(
    config: Configuration,
    phi: DistanceFunction,
    spec: ClusterSpec,
    step: float = 1e-3,
    tolerance: float = 1e-6,
) -> ConsistencyReport:
    """Compare the Cartesian Hamiltonian applied to chi*phi with the distance-coordinate form.

    The Cartesian side is evaluated at ``step`` and ``step/2``; the better of the two is
    reported. If neither meets the tolerance and halving the step does not help, the
    disagreement is raised.
    """
    if config.dim < config.n_atoms - 1:
        raise DomainError(f"Transform needs D >= N-1, got D={config.dim}, N={config.n_atoms}")
    dists = pair_distances(config)
    inv_masses = spec.inv_masses
    distance = distance_hamiltonian(dists, phi, config.dim, inv_masses)
    scale = max(1.0, abs(distance))
    coarse = cartesian_hamiltonian(config, phi, inv_masses, step)
    fine = cartesian_hamiltonian(config, phi, inv_masses, step / 2.0)
    coarse_gap = abs(coarse - distance) / scale
    fine_gap = abs(fine - distance) / scale
    best, best_step, gap = (fine, step / 2.0, fine_gap) if fine_gap <= coarse_gap else (coarse, step, coarse_gap)
    if gap > tolerance and fine_gap >= coarse_gap:
        raise TransformInconsistencyError(
            f"Cartesian {best!r} vs distance {distance!r}: gap {gap:.3e} does not shrink with the step",
            best,
            distance,
        )
    return ConsistencyReport(best, distance, gap, best_step, tolerance)


def degeneracy_map(psi_low, dists, inverse: bool = False) -> np.ndarray:
    """Map eigenfunction values from D = N-1 to D = N+1 (divide by sqrt(omega)); ``inverse`` multiplies.

    Raises:
        NearCollinearError: At configurations with omega = 0, where the map is singular.
    """
    values = np.asarray(psi_low, dtype=float)
    omegas = np.array([gram_det(d) for d in dists])
    if np.any(omegas <= OMEGA_FLOOR):
        bad = int(np.argmin(omegas))
        raise NearCollinearError(f"Degeneracy map singular at configuration {bad} (omega={omegas[bad]:.3e})", omegas[bad])
    factor = np.sqrt(omegas)
    return values * factor if inverse else values / factor


class IdentityCheck(BaseModel):
    name: str
    n_atoms: int
    configurations: int
    worst_residual: float
    tolerance: float
    passed: bool


class IdentityReport(BaseModel):
    """Outcome of the randomized identity suite."""

    seed: int
    checks: list[IdentityCheck]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def random_realizable_distances(rng: np.random.Generator, n_atoms: int, min_ratio: float = 1e-3) -> DistanceSet:
    """Distances of a random, well-shaped configuration in D = N-1..N+2."""
    while True:
        dim = n_atoms - 1 + int(rng.integers(0, 4))
        coords = rng.normal(size=(dim, n_atoms))
        r = pdist(coords.T)
        if r.min() < 0.3:
            continue
        dists = DistanceSet(r, n_atoms)
        if gram_det(dists) / np.prod(pivot_distances(dists, 0) ** 2) >= min_ratio:
            return dists


def dyadic_dimension(rng: np.random.Generator, n_atoms: int) -> float:
    """Real D in [N-1, N+3] on a 2^-16 grid, so that 2N - D is exact."""
    return (n_atoms - 1) + int(rng.integers(0, 4 * 2**16 + 1)) / 2**16


def run_identity_suite(n_configs: int = 1000, n_values=(3, 4, 5), seed: int = 0, tolerance: float = 1e-10) -> IdentityReport:
    """Check the exact identities on random realizable distance sets.

    Checks: Cramer identity, T annihilation, agreement of the two U forms,
    amplitude symmetry (exact zero) and pivot independence of omega.
    """
    rng = np.random.default_rng(seed)
    checks = []
    for n_atoms in n_values:
        worst = {"cramer": 0.0, "t_annihilation": 0.0, "u_forms": 0.0, "amplitude_symmetry": 0.0, "pivot_independence": 0.0}
        for _ in range(n_configs):
            dists = random_realizable_distances(rng, n_atoms)
            dim = dyadic_dimension(rng, n_atoms)
            omegas = [gram_det(dists, pivot) for pivot in range(n_atoms)]
            worst["pivot_independence"] = max(worst["pivot_independence"], (max(omegas) - min(omegas)) / max(omegas))
            worst["cramer"] = max(worst["cramer"], max(cramer_identity_residual(dists, p) for p in range(n_atoms)))
            worst["t_annihilation"] = max(worst["t_annihilation"], verify_t_annihilation(dists, dim, PairPowerSum(1.0)))
            for pivot in range(n_atoms):
                term = effective_potential_term(dists, pivot, dim)
                gap = abs(term.log_form - term.quadratic_form) / abs(term.quadratic_form)
                worst["u_forms"] = max(worst["u_forms"], gap)
            worst["amplitude_symmetry"] = max(
                worst["amplitude_symmetry"], abs(amplitude(n_atoms, dim) - amplitude(n_atoms, 2 * n_atoms - dim))
            )
        for name, residual in worst.items():
            limit = 0.0 if name == "amplitude_symmetry" else tolerance
            checks.append(
                IdentityCheck(
                    name=name,
                    n_atoms=n_atoms,
                    configurations=n_configs,
                    worst_residual=residual,
                    tolerance=limit,
                    passed=residual <= limit,
                )
            )
            logger.info(f"N={n_atoms} {name}: worst residual {residual:.3e} ({'pass' if residual <= limit else 'FAIL'})")
    return IdentityReport(seed=seed, checks=checks)
