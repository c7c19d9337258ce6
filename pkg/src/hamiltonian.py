"""Dimensionless Lennard-Jones Hamiltonian, test potentials and local energies."""

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.optimize import minimize

from src.config import LOG_LEVEL, SPECIES_ALIASES, SPECIES_INVERSE_MASS
from src.errors import ConfigValidationError, DomainError
from src.geometry import ClusterSpec, Configuration, DistanceSet, batch_pair_geometry, incidence_matrix

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)


class SpeciesTable:
    """Inverse masses of the rare-gas species, keyed by label."""

    def __init__(self, entries: dict[str, float] | None = None):
        self.entries = dict(SPECIES_INVERSE_MASS if entries is None else entries)

    def resolve(self, label: str) -> str:
        canonical = SPECIES_ALIASES.get(label, label)
        if canonical not in self.entries:
            raise ConfigValidationError(f"Unknown species '{label}'. Known: {', '.join(self.labels())}")
        return canonical

    def inverse_mass(self, label: str) -> float:
        return self.entries[self.resolve(label)]

    def cluster(self, label: str, n_atoms: int, dim: int) -> ClusterSpec:
        canonical = self.resolve(label)
        return ClusterSpec(n_atoms=n_atoms, dim=dim, inv_mass=self.entries[canonical], species_label=canonical)

    def labels(self) -> list[str]:
        return list(self.entries)


def lj_pair(r):
    """Dimensionless pair potential r^-12 - 2 r^-6 (scalar or array)."""
    values = np.asarray(r, dtype=float)
    if not np.all(values > 0):
        raise DomainError(f"Pair distance must be positive, got min {np.min(values)}")
    inv6 = values**-6
    energy = inv6 * inv6 - 2.0 * inv6
    return float(energy) if energy.ndim == 0 else energy


def lj_pair_derivative(r):
    values = np.asarray(r, dtype=float)
    if not np.all(values > 0):
        raise DomainError(f"Pair distance must be positive, got min {np.min(values)}")
    derivative = 12.0 * (values**-7 - values**-13)
    return float(derivative) if derivative.ndim == 0 else derivative


def total_potential(dists: DistanceSet) -> float:
    """Sum of pair potentials over all unordered pairs (exactly rounded)."""
    return math.fsum(lj_pair(dists.r).tolist())


def compensated_sum(values: np.ndarray) -> np.ndarray:
    """Neumaier summation along the last axis."""
    values = np.asarray(values, dtype=float)
    total = np.zeros(values.shape[:-1])
    compensation = np.zeros_like(total)
    for column in np.moveaxis(values, -1, 0):
        running = total + column
        big_total = np.abs(total) >= np.abs(column)
        compensation += np.where(big_total, (total - running) + column, (column - running) + total)
        total = running
    return total + compensation


class Potential(Protocol):
    def energy(self, coords: np.ndarray) -> np.ndarray: ...


class LennardJonesPotential:
    """Pair-additive Lennard-Jones potential on batches of shape (S, D, N)."""

    def energy(self, coords: np.ndarray) -> np.ndarray:
        _, distances = batch_pair_geometry(coords)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            inv6 = distances**-6.0
            pair = inv6 * inv6 - 2.0 * inv6
        return compensated_sum(pair)

    def gradient(self, coords: np.ndarray) -> np.ndarray:
        unit, distances = batch_pair_geometry(coords)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            slope = 12.0 * (distances**-7.0 - distances**-13.0)
        return np.einsum("sdp,sp,pn->sdn", unit, slope, incidence_matrix(coords.shape[2]))


@dataclass(frozen=True)
class HarmonicPotential:
    """Isotropic harmonic well sum_i k |r_i|^2 / 2; exactly solvable test case."""

    stiffness: float = 1.0

    def energy(self, coords: np.ndarray) -> np.ndarray:
        squares = (0.5 * self.stiffness * coords**2).reshape(coords.shape[0], -1)
        return compensated_sum(squares)

    def gradient(self, coords: np.ndarray) -> np.ndarray:
        return self.stiffness * coords


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Kinetic energy with per-particle masses plus a pluggable potential.

    Args:
        inv_masses: Inverse mass of every atom, shape (N,).
        potential: Object with an ``energy(coords)`` method on (S, D, N) batches.
    """

    inv_masses: np.ndarray
    potential: Potential = field(default_factory=LennardJonesPotential)

    def __post_init__(self):
        inv_masses = np.array(self.inv_masses, dtype=float).ravel()
        if inv_masses.size < 1 or not np.all(inv_masses > 0):
            raise ConfigValidationError("Inverse masses must be positive")
        inv_masses.setflags(write=False)
        object.__setattr__(self, "inv_masses", inv_masses)

    @classmethod
    def from_spec(cls, spec: ClusterSpec, potential: Potential | None = None) -> "Hamiltonian":
        return cls(spec.inv_masses, potential if potential is not None else LennardJonesPotential())

    @property
    def n_atoms(self) -> int:
        return self.inv_masses.size

    def potential_energy(self, coords: np.ndarray) -> np.ndarray:
        return self.potential.energy(coords)

    def local_energies(self, coords: np.ndarray, values) -> np.ndarray:
        """V - sum_i (1/2m_i)(lap_i log psi + |grad_i log psi|^2) for every sample.

        ``values`` carries ``gradient`` (S, ..., D, N) and ``laplacian`` (S, ..., N);
        extra middle axes (one per basis function) are kept in the result.
        """
        per_atom = self.inv_masses * (values.laplacian + np.sum(values.gradient**2, axis=-2))
        kinetic = -0.5 * compensated_sum(per_atom)
        potential = self.potential_energy(coords)
        return potential.reshape(potential.shape + (1,) * (kinetic.ndim - 1)) + kinetic

    def local_energy(self, psi, config: Configuration) -> float:
        """Local energy of one configuration; node proximity raises."""
        coords = config.coords[None, :, :]
        values = psi.evaluate(coords, derivatives=True, strict=True)
        return float(self.local_energies(coords, values)[0])


def local_energy(spec: ClusterSpec, psi, config: Configuration, potential: Potential | None = None) -> float:
    """psi^-1 H psi at one configuration for an equal-mass cluster."""
    return Hamiltonian.from_spec(spec, potential).local_energy(psi, config)


@dataclass(frozen=True)
class ClassicalMinimum:
    energy: float
    configuration: Configuration
    n_starts: int


def _potential_and_gradient(flat: np.ndarray, dim: int, n_atoms: int) -> tuple[float, np.ndarray]:
    coords = flat.reshape(1, dim, n_atoms)
    unit, distances = batch_pair_geometry(coords)
    try:
        energy = math.fsum(lj_pair(distances[0]).tolist())
        slope = lj_pair_derivative(distances[0])
    except DomainError:
        return 1e12, np.zeros_like(flat)
    gradient = np.einsum("dp,p,pn->dn", unit[0], slope, incidence_matrix(n_atoms))
    return energy, gradient.ravel()


def classical_minimum(n_atoms: int, dim: int, n_starts: int = 32, seed: int = 0) -> ClassicalMinimum:
    """Lowest total potential found by multistart L-BFGS-B with the analytic gradient.

    Args:
        n_atoms: Number of atoms.
        dim: Spatial dimension.
        n_starts: Number of random starting geometries.
        seed: Seed for the starting geometries.

    Returns:
        The best local minimum and its geometry.
    """
    if n_atoms < 2 or dim < 1:
        raise ConfigValidationError(f"Need n_atoms >= 2 and dim >= 1, got N={n_atoms}, D={dim}")
    rng = np.random.default_rng(seed)
    best_energy, best_coords = math.inf, None
    for start in range(n_starts):
        coords = rng.uniform(-1.0, 1.0, size=(dim, n_atoms))
        _, distances = batch_pair_geometry(coords[None])
        coords /= distances.min()
        result = minimize(
            _potential_and_gradient,
            coords.ravel(),
            args=(dim, n_atoms),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 2000, "gtol": 1e-10},
        )
        logger.debug(f"Start {start}: E={result.fun:.8f} ({result.message})")
        if result.fun < best_energy:
            best_energy, best_coords = float(result.fun), result.x.reshape(dim, n_atoms)
    logger.info(f"Classical minimum for N={n_atoms}, D={dim}: {best_energy:.6f}")
    return ClassicalMinimum(best_energy, Configuration(best_coords), n_starts)
