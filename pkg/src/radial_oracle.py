"""Two-body radial-grid oracle for S-state levels in any dimension.

For N = 2 the S-state problem reduces to the radial equation

    -m^-1 u'' + [V(r) + m^-1 (D-1)(D-3) / (4 r^2)] u = E u,

with psi = u r^((1-D)/2). It is diagonalized on a uniform grid with the
Colbert-Miller sinc-DVR kinetic matrix. The centrifugal term vanishes for both
D = 1 and D = 3, so those spectra agree to the precision of the solver.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh

from src.config import LOG_LEVEL
from src.errors import ConfigValidationError, NodeProximityError
from src.geometry import batch_pair_geometry, cartesian_derivatives
from src.hamiltonian import lj_pair
from src.wavefunction import WavefunctionValues

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)

DEFAULT_GRID = (0.5, 12.0)
DEFAULT_POINTS = 4000


@dataclass(frozen=True)
class RadialSpectrum:
    """Lowest levels of the radial problem and their grid functions u(r)."""

    energies: np.ndarray
    grid: np.ndarray
    vectors: np.ndarray
    inv_mass: float
    dim: float

    def wavefunction(self, level: int = 0) -> "RadialWavefunction":
        return RadialWavefunction.from_grid(self.grid, self.vectors[:, level], self.dim, self.energies[level])


def kinetic_matrix(n_points: int, spacing: float, inv_mass: float) -> np.ndarray:
    """Colbert-Miller matrix of -m^-1 d^2/dr^2 on a uniform grid."""
    offsets = np.arange(n_points)[:, None] - np.arange(n_points)[None, :]
    with np.errstate(divide="ignore"):
        matrix = 2.0 * (-1.0) ** offsets / offsets.astype(float) ** 2
    np.fill_diagonal(matrix, np.pi**2 / 3.0)
    return inv_mass / spacing**2 * matrix


def radial_levels(
    inv_mass: float,
    dim: float,
    n_levels: int = 1,
    r_range: tuple[float, float] = DEFAULT_GRID,
    n_points: int = DEFAULT_POINTS,
) -> RadialSpectrum:
    """Diagonalize the two-body radial Hamiltonian.

    Args:
        inv_mass: Inverse atomic mass 1/m (the reduced mass is m/2).
        dim: Spatial dimension, any real D >= 1.
        n_levels: Number of lowest levels to return.
        r_range: Open interval of the grid; u vanishes at both ends.
        n_points: Number of interior grid points.

    Returns:
        RadialSpectrum with ascending energies and normalized grid vectors.
    """
    low, high = r_range
    if not 0 < low < high:
        raise ConfigValidationError(f"Radial grid needs 0 < r_min < r_max, got {r_range}")
    if n_levels < 1 or n_levels > n_points:
        raise ConfigValidationError(f"n_levels must lie in [1, {n_points}], got {n_levels}")
    if inv_mass <= 0 or dim < 1:
        raise ConfigValidationError(f"Need inv_mass > 0 and D >= 1, got {inv_mass}, {dim}")
    spacing = (high - low) / (n_points + 1)
    grid = low + spacing * np.arange(1, n_points + 1)
    centrifugal = inv_mass * (dim - 1.0) * (dim - 3.0) / (4.0 * grid**2)
    matrix = kinetic_matrix(n_points, spacing, inv_mass)
    matrix[np.diag_indices(n_points)] += lj_pair(grid) + centrifugal
    energies, vectors = eigh(matrix, subset_by_index=[0, n_levels - 1])
    vectors = vectors / np.sqrt(spacing)
    logger.info(f"Radial oracle m^-1={inv_mass}, D={dim}: E0={energies[0]:.10f} on {n_points} points")
    return RadialSpectrum(energies, grid, vectors, inv_mass, dim)


@dataclass(frozen=True)
class RadialWavefunction:
    """Spline of a radial eigenfunction, usable wherever a two-atom wavefunction is evaluated."""

    spline: CubicSpline
    dim: float
    energy: float
    r_range: tuple[float, float]

    @classmethod
    def from_grid(cls, grid: np.ndarray, u: np.ndarray, dim: float, energy: float) -> "RadialWavefunction":
        spacing = grid[1] - grid[0]
        r = np.concatenate(([grid[0] - spacing], grid, [grid[-1] + spacing]))
        values = np.concatenate(([0.0], u, [0.0]))
        if values[np.argmax(np.abs(values))] < 0:
            values = -values
        return cls(CubicSpline(r, values), dim, float(energy), (float(r[0]), float(r[-1])))

    def evaluate(self, coords: np.ndarray, derivatives: bool = True, strict: bool = True) -> WavefunctionValues:
        coords = np.asarray(coords, dtype=float)
        if coords.ndim != 3 or coords.shape[2] != 2:
            raise ConfigValidationError(f"Radial wavefunction needs (S, D, 2) coordinates, got {coords.shape}")
        unit, distances = batch_pair_geometry(coords)
        r = distances[:, 0]
        low, high = self.r_range
        u = self.spline(r)
        if strict and (np.any(r <= low) or np.any(r >= high) or np.any(u == 0)):
            raise NodeProximityError(f"Radial wavefunction evaluated outside its grid or at a node (r={r})")
        power = 0.5 * (self.dim - 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            logabs = np.log(np.abs(u)) - power * np.log(r)
            if not derivatives:
                return WavefunctionValues(logabs, np.sign(u))
            ratio = self.spline(r, 1) / u
            first = ratio - power / r
            second = self.spline(r, 2) / u - ratio**2 + power / r**2
        gradient, laplacian = cartesian_derivatives(unit, distances, first[:, None, None], second[:, None, None, None])
        return WavefunctionValues(logabs, np.sign(u), gradient[:, 0], laplacian[:, 0])
