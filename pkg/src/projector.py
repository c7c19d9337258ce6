"""Correlation-function Monte Carlo: project the basis with exp(-tH) along one walk.

Walkers follow importance-sampled drift-diffusion under psi_g with a
Metropolis-Hastings correction and carry pure (unbranched) weights
exp(-tau (E_L,g - E_ref)). Every matrix element

    N_ij(t) = <beta_i exp(-tH) beta_j>,   H_ij(t) = <beta_i exp(-tH) H beta_j>

is estimated on the same paths by pairing the reweighted value of beta_i at one
step with that of beta_j a lag t/tau later, weighted by the accumulated factor
in between.
"""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from pydantic import BaseModel
from scipy.linalg import eigvalsh

from src.config import (
    BREAKDOWN_TOLERANCE,
    JACKKNIFE_GROUPS,
    LOG_LEVEL,
    SVD_THRESHOLD,
    WEIGHT_DYNAMIC_RANGE,
)
from src.errors import ConfigValidationError, InsufficientProjectionError, NumericalError, TimeStepError
from src.sampler import walker_streams
from src.spectral import jackknife_levels, matrix_threshold
from src.wavefunction import GuidingFunction

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class _WalkState:
    reweighted: np.ndarray
    projected: np.ndarray
    guide_energy: np.ndarray
    drift: np.ndarray
    log_guide: np.ndarray
    valid: np.ndarray


def _evaluate_state(basis, guiding, hamiltonian, coords: np.ndarray) -> _WalkState:
    values = basis.evaluate(coords, derivatives=True, strict=False)
    if isinstance(guiding, GuidingFunction) and guiding.base.basis is basis:
        guide = guiding.from_base(guiding.base.combine(values, strict=False))
    else:
        guide = guiding.evaluate(coords, derivatives=True)
    with np.errstate(all="ignore"):
        local = hamiltonian.local_energies(coords, values)
        guide_energy = hamiltonian.local_energies(coords, guide)
        reweighted = values.sign * np.exp(values.logabs - guide.logabs[:, None])
        projected = reweighted * local
    valid = (
        np.all(np.isfinite(reweighted), axis=1)
        & np.all(np.isfinite(projected), axis=1)
        & np.isfinite(guide_energy)
        & np.all(np.isfinite(guide.gradient), axis=(1, 2))
    )
    return _WalkState(reweighted, projected, guide_energy, guide.gradient, guide.logabs, valid)


def _merge(accept: np.ndarray, new: _WalkState, old: _WalkState) -> _WalkState:
    def pick(a, b):
        mask = accept.reshape(accept.shape + (1,) * (a.ndim - 1))
        return np.where(mask, a, b)

    return _WalkState(
        pick(new.reweighted, old.reweighted),
        pick(new.projected, old.projected),
        pick(new.guide_energy, old.guide_energy),
        pick(new.drift, old.drift),
        pick(new.log_guide, old.log_guide),
        pick(new.valid, old.valid),
    )


@dataclass(frozen=True, eq=False)
class ProjectedBasisRun:
    """Projected overlap and Hamiltonian matrices on a time grid.

    ``overlap`` and ``hamiltonian`` have shape (T, n, n) and are per-pair averages;
    ``group_overlap``/``group_hamiltonian`` (G, T, n, n) are the per-walker-group sums
    used for jackknife errors. Eigenvalues after ``breakdown`` are NaN.
    """

    times: np.ndarray
    lags: np.ndarray
    overlap: np.ndarray
    hamiltonian: np.ndarray
    group_overlap: np.ndarray
    group_hamiltonian: np.ndarray
    log_weight_shift: np.ndarray
    reference_energy: float
    time_step: float
    acceptance: float
    n_states: int
    eigenvalues: np.ndarray | None = None
    errors: np.ndarray | None = None
    breakdown: int | None = None

    @property
    def usable_count(self) -> int:
        return self.times.size if self.breakdown is None else self.breakdown

    def to_record(self) -> "ProjectionRecord":
        return ProjectionRecord(
            times=self.times.tolist(),
            overlap=self.overlap.tolist(),
            hamiltonian=self.hamiltonian.tolist(),
            eigenvalues=_nullable(self.eigenvalues),
            errors=_nullable(self.errors),
            breakdown=self.breakdown,
            reference_energy=self.reference_energy,
            time_step=self.time_step,
            acceptance=self.acceptance,
        )


def _nullable(matrix: np.ndarray | None) -> list[list[float | None]]:
    if matrix is None:
        return []
    return [[float(v) if np.isfinite(v) else None for v in row] for row in matrix]


class ProjectionRecord(BaseModel):
    """Serialized projection run: time grid, matrices, eigenvalues, errors and breakdown index."""

    times: list[float]
    overlap: list[list[list[float]]]
    hamiltonian: list[list[list[float]]]
    eigenvalues: list[list[float | None]]
    errors: list[list[float | None]]
    breakdown: int | None = None
    reference_energy: float
    time_step: float
    acceptance: float

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))
        logger.info(f"Projection record written to {path}")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ProjectionRecord":
        return cls.model_validate_json(Path(path).read_text())


def project(
    basis,
    guiding,
    hamiltonian,
    times,
    walkers: np.ndarray,
    n_steps: int,
    time_step: float,
    reference_energy: float,
    master_seed: int = 0,
    equilibration_steps: int = 0,
    n_groups: int = JACKKNIFE_GROUPS,
    n_states: int | None = None,
    svd_threshold: float = SVD_THRESHOLD,
) -> ProjectedBasisRun:
    """Run the drift-diffusion walk and build N(t), H(t) on the requested time grid.

    Args:
        basis: Optimized basis set.
        guiding: Guiding function driving the walk.
        hamiltonian: Hamiltonian (masses set the diffusion constants).
        times: Increasing projection times starting at 0; each must be a multiple of ``time_step``.
        walkers: Starting walker positions (W, D, N), e.g. the final VMC ensemble.
        n_steps: Recorded steps per walker; the walker budget is W * n_steps.
        time_step: Time step tau.
        reference_energy: Fixed reference energy E_ref.
        master_seed: Seed of the per-walker streams.
        equilibration_steps: Unrecorded steps before accumulation.
        n_groups: Walker groups for jackknife errors.
        n_states: States to report (default: basis size).
        svd_threshold: Relative singular value cut used in every solve.

    Raises:
        TimeStepError: If a single-step weight factor leaves the allowed dynamic range.
    """
    times = np.asarray(times, dtype=float)
    walkers = np.array(walkers, dtype=float)
    if times.ndim != 1 or times.size < 1 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ConfigValidationError("Projection times must increase strictly from 0")
    if not time_step > 0:
        raise ConfigValidationError(f"time_step must be positive, got {time_step}")
    lags = np.rint(times / time_step).astype(int)
    if not np.allclose(lags * time_step, times, rtol=1e-9, atol=1e-12 * max(1.0, times[-1])):
        raise ConfigValidationError("Projection times must be multiples of the time step")
    if lags[-1] >= n_steps:
        raise ConfigValidationError(f"Longest lag {lags[-1]} needs more than {n_steps} recorded steps")
    n_walkers = walkers.shape[0]
    n_groups = max(1, min(n_groups, n_walkers))
    n_states = basis.size if n_states is None else n_states

    streams = walker_streams(master_seed, n_walkers)
    diffusion = time_step * hamiltonian.inv_masses[None, None, :]
    root = np.sqrt(diffusion)
    limit = math.log(WEIGHT_DYNAMIC_RANGE)

    state = _evaluate_state(basis, guiding, hamiltonian, walkers)
    if not state.valid.all():
        raise NumericalError("Projection walkers start at configurations the basis cannot evaluate")

    reweighted = np.empty((n_steps, n_walkers, basis.size))
    projected = np.empty_like(reweighted)
    log_factors = np.empty((max(n_steps - 1, 0), n_walkers))
    accepted = 0
    for step in range(equilibration_steps + n_steps):
        record = step - equilibration_steps
        if record >= 0:
            reweighted[record] = state.reweighted
            projected[record] = state.projected
        if record == n_steps - 1:
            break
        noise = np.stack([stream.standard_normal(walkers.shape[1:]) for stream in streams])
        uniform = np.array([stream.random() for stream in streams])
        mean = walkers + diffusion * state.drift
        proposal = mean + root * noise
        trial = _evaluate_state(basis, guiding, hamiltonian, proposal)
        with np.errstate(all="ignore"):
            reverse = walkers - proposal - diffusion * trial.drift
            log_ratio = (
                2.0 * (trial.log_guide - state.log_guide)
                - np.sum(reverse**2 / (2.0 * diffusion), axis=(1, 2))
                + 0.5 * np.sum(noise**2, axis=(1, 2))
            )
            accept = trial.valid & (np.log(uniform) < log_ratio)
        walkers = np.where(accept[:, None, None], proposal, walkers)
        previous_energy = state.guide_energy
        state = _merge(accept, trial, state)
        factor = -time_step * (0.5 * (previous_energy + state.guide_energy) - reference_energy)
        if np.max(np.abs(factor)) > limit:
            worst = int(np.argmax(np.abs(factor)))
            raise TimeStepError(
                f"Weight factor exp({factor[worst]:.2f}) at step {step} exceeds the range 1e+-3; reduce the time step"
            )
        if record >= 0:
            log_factors[record] = factor
            accepted += int(accept.sum())
    acceptance = accepted / max(1, (n_steps - 1) * n_walkers)
    logger.info(f"Projection walk: {n_walkers} walkers x {n_steps} steps, acceptance {acceptance:.4f}")

    cumulative = np.concatenate([np.zeros((1, n_walkers)), np.cumsum(log_factors, axis=0)])
    membership = np.zeros((n_walkers, n_groups))
    membership[np.arange(n_walkers), np.arange(n_walkers) * n_groups // n_walkers] = 1.0
    size = basis.size
    group_overlap = np.empty((n_groups, times.size, size, size))
    group_hamiltonian = np.empty_like(group_overlap)
    shifts = np.empty(times.size)
    for index, lag in enumerate(lags):
        count = n_steps - lag
        log_weight = cumulative[lag:] - cumulative[:count]
        shifts[index] = float(log_weight.max())
        weight = np.exp(log_weight - shifts[index]) / (count * n_walkers)
        early = reweighted[:count] * weight[:, :, None]
        group_overlap[:, index] = np.einsum("lwi,lwj,wg->gij", early, reweighted[lag:], membership, optimize=True)
        group_hamiltonian[:, index] = np.einsum("lwi,lwj,wg->gij", early, projected[lag:], membership, optimize=True)

    run = ProjectedBasisRun(
        times=times,
        lags=lags,
        overlap=group_overlap.sum(axis=0),
        hamiltonian=group_hamiltonian.sum(axis=0),
        group_overlap=group_overlap,
        group_hamiltonian=group_hamiltonian,
        log_weight_shift=shifts,
        reference_energy=float(reference_energy),
        time_step=float(time_step),
        acceptance=acceptance,
        n_states=n_states,
    )
    breakdown = detect_breakdown(run)
    eigenvalues = np.full((times.size, n_states), np.nan)
    errors = np.full((times.size, n_states), np.nan)
    threshold = matrix_threshold(svd_threshold)
    for index in range(times.size if breakdown is None else breakdown):
        try:
            levels = jackknife_levels(group_overlap[:, index], group_hamiltonian[:, index], n_states, threshold)
        except NumericalError as error:
            logger.warning(f"Projection solve failed at t={times[index]:.4g}: {error}")
            breakdown = index
            break
        eigenvalues[index, : levels.energies.size] = levels.energies
        errors[index, : levels.errors.size] = levels.errors
    if breakdown is not None:
        logger.warning(f"Overlap matrix lost positivity at t={times[breakdown]:.4g} (index {breakdown})")
    return replace(run, eigenvalues=eigenvalues, errors=errors, breakdown=breakdown)


def detect_breakdown(run: ProjectedBasisRun, tolerance: float = BREAKDOWN_TOLERANCE) -> int | None:
    """First time index whose symmetrized overlap has an eigenvalue below -tolerance * largest."""
    for index in range(run.times.size):
        overlap = run.overlap[index]
        spectrum = eigvalsh(0.5 * (overlap + overlap.T))
        if spectrum[0] < -tolerance * abs(spectrum[-1]):
            return index
    return None


@dataclass(frozen=True)
class LevelEstimate:
    state: int
    time: float
    energy: float
    statistical_error: float
    drift: float

    @property
    def error(self) -> float:
        return self.statistical_error + abs(self.drift)


def extrapolate_levels(run: ProjectedBasisRun) -> list[LevelEstimate]:
    """Per-state energy at the last usable time, with the last-step drift as systematic error."""
    if run.eigenvalues is None:
        raise InsufficientProjectionError("Projection run carries no eigenvalues")
    finite = np.all(np.isfinite(run.eigenvalues), axis=1)
    usable = [k for k in range(run.usable_count) if finite[k]]
    if len(usable) < 3:
        raise InsufficientProjectionError(f"Only {len(usable)} usable projection times (need 3)")
    last, previous = usable[-1], usable[-2]
    levels = [
        LevelEstimate(
            state=k,
            time=float(run.times[last]),
            energy=float(run.eigenvalues[last, k]),
            statistical_error=float(run.errors[last, k]),
            drift=float(run.eigenvalues[previous, k] - run.eigenvalues[last, k]),
        )
        for k in range(run.eigenvalues.shape[1])
    ]
    for level in levels:
        logger.info(f"State {level.state}: E={level.energy:.8f} +- {level.error:.2e} at t={level.time:.4g}")
    return levels
