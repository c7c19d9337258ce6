"""Least-squares matrix eigenvalue estimation and variance-driven nonlinear optimization.

From a sample R_1..R_s drawn from psi_g^2 we build B[s, i] = beta_i(R_s) / psi_g(R_s)
and B'[s, i] = B[s, i] * E_L,i(R_s), then solve the n x n eigenproblem of the
least-squares matrix E = (B^T B)^+ B^T B' on the retained singular subspace of B.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel
from scipy.linalg import eig, svd
from scipy.optimize import minimize

from src.config import EVALUATION_CHUNK, IMAGINARY_TOLERANCE, LOG_LEVEL, MATRIX_RANK_FLOOR, SVD_THRESHOLD
from src.errors import (
    ConfigValidationError,
    DegenerateStateError,
    NumericalError,
    ParameterRangeError,
    RankZeroError,
    SamplePoisonedError,
)
from src.geometry import Configuration
from src.wavefunction import GuidingFunction, TrialWavefunction

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)

LOG_SHIFT_LIMIT = 600.0


@dataclass(frozen=True, eq=False)
class EstimatorAccumulator:
    """Reweighted basis values B and B' on one sample (rows: samples, columns: functions).

    ``log_scale`` is a global log factor removed from every entry of B and B' when the raw
    values would overflow; it cancels in every eigenvalue.
    """

    B: np.ndarray
    Bp: np.ndarray
    log_scale: float = 0.0

    @property
    def sample_count(self) -> int:
        return self.B.shape[0]

    @property
    def basis_size(self) -> int:
        return self.B.shape[1]

    @property
    def overlap(self) -> np.ndarray:
        return self.B.T @ self.B

    @property
    def hamiltonian(self) -> np.ndarray:
        return self.B.T @ self.Bp


def as_sample_array(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return np.asarray(samples, dtype=float)
    return np.stack([c.coords if isinstance(c, Configuration) else np.asarray(c) for c in samples])


def guide_log_values(guiding, samples: np.ndarray, chunk: int = EVALUATION_CHUNK) -> np.ndarray:
    """log psi_g on every sample (NaN where the guide is not evaluable)."""
    parts = [
        guiding.evaluate(samples[start : start + chunk], derivatives=False).logabs
        for start in range(0, samples.shape[0], chunk)
    ]
    return np.concatenate(parts)


def reweighted_chunk(basis, guiding, hamiltonian, coords: np.ndarray, log_guide: np.ndarray | None = None):
    """(log|B|, sign, local energies) of every basis function on one chunk of samples."""
    values = basis.evaluate(coords, derivatives=True, strict=False)
    if log_guide is None:
        if isinstance(guiding, GuidingFunction) and guiding.base.basis is basis:
            log_guide = guiding.from_base(guiding.base.combine(values, strict=False)).logabs
        else:
            log_guide = guiding.evaluate(coords, derivatives=False).logabs
    with np.errstate(all="ignore"):
        local = hamiltonian.local_energies(coords, values)
    return values.logabs - log_guide[:, None], values.sign, local


def accumulate(samples, basis, guiding, hamiltonian, chunk: int = EVALUATION_CHUNK, log_guide=None) -> EstimatorAccumulator:
    """Fill B and B' for a fixed sample.

    Args:
        samples: Array (S, D, N) or a list of configurations.
        basis: Basis set to reweight.
        guiding: Sampling function (``evaluate`` returning log psi_g).
        hamiltonian: Hamiltonian providing local energies.
        chunk: Samples per vectorized evaluation.
        log_guide: Precomputed log psi_g per sample, reused across basis changes.

    Raises:
        SamplePoisonedError: If any entry of B or B' is not finite.
    """
    samples = as_sample_array(samples)
    logs, signs, locals_ = [], [], []
    for start in range(0, samples.shape[0], chunk):
        stop = start + chunk
        guide = None if log_guide is None else log_guide[start:stop]
        log_b, sign, local = reweighted_chunk(basis, guiding, hamiltonian, samples[start:stop], guide)
        logs.append(log_b)
        signs.append(sign)
        locals_.append(local)
    log_b = np.concatenate(logs)
    sign = np.concatenate(signs)
    local = np.concatenate(locals_)

    finite = np.isfinite(log_b)
    peak = float(log_b[finite].max()) if finite.any() else 0.0
    log_scale = peak if abs(peak) > LOG_SHIFT_LIMIT else 0.0
    with np.errstate(all="ignore"):
        B = sign * np.exp(log_b - log_scale)
        Bp = B * local
    poisoned = ~(np.isfinite(B) & np.isfinite(Bp))
    if poisoned.any():
        sample, function = (int(k) for k in np.argwhere(poisoned)[0])
        raise SamplePoisonedError(sample, function)
    if log_scale:
        logger.debug(f"Applied global log shift {log_scale:.1f} to the estimator matrices")
    return EstimatorAccumulator(B, Bp, log_scale)


@dataclass(frozen=True, eq=False)
class SpectrumEstimate:
    """Ranked eigenpairs of the least-squares matrix.

    Right vectors are unit-norm columns d^k; left vectors are scaled so that
    left[:, j] . right[:, k] = delta_jk.
    """

    eigenvalues: np.ndarray
    imaginary: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    singular_values: np.ndarray
    discarded: int
    matrix: np.ndarray
    residual: float = math.nan

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    @property
    def complex_flags(self) -> np.ndarray:
        return np.abs(self.imaginary) > IMAGINARY_TOLERANCE * np.maximum(1.0, np.abs(self.eigenvalues))

    def flagged_states(self, n_states: int | None = None) -> list[int]:
        flags = self.complex_flags if n_states is None else self.complex_flags[:n_states]
        return [int(k) for k in np.flatnonzero(flags)]

    def coefficients(self, state: int) -> np.ndarray:
        if not 0 <= state < self.rank:
            raise DegenerateStateError(f"State {state} not available (rank {self.rank})")
        return self.right_vectors[:, state]

    def wavefunction(self, basis, state: int = 0) -> TrialWavefunction:
        return TrialWavefunction(basis, self.coefficients(state))


def _eigensystem(reduced, basis_map, retained, discarded, matrix, residual) -> SpectrumEstimate:
    values, left, right = eig(reduced, left=True, right=True)
    order = np.argsort(values.real, kind="stable")
    values, left, right = values[order], left[:, order], right[:, order]
    rights, lefts = [], []
    for k in range(values.size):
        column = right[:, k]
        pivot = int(np.argmax(np.abs(column)))
        column = column * (np.conj(column[pivot]) / abs(column[pivot]))
        column = column / np.linalg.norm(column)
        row = np.conj(left[:, k])
        row = row / (row @ column)
        rights.append(basis_map @ column)
        lefts.append(basis_map @ row)
    estimate = SpectrumEstimate(
        eigenvalues=values.real.copy(),
        imaginary=values.imag.copy(),
        right_vectors=np.real(np.stack(rights, axis=1)),
        left_vectors=np.real(np.stack(lefts, axis=1)),
        singular_values=np.asarray(retained),
        discarded=int(discarded),
        matrix=matrix,
        residual=residual,
    )
    flagged = estimate.flagged_states()
    if flagged:
        logger.warning(f"Complex eigenvalue pairs at states {flagged}: {values[flagged]}")
    return estimate


def solve_spectrum(acc: EstimatorAccumulator, svd_threshold: float = SVD_THRESHOLD) -> SpectrumEstimate:
    """Eigenpairs of (B^T B)^+ B^T B' with singular values below threshold * max discarded."""
    samples, size = acc.B.shape
    if samples < size:
        raise ConfigValidationError(f"Need at least as many samples as basis functions ({samples} < {size})")
    U, sv, Vt = svd(acc.B, full_matrices=False)
    if sv.size == 0 or not sv[0] > 0:
        raise RankZeroError("Estimator matrix B is zero")
    keep = sv > svd_threshold * sv[0]
    U_r, sv_r, V_r = U[:, keep], sv[keep], Vt[keep].T
    projected = (U_r.T @ acc.Bp) / sv_r[:, None]
    reduced = projected @ V_r
    matrix = V_r @ projected
    residual = float(np.linalg.norm(acc.Bp - acc.B @ matrix))
    logger.debug(f"Retained {keep.sum()} of {size} singular values, residual {residual:.3e}")
    return _eigensystem(reduced, V_r, sv_r, size - int(keep.sum()), matrix, residual)


def matrix_threshold(svd_threshold: float = SVD_THRESHOLD) -> float:
    """Relative cut on the singular values of B^T B matching a cut on those of B."""
    return max(svd_threshold**2, MATRIX_RANK_FLOOR)


def solve_matrices(overlap: np.ndarray, hamiltonian: np.ndarray, threshold: float) -> SpectrumEstimate:
    """Same reduced eigenproblem, starting from accumulated N and H matrices."""
    U, sv, Vt = svd(overlap)
    if sv.size == 0 or not sv[0] > 0:
        raise RankZeroError("Overlap matrix is zero")
    keep = sv > threshold * sv[0]
    U_r, sv_r, V_r = U[:, keep], sv[keep], Vt[keep].T
    projected = (U_r.T @ hamiltonian) / sv_r[:, None]
    return _eigensystem(projected @ V_r, V_r, sv_r, overlap.shape[0] - int(keep.sum()), V_r @ projected, math.nan)


@dataclass(frozen=True, eq=False)
class LevelEstimates:
    spectrum: SpectrumEstimate
    energies: np.ndarray
    errors: np.ndarray


def jackknife_levels(overlaps: np.ndarray, hamiltonians: np.ndarray, n_states: int, threshold: float) -> LevelEstimates:
    """Eigenvalues of the summed matrices with leave-one-group-out errors.

    Args:
        overlaps: Per-group overlap sums, shape (G, n, n).
        hamiltonians: Per-group Hamiltonian sums, shape (G, n, n).
        n_states: Number of lowest states to report.
        threshold: Relative singular value cut on the overlap.
    """
    total_overlap = overlaps.sum(axis=0)
    total_hamiltonian = hamiltonians.sum(axis=0)
    spectrum = solve_matrices(total_overlap, total_hamiltonian, threshold)
    count = min(n_states, spectrum.rank)
    energies = spectrum.eigenvalues[:count]
    groups = overlaps.shape[0]
    if groups < 2:
        return LevelEstimates(spectrum, energies, np.full(count, np.nan))
    replicas = np.full((groups, count), np.nan)
    for g in range(groups):
        try:
            partial = solve_matrices(total_overlap - overlaps[g], total_hamiltonian - hamiltonians[g], threshold)
        except NumericalError:
            continue
        available = min(count, partial.rank)
        replicas[g, :available] = partial.eigenvalues[:available]
    spread = replicas - np.nanmean(replicas, axis=0)
    errors = np.sqrt((groups - 1) / groups * np.nansum(spread**2, axis=0))
    return LevelEstimates(spectrum, energies, errors)


def variance_objective(acc: EstimatorAccumulator, psi, energy: float) -> float:
    """Normalized residual sum (psi' - E psi)^2 / sum psi^2 on the sample.

    Args:
        acc: Estimator matrices of the sample.
        psi: Trial wavefunction or its coefficient vector.
        energy: Eigenvalue estimate of the state.
    """
    coeffs = psi.linear_coeffs if isinstance(psi, TrialWavefunction) else np.asarray(psi, dtype=float)
    values = acc.B @ coeffs
    projected = acc.Bp @ coeffs
    denominator = float(values @ values)
    scale = float(np.sum(acc.B**2) * (coeffs @ coeffs))
    if not denominator > 1e-30 * scale:
        raise DegenerateStateError(f"State has vanishing norm on the sample ({denominator:.3e})")
    residual = projected - energy * values
    return float(residual @ residual) / denominator


class IterationRecord(BaseModel):
    """Diagnostics of one objective evaluation of the nonlinear optimizer."""

    evaluation: int
    chi_squared: list[float]
    eigenvalues: list[float]
    discarded: int
    parameters: list[float]


@dataclass(frozen=True, eq=False)
class NonlinearOptimization:
    basis: object
    chi_squared: list[float]
    spectrum: SpectrumEstimate
    history: list[float] = field(default_factory=list)
    evaluations: int = 0
    stagnated: bool = False
    message: str = ""


def _initial_simplex(start: np.ndarray, lower: np.ndarray, upper: np.ndarray, step: float) -> np.ndarray:
    simplex = np.tile(start, (start.size + 1, 1))
    for k in range(start.size):
        delta = step * max(abs(start[k]), 0.1)
        vertex = start[k] + delta
        if vertex > upper[k]:
            vertex = start[k] - delta
        simplex[k + 1, k] = np.clip(vertex, lower[k], upper[k])
    return simplex


def optimize_nonlinear(
    basis,
    samples,
    guiding,
    hamiltonian,
    states=(0,),
    svd_threshold: float = SVD_THRESHOLD,
    max_evaluations: int = 300,
    initial_step: float = 0.1,
    xatol: float = 1e-4,
    fatol: float = 1e-12,
) -> NonlinearOptimization:
    """Nelder-Mead minimization of the summed chi^2 of the targeted states.

    Every evaluation rebuilds B and B' on the same fixed sample with the same guide
    and re-solves the linear problem. The best point seen is returned.
    """
    samples = as_sample_array(samples)
    states = tuple(int(k) for k in states)
    start = np.asarray(basis.nonlinear_vector(), dtype=float)
    bounds = basis.bounds()
    outside = (start < bounds.lb) | (start > bounds.ub)
    if outside.any():
        name = basis.parameter_names()[int(np.argmax(outside))]
        raise ParameterRangeError(f"Initial parameter {name} outside its bounds", name)
    # Constructor checks run on the start vector.
    basis = basis.with_nonlinear_vector(start)
    log_guide = guide_log_values(guiding, samples)

    best = {"value": math.inf, "vector": start, "chi": [], "spectrum": None}
    history: list[float] = []
    counter = {"evaluations": 0}

    def objective(vector: np.ndarray) -> float:
        counter["evaluations"] += 1
        value = math.inf
        if np.all(vector >= bounds.lb) and np.all(vector <= bounds.ub):
            try:
                trial = basis.with_nonlinear_vector(vector)
                acc = accumulate(samples, trial, guiding, hamiltonian, log_guide=log_guide)
                spectrum = solve_spectrum(acc, svd_threshold)
                chis = [variance_objective(acc, spectrum.coefficients(k), spectrum.eigenvalues[k]) for k in states]
                value = math.fsum(chis)
                record = IterationRecord(
                    evaluation=counter["evaluations"],
                    chi_squared=chis,
                    eigenvalues=spectrum.eigenvalues[: max(states) + 1].tolist(),
                    discarded=spectrum.discarded,
                    parameters=np.asarray(vector).tolist(),
                )
                logger.debug(record.model_dump_json())
                if value < best["value"]:
                    best.update(value=value, vector=np.array(vector), chi=chis, spectrum=spectrum)
            except (ParameterRangeError, NumericalError) as error:
                logger.debug(f"Evaluation {counter['evaluations']} rejected: {error}")
        history.append(best["value"])
        return value

    initial_value = objective(start)
    if not math.isfinite(initial_value):
        raise NumericalError("Objective is not finite at the initial parameters")
    result = minimize(
        objective,
        start,
        method="Nelder-Mead",
        bounds=bounds,
        options={
            "maxfev": max_evaluations,
            "xatol": xatol,
            "fatol": fatol,
            "initial_simplex": _initial_simplex(start, bounds.lb, bounds.ub, initial_step),
        },
    )
    stagnated = not best["value"] < initial_value
    if stagnated:
        logger.warning(f"Nonlinear optimization made no progress ({result.message})")
    logger.info(
        f"Nonlinear optimization: chi2 {initial_value:.4e} -> {best['value']:.4e} in {counter['evaluations']} evaluations"
    )
    return NonlinearOptimization(
        basis=basis.with_nonlinear_vector(best["vector"]),
        chi_squared=best["chi"],
        spectrum=best["spectrum"],
        history=history,
        evaluations=counter["evaluations"],
        stagnated=stagnated,
        message=str(result.message),
    )
