"""Metropolis sampling of psi_g^2 with per-walker random streams and blocking analysis."""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from src.config import (
    ACCEPTANCE_TOLERANCE,
    AUTOCORRELATION_FACTOR,
    BLOCKING_MIN_BLOCKS,
    BLOCKING_MIN_LENGTH,
    BLOCKING_PLATEAU_CHANGE,
    DEFAULT_TARGET_ACCEPTANCE,
    DISTANCE_TOLERANCE,
    LOG_LEVEL,
    MAX_TUNING_ITERATIONS,
    MIN_EQUILIBRATION_SWEEPS,
)
from src.errors import ConfigValidationError, DegenerateConfigurationError, TuningError
from src.geometry import Configuration, batch_pair_geometry
from src.wavefunction import WavefunctionValues

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)


def walker_streams(master_seed: int, n_walkers: int) -> tuple[np.random.Generator, ...]:
    """One independent counter-based (Philox) generator per walker."""
    children = np.random.SeedSequence(master_seed).spawn(n_walkers)
    return tuple(np.random.Generator(np.random.Philox(child)) for child in children)


class UniformTarget:
    """psi_g = 1 everywhere; every proposal is accepted."""

    def log_density(self, coords: np.ndarray, strict: bool = False) -> np.ndarray:
        return np.zeros(coords.shape[0])

    def evaluate(self, coords: np.ndarray, derivatives: bool = True, strict: bool = False) -> WavefunctionValues:
        n = coords.shape[0]
        return WavefunctionValues(np.zeros(n), np.ones(n), np.zeros(coords.shape), np.zeros((n, coords.shape[2])))


class GaussianTarget:
    """psi_g^2 proportional to exp(-|R|^2 / (2 variance))."""

    def __init__(self, variance: float = 1.0):
        if not variance > 0:
            raise ConfigValidationError(f"variance must be positive, got {variance}")
        self.variance = variance

    def log_density(self, coords: np.ndarray, strict: bool = False) -> np.ndarray:
        return -0.5 * np.sum(coords**2, axis=(1, 2)) / self.variance

    def evaluate(self, coords: np.ndarray, derivatives: bool = True, strict: bool = False) -> WavefunctionValues:
        logabs = 0.5 * self.log_density(coords)
        sign = np.ones(coords.shape[0])
        if not derivatives:
            return WavefunctionValues(logabs, sign)
        gradient = -0.5 * coords / self.variance
        laplacian = np.full((coords.shape[0], coords.shape[2]), -0.5 * coords.shape[1] / self.variance)
        return WavefunctionValues(logabs, sign, gradient, laplacian)


@dataclass(frozen=True, eq=False)
class WalkerEnsemble:
    """Walker positions (W, D, N) with their streams, proposal width and counters."""

    walkers: np.ndarray
    step_scale: float
    streams: tuple[np.random.Generator, ...]
    log_density: np.ndarray
    accepted: np.ndarray
    proposed: np.ndarray
    sweeps: int = 0

    @classmethod
    def initialize(
        cls,
        guiding,
        reference: np.ndarray,
        n_walkers: int,
        master_seed: int,
        step_scale: float = 0.05,
        jitter: float = 0.02,
    ) -> "WalkerEnsemble":
        """Start every walker near a reference geometry of shape (D, N).

        Args:
            guiding: Object with ``log_density(coords)``.
            reference: Starting geometry, e.g. a classical minimum.
            n_walkers: Number of walkers W.
            master_seed: Seed from which every walker stream is spawned.
            step_scale: Initial Gaussian proposal width.
            jitter: Width of the initial displacement around the reference.
        """
        if n_walkers < 1:
            raise ConfigValidationError(f"n_walkers must be positive, got {n_walkers}")
        if not step_scale > 0:
            raise ConfigValidationError(f"step_scale must be positive, got {step_scale}")
        reference = np.asarray(reference, dtype=float)
        streams = walker_streams(master_seed, n_walkers)
        walkers = np.stack([reference + jitter * stream.standard_normal(reference.shape) for stream in streams])
        log_density = guiding.log_density(walkers)
        if not np.all(np.isfinite(log_density)):
            raise DegenerateConfigurationError("Initial walkers are not evaluable under the guiding function")
        zeros = np.zeros(n_walkers, dtype=np.int64)
        return cls(walkers, float(step_scale), streams, log_density, zeros, zeros.copy())

    @property
    def n_walkers(self) -> int:
        return self.walkers.shape[0]

    @property
    def acceptance(self) -> float:
        proposed = int(self.proposed.sum())
        return float(self.accepted.sum()) / proposed if proposed else 0.0

    @property
    def walker_acceptance(self) -> np.ndarray:
        return self.accepted / np.maximum(self.proposed, 1)

    def configurations(self) -> list[Configuration]:
        return [Configuration(w) for w in self.walkers]

    def reset_counters(self) -> "WalkerEnsemble":
        zeros = np.zeros(self.n_walkers, dtype=np.int64)
        return replace(self, accepted=zeros, proposed=zeros.copy())


def _nondegenerate(coords: np.ndarray) -> np.ndarray:
    if coords.shape[2] < 2:
        return np.ones(coords.shape[0], dtype=bool)
    _, distances = batch_pair_geometry(coords)
    return np.all(distances > DISTANCE_TOLERANCE, axis=1)


def metropolis_sweep(ensemble: WalkerEnsemble, guiding) -> WalkerEnsemble:
    """Move every atom of every walker once with a Gaussian single-atom proposal.

    Each walker draws exactly D*N normals and N uniforms per sweep from its own
    stream, so results do not depend on how walkers are batched.
    """
    walkers = ensemble.walkers.copy()
    n_walkers, dim, n_atoms = walkers.shape
    noise = np.stack([stream.standard_normal((n_atoms, dim)) for stream in ensemble.streams])
    uniforms = np.stack([stream.random(n_atoms) for stream in ensemble.streams])
    log_density = ensemble.log_density.copy()
    accepted = ensemble.accepted.copy()
    for atom in range(n_atoms):
        trial = walkers.copy()
        trial[:, :, atom] += ensemble.step_scale * noise[:, atom, :]
        ok = _nondegenerate(trial)
        trial_density = np.full(n_walkers, np.nan)
        if ok.any():
            trial_density[ok] = guiding.log_density(trial[ok])
        with np.errstate(invalid="ignore", divide="ignore"):
            accept = np.isfinite(trial_density) & (np.log(uniforms[:, atom]) < trial_density - log_density)
        walkers[accept] = trial[accept]
        log_density[accept] = trial_density[accept]
        accepted += accept
    return replace(
        ensemble,
        walkers=walkers,
        log_density=log_density,
        accepted=accepted,
        proposed=ensemble.proposed + n_atoms,
        sweeps=ensemble.sweeps + 1,
    )


def run_sweeps(ensemble: WalkerEnsemble, guiding, n_sweeps: int) -> WalkerEnsemble:
    for _ in range(n_sweeps):
        ensemble = metropolis_sweep(ensemble, guiding)
    return ensemble


@dataclass(frozen=True)
class StepTuning:
    step_scale: float
    acceptance: float
    iterations: int


def autotune_step(
    ensemble: WalkerEnsemble,
    guiding,
    target_acceptance: float = DEFAULT_TARGET_ACCEPTANCE,
    sweeps_per_trial: int = 20,
    max_iterations: int = MAX_TUNING_ITERATIONS,
) -> StepTuning:
    """Bracket and bisect (geometrically) the proposal width to hit the target acceptance.

    Tuning sweeps run on a copy, so the caller's walker positions and counters are
    left as they were (the walker streams do advance).
    """
    if not 0.2 < target_acceptance < 0.8:
        raise ConfigValidationError(f"target_acceptance must lie in (0.2, 0.8), got {target_acceptance}")
    low = high = None
    step = ensemble.step_scale
    for iteration in range(1, max_iterations + 1):
        trial = replace(ensemble.reset_counters(), step_scale=step)
        acceptance = run_sweeps(trial, guiding, sweeps_per_trial).acceptance
        logger.debug(f"Tuning iteration {iteration}: step={step:.4g}, acceptance={acceptance:.3f}")
        if abs(acceptance - target_acceptance) <= ACCEPTANCE_TOLERANCE:
            logger.info(f"Step tuned to {step:.4g} (acceptance {acceptance:.3f}) in {iteration} iterations")
            return StepTuning(step, acceptance, iteration)
        if acceptance > target_acceptance:
            low = step
            step = step * 2.0 if high is None else math.sqrt(low * high)
        else:
            high = step
            step = step / 2.0 if low is None else math.sqrt(low * high)
    raise TuningError(f"Step tuning did not reach acceptance {target_acceptance} in {max_iterations} iterations")


@dataclass(frozen=True)
class BlockingResult:
    mean: float
    error: float
    converged: bool
    level: int
    errors: tuple[float, ...]


def blocking_error(series) -> BlockingResult:
    """Standard error of the mean of a correlated series by successive pair averaging.

    The error is read at the first level whose estimate changes by less than 5%
    over the next two levels; without such a plateau the deepest level is returned
    flagged as unconverged.
    """
    data = np.asarray(series, dtype=float).ravel()
    if data.size < BLOCKING_MIN_LENGTH:
        raise ConfigValidationError(f"Blocking needs at least {BLOCKING_MIN_LENGTH} samples, got {data.size}")
    mean = float(data.mean())
    errors = []
    while data.size >= BLOCKING_MIN_BLOCKS:
        errors.append(float(np.sqrt(data.var() / (data.size - 1))))
        data = 0.5 * (data[: data.size // 2 * 2 : 2] + data[1 : data.size // 2 * 2 : 2])
    for level in range(len(errors) - 2):
        reference = errors[level]
        if reference == 0.0:
            return BlockingResult(mean, 0.0, True, level, tuple(errors))
        if all(abs(errors[level + k] - reference) < BLOCKING_PLATEAU_CHANGE * reference for k in (1, 2)):
            return BlockingResult(mean, reference, True, level, tuple(errors))
    logger.warning(f"Blocking analysis found no plateau over {len(errors)} levels")
    return BlockingResult(mean, errors[-1], False, len(errors) - 1, tuple(errors))


@dataclass(frozen=True, eq=False)
class Equilibration:
    ensemble: WalkerEnsemble
    sweeps: int
    autocorrelation_time: float


def equilibrate(ensemble: WalkerEnsemble, guiding, min_sweeps: int = MIN_EQUILIBRATION_SWEEPS) -> Equilibration:
    """Discard max(min_sweeps, 20 * tau) sweeps, tau estimated from the log-density trace."""
    trace = []
    for _ in range(min_sweeps):
        ensemble = metropolis_sweep(ensemble, guiding)
        trace.append(float(np.mean(ensemble.log_density)))
    tau = 1.0
    if len(trace) >= BLOCKING_MIN_LENGTH:
        blocked = blocking_error(trace)
        naive = blocked.errors[0]
        if naive > 0:
            tau = max(1.0, 0.5 * (blocked.error / naive) ** 2)
    extra = min(int(math.ceil(AUTOCORRELATION_FACTOR * tau)) - min_sweeps, 10 * max(min_sweeps, 1))
    if extra > 0:
        ensemble = run_sweeps(ensemble, guiding, extra)
    total = min_sweeps + max(extra, 0)
    logger.info(f"Equilibrated for {total} sweeps (tau ~ {tau:.1f}, acceptance {ensemble.acceptance:.3f})")
    return Equilibration(ensemble.reset_counters(), total, tau)


@dataclass(frozen=True, eq=False)
class SampleRun:
    samples: np.ndarray
    ensemble: WalkerEnsemble


def sample(ensemble: WalkerEnsemble, guiding, n_samples: int, thin: int = 5) -> SampleRun:
    """Collect at least ``n_samples`` configurations, sweep-major then walker order."""
    if n_samples < 1 or thin < 1:
        raise ConfigValidationError(f"n_samples and thin must be positive, got {n_samples}, {thin}")
    rounds = math.ceil(n_samples / ensemble.n_walkers)
    collected = []
    for _ in range(rounds):
        ensemble = run_sweeps(ensemble, guiding, thin)
        collected.append(ensemble.walkers.copy())
    samples = np.concatenate(collected, axis=0)[:n_samples]
    logger.info(f"Collected {samples.shape[0]} samples (acceptance {ensemble.acceptance:.3f})")
    return SampleRun(samples, ensemble)
