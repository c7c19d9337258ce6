"""Trial wavefunctions built from bosonically symmetrized pair monomials.

A basis function is

    beta(R) = s(R) * exp(sum_j a_j s_j(R) + sum_{pairs} A(r))

where every s is an orbit sum (over atom permutations) of products of scaled
pair variables f = exp(-r / scale), and A(r) = -c5 / r^5 - kappa * r.
All values are handled as (log-magnitude, sign) pairs.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations, combinations_with_replacement, permutations
from pathlib import Path
from typing import Protocol

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import Bounds

from src.config import (
    DEFAULT_DEGREE_CAP,
    DEFAULT_RHO,
    DISTANCE_TOLERANCE,
    EXPONENT_LIMIT,
    LOG_LEVEL,
    NODE_TOLERANCE,
    RHO_RANGE,
    SCALE_BOUNDS,
)
from src.errors import (
    ConfigValidationError,
    DegenerateConfigurationError,
    NodeProximityError,
    ParameterRangeError,
)
from src.geometry import Configuration, batch_pair_geometry, cartesian_derivatives

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)

EXPONENT_BOUND = 100.0
ASYMPTOTIC_BOUNDS = (1e-6, 1e4)


@dataclass(frozen=True)
class BasisValues:
    """Per-sample, per-function values: logabs and sign (S, K), gradient (S, K, D, N), laplacian (S, K, N)."""

    logabs: np.ndarray
    sign: np.ndarray
    gradient: np.ndarray | None = None
    laplacian: np.ndarray | None = None


@dataclass(frozen=True)
class WavefunctionValues:
    """Per-sample values of one function: logabs and sign (S,), gradient (S, D, N), laplacian (S, N)."""

    logabs: np.ndarray
    sign: np.ndarray
    gradient: np.ndarray | None = None
    laplacian: np.ndarray | None = None

    @property
    def laplacian_sum(self) -> np.ndarray:
        return self.laplacian.sum(axis=-1)


class Basis(Protocol):
    """What the spectral estimator and the projector need from a basis."""

    @property
    def size(self) -> int: ...

    def evaluate(self, coords: np.ndarray, derivatives: bool = True, strict: bool = True) -> BasisValues: ...

    def nonlinear_vector(self) -> np.ndarray: ...

    def with_nonlinear_vector(self, vector) -> "Basis": ...

    def bounds(self) -> Bounds: ...

    def parameter_names(self) -> list[str]: ...


@dataclass(frozen=True)
class Monomial:
    """Orbit sum of one product of scaled pair variables.

    Args:
        degree: Total degree of the product.
        signature: Canonical multiset of pairs (the lexicographically smallest image).
        exponents: One row per distinct image, one column per pair; entries are powers.
    """

    degree: int
    signature: tuple[tuple[int, int], ...]
    exponents: np.ndarray

    @property
    def orbit_size(self) -> int:
        return self.exponents.shape[0]

    def describe(self) -> str:
        factors = "*".join(f"f{i}{j}" for i, j in self.signature)
        return f"sym({factors})"

    def evaluate(self, distances: np.ndarray, scale: float, derivatives: bool = True):
        """Value (S,), gradient (S, P) and Hessian (S, P, P) in the pair distances."""
        terms = np.exp(-(distances @ self.exponents.T) / scale)
        value = terms.sum(axis=1)
        if not derivatives:
            return value, None, None
        gradient = -(terms @ self.exponents) / scale
        hessian = np.einsum("sm,mp,mq->spq", terms, self.exponents, self.exponents) / scale**2
        return value, gradient, hessian


def _relabel(edges: tuple[tuple[int, int], ...], order: tuple[int, ...]) -> tuple[tuple[int, int], ...]:
    return tuple(sorted(tuple(sorted((order[a], order[b]))) for a, b in edges))


@lru_cache(maxsize=None)
def symmetrized_monomials(n_atoms: int, degree_cap: int) -> tuple[Monomial, ...]:
    """Every permutation-invariant monomial up to ``degree_cap``, sorted by (degree, signature).

    The constant monomial is not part of the list.
    """
    if degree_cap < 1:
        raise ConfigValidationError(f"degree_cap must be >= 1, got {degree_cap}")
    if n_atoms < 2:
        raise ConfigValidationError(f"Monomials need at least two atoms, got {n_atoms}")
    pairs = list(combinations(range(n_atoms), 2))
    lookup = {pair: k for k, pair in enumerate(pairs)}
    orders = list(permutations(range(n_atoms)))
    seen: set[tuple[tuple[int, int], ...]] = set()
    monomials = []
    for degree in range(1, degree_cap + 1):
        for multiset in combinations_with_replacement(range(len(pairs)), degree):
            edges = tuple(pairs[k] for k in multiset)
            if edges in seen:
                continue
            images = {_relabel(edges, order) for order in orders}
            seen.update(images)
            exponents = np.zeros((len(images), len(pairs)))
            for row, image in enumerate(sorted(images)):
                for edge in image:
                    exponents[row, lookup[edge]] += 1.0
            exponents.setflags(write=False)
            monomials.append(Monomial(degree, min(images), exponents))
    monomials.sort(key=lambda m: (m.degree, m.signature))
    logger.debug(f"{len(monomials)} symmetrized monomials for N={n_atoms}, cap={degree_cap}")
    return tuple(monomials)


@dataclass(frozen=True)
class PairAsymptotics:
    """Pair function A(r) = -c5 / r^5 - kappa * r."""

    c5: float
    kappa: float

    def __post_init__(self):
        if not self.c5 > 0:
            raise ParameterRangeError(f"c5 must be positive, got {self.c5}", "c5", self.c5)
        if not self.kappa > 0:
            raise ParameterRangeError(f"kappa must be positive, got {self.kappa}", "kappa", self.kappa)

    def evaluate(self, distances: np.ndarray):
        inverse = 1.0 / distances
        value = -(self.c5 * inverse**5 + self.kappa * distances).sum(axis=1)
        first = 5.0 * self.c5 * inverse**6 - self.kappa
        second = -30.0 * self.c5 * inverse**7
        return value, first, second


@dataclass(frozen=True, eq=False)
class BasisFunction:
    """One elementary basis function.

    Args:
        n_atoms: Number of atoms.
        prefactor_index: 0 for the constant prefactor, k >= 1 for the k-th symmetrized monomial.
        nonlinear_params: Exponent coefficients a_j, one per monomial up to the degree cap.
        asymptotics: Short- and long-range pair behaviour.
        scale: Length scale of the pair variables.
        degree_cap: Maximum monomial degree.
    """

    n_atoms: int
    prefactor_index: int
    nonlinear_params: np.ndarray
    asymptotics: PairAsymptotics
    scale: float = 1.0
    degree_cap: int = DEFAULT_DEGREE_CAP

    def __post_init__(self):
        params = np.array(self.nonlinear_params, dtype=float).ravel()
        params.setflags(write=False)
        object.__setattr__(self, "nonlinear_params", params)
        low, high = SCALE_BOUNDS
        if not low <= self.scale <= high:
            raise ParameterRangeError(f"scale must lie in [{low}, {high}], got {self.scale}", "scale", self.scale)
        count = len(self.monomials)
        if params.size != count:
            raise ParameterRangeError(f"Expected {count} exponent coefficients, got {params.size}", "a")
        if not np.all(np.isfinite(params)):
            raise ParameterRangeError("Exponent coefficients must be finite", "a")
        if not 0 <= self.prefactor_index <= count:
            raise ParameterRangeError(
                f"prefactor_index must lie in [0, {count}], got {self.prefactor_index}", "prefactor_index"
            )

    @property
    def monomials(self) -> tuple[Monomial, ...]:
        return symmetrized_monomials(self.n_atoms, self.degree_cap)


def _diagonal(values: np.ndarray) -> np.ndarray:
    out = np.zeros(values.shape + (values.shape[-1],))
    index = np.arange(values.shape[-1])
    out[..., index, index] = values
    return out


def _evaluate_functions(functions, coords: np.ndarray, derivatives: bool, strict: bool) -> BasisValues:
    coords = np.asarray(coords, dtype=float)
    n_atoms = coords.shape[2]
    if any(f.n_atoms != n_atoms for f in functions):
        raise ConfigValidationError(f"Basis built for a different atom count than N={n_atoms}")
    unit, distances = batch_pair_geometry(coords)
    valid = np.all(distances > DISTANCE_TOLERANCE, axis=1)
    if strict and not valid.all():
        sample = int(np.argmin(valid))
        raise DegenerateConfigurationError(f"Coincident atoms in sample {sample}")
    distances = np.where(valid[:, None], distances, 1.0)
    unit = np.where(valid[:, None, None], unit, 0.0)

    tables = {}
    n_samples, n_pairs = distances.shape
    logs, signs, grads, hessians = [], [], [], []
    for function in functions:
        key = (function.scale, function.degree_cap)
        if key not in tables:
            columns = [m.evaluate(distances, function.scale, derivatives) for m in function.monomials]
            values = np.stack([c[0] for c in columns], axis=1)
            if derivatives:
                tables[key] = (values, np.stack([c[1] for c in columns], 1), np.stack([c[2] for c in columns], 1))
            else:
                tables[key] = (values, None, None)
        values, mono_grad, mono_hess = tables[key]
        params = function.nonlinear_params
        asym_value, asym_first, asym_second = function.asymptotics.evaluate(distances)
        exponent = values @ params + asym_value

        overflow = valid & (exponent > EXPONENT_LIMIT)
        if overflow.any():
            sample = int(np.argmax(overflow))
            worst = int(np.argmax(values[sample] * params))
            if strict:
                raise ParameterRangeError(
                    f"Exponent {exponent[sample]:.1f} exceeds {EXPONENT_LIMIT} at sample {sample}; "
                    f"dominant term a_{worst + 1}={params[worst]:.4g}",
                    f"a_{worst + 1}",
                    float(params[worst]),
                )
            logger.debug(f"Exponent overflow in {np.count_nonzero(overflow)} samples (a_{worst + 1})")

        if function.prefactor_index == 0:
            log_prefactor = np.zeros(n_samples)
            sign = np.ones(n_samples)
        else:
            prefactor = values[:, function.prefactor_index - 1]
            log_prefactor = np.log(np.abs(prefactor))
            sign = np.sign(prefactor)
        log_value = log_prefactor + exponent
        log_value[~valid | overflow] = np.nan
        logs.append(log_value)
        signs.append(sign)

        if derivatives:
            grad = np.einsum("sjp,j->sp", mono_grad, params) + asym_first
            hess = np.einsum("sjpq,j->spq", mono_hess, params) + _diagonal(asym_second)
            if function.prefactor_index:
                k = function.prefactor_index - 1
                ratio = mono_grad[:, k] / values[:, k, None]
                grad = grad + ratio
                hess = hess + mono_hess[:, k] / values[:, k, None, None] - np.einsum("sp,sq->spq", ratio, ratio)
            grads.append(grad)
            hessians.append(hess)

    logabs = np.stack(logs, axis=1)
    sign = np.stack(signs, axis=1)
    if not derivatives:
        return BasisValues(logabs, sign)
    gradient, laplacian = cartesian_derivatives(unit, distances, np.stack(grads, 1), np.stack(hessians, 1))
    return BasisValues(logabs, sign, gradient, laplacian)


def eval_log_basis(beta: BasisFunction, config: Configuration) -> tuple[float, float]:
    """(log|beta(R)|, sign) at one configuration."""
    values = _evaluate_functions((beta,), config.coords[None], derivatives=False, strict=True)
    return float(values.logabs[0, 0]), float(values.sign[0, 0])


@dataclass(frozen=True)
class BasisSet:
    """Ordered basis functions sharing one nonlinear parameter vector [a_1..a_J, scale, c5, kappa]."""

    functions: tuple[BasisFunction, ...]

    def __post_init__(self):
        functions = tuple(self.functions)
        if not functions:
            raise ConfigValidationError("A basis set needs at least one function")
        if len({f.n_atoms for f in functions}) != 1:
            raise ConfigValidationError("All basis functions must share the atom count")
        object.__setattr__(self, "functions", functions)

    @classmethod
    def symmetric(
        cls,
        n_atoms: int,
        size: int,
        degree_cap: int = DEFAULT_DEGREE_CAP,
        scale: float = 1.0,
        c5: float = 1.0,
        kappa: float = 1.0,
        exponent_params=None,
    ) -> "BasisSet":
        """Basis whose k-th function carries the k-th prefactor (the constant first)."""
        monomials = symmetrized_monomials(n_atoms, degree_cap)
        if not 1 <= size <= len(monomials) + 1:
            raise ParameterRangeError(
                f"Basis size {size} needs 1..{len(monomials) + 1} prefactors (N={n_atoms}, cap={degree_cap})",
                "basis_size",
                size,
            )
        params = np.zeros(len(monomials)) if exponent_params is None else np.asarray(exponent_params, dtype=float)
        asymptotics = PairAsymptotics(c5, kappa)
        return cls(tuple(BasisFunction(n_atoms, k, params, asymptotics, scale, degree_cap) for k in range(size)))

    @classmethod
    def for_mass(cls, n_atoms: int, size: int, inv_mass: float, degree_cap: int = DEFAULT_DEGREE_CAP) -> "BasisSet":
        """Starting point peaked at r = 1 with the harmonic pair curvature.

        c5 = sqrt(m)/5 cancels the r^-12 divergence of the local energy and
        kappa = 5 c5 puts the maximum of exp(A) at r = 1.
        """
        root_mass = (1.0 / inv_mass) ** 0.5
        return cls.symmetric(n_atoms, size, degree_cap, scale=1.0, c5=root_mass / 5.0, kappa=root_mass)

    @property
    def size(self) -> int:
        return len(self.functions)

    @property
    def n_atoms(self) -> int:
        return self.functions[0].n_atoms

    @property
    def degree_cap(self) -> int:
        return self.functions[0].degree_cap

    @property
    def prefactor_indices(self) -> list[int]:
        return [f.prefactor_index for f in self.functions]

    def evaluate(self, coords: np.ndarray, derivatives: bool = True, strict: bool = True) -> BasisValues:
        return _evaluate_functions(self.functions, coords, derivatives, strict)

    def nonlinear_vector(self) -> np.ndarray:
        head = self.functions[0]
        return np.concatenate(
            [head.nonlinear_params, [head.scale, head.asymptotics.c5, head.asymptotics.kappa]]
        )

    def with_nonlinear_vector(self, vector) -> "BasisSet":
        vector = np.asarray(vector, dtype=float)
        scale, c5, kappa = (float(v) for v in vector[-3:])
        asymptotics = PairAsymptotics(c5, kappa)
        return BasisSet(
            tuple(
                BasisFunction(f.n_atoms, f.prefactor_index, vector[:-3], asymptotics, scale, f.degree_cap)
                for f in self.functions
            )
        )

    def bounds(self) -> Bounds:
        count = len(self.functions[0].nonlinear_params)
        lower = [-EXPONENT_BOUND] * count + [SCALE_BOUNDS[0], ASYMPTOTIC_BOUNDS[0], ASYMPTOTIC_BOUNDS[0]]
        upper = [EXPONENT_BOUND] * count + [SCALE_BOUNDS[1], ASYMPTOTIC_BOUNDS[1], ASYMPTOTIC_BOUNDS[1]]
        return Bounds(np.array(lower), np.array(upper))

    def parameter_names(self) -> list[str]:
        count = len(self.functions[0].nonlinear_params)
        return [f"a_{j + 1}" for j in range(count)] + ["scale", "c5", "kappa"]

    def reordered(self, order) -> "BasisSet":
        return BasisSet(tuple(self.functions[k] for k in order))


def combine_basis_values(values: BasisValues, coeffs: np.ndarray, strict: bool = True) -> WavefunctionValues:
    """Log-sum-exp assembly of sum_k d_k beta_k and its log-derivatives."""
    coeffs = np.asarray(coeffs)
    with np.errstate(all="ignore"):
        logabs = values.logabs
        failed = np.any(np.isnan(logabs), axis=1)
        finite = np.isfinite(logabs)
        peak = np.max(np.where(finite, logabs, -np.inf), axis=1)
        failed |= ~np.isfinite(peak)
        shifted = np.exp(np.where(finite, logabs - np.where(failed, 0.0, peak)[:, None], -np.inf))
        weights = coeffs * values.sign * shifted
        total = weights.sum(axis=1)
        node = np.abs(total) <= NODE_TOLERANCE * np.abs(weights).sum(axis=1)
        if strict and np.any(node & ~failed):
            sample = int(np.argmax(node & ~failed))
            raise NodeProximityError(f"Wavefunction vanishes at sample {sample} (|sum|={abs(total[sample]):.3e})")
        if strict and failed.any():
            raise NodeProximityError(f"Wavefunction not evaluable at sample {int(np.argmax(failed))}")
        failed |= node
        combined = np.where(failed, np.nan, peak + np.log(np.abs(total)))
        sign = np.where(failed, np.nan, np.sign(total))
        if values.gradient is None:
            return WavefunctionValues(combined, sign)
        fractions = np.where(failed[:, None], 0.0, weights / total[:, None])
        basis_gradient = np.nan_to_num(values.gradient)
        basis_laplacian = np.nan_to_num(values.laplacian)
        gradient = np.einsum("sk,skdn->sdn", fractions, basis_gradient)
        second = np.einsum("sk,skn->sn", fractions, basis_laplacian + np.sum(basis_gradient**2, axis=2))
        laplacian = second - np.sum(gradient**2, axis=1)
        gradient[failed] = np.nan
        laplacian[failed] = np.nan
    return WavefunctionValues(combined, sign, gradient, laplacian)


@dataclass(frozen=True, eq=False)
class TrialWavefunction:
    """Linear combination psi = sum_k d_k beta_k of one state."""

    basis: Basis
    linear_coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.linear_coeffs, dtype=float).ravel()
        if coeffs.size != self.basis.size:
            raise ConfigValidationError(f"Need {self.basis.size} linear coefficients, got {coeffs.size}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "linear_coeffs", coeffs)

    def evaluate(self, coords: np.ndarray, derivatives: bool = True, strict: bool = True) -> WavefunctionValues:
        return combine_basis_values(self.basis.evaluate(coords, derivatives, strict), self.linear_coeffs, strict)

    def combine(self, values: BasisValues, strict: bool = True) -> WavefunctionValues:
        return combine_basis_values(values, self.linear_coeffs, strict)

    def log_value(self, config: Configuration) -> tuple[float, float]:
        values = self.evaluate(config.coords[None], derivatives=False)
        return float(values.logabs[0]), float(values.sign[0])


@dataclass(frozen=True)
class LogDerivatives:
    gradient: np.ndarray
    laplacian: np.ndarray

    @property
    def laplacian_sum(self) -> float:
        return float(self.laplacian.sum())


def log_derivatives(psi: TrialWavefunction, config: Configuration) -> LogDerivatives:
    """Gradient (D x N) and per-atom Laplacians of log psi at one configuration."""
    values = psi.evaluate(config.coords[None], derivatives=True, strict=True)
    return LogDerivatives(values.gradient[0], values.laplacian[0])


@dataclass(frozen=True, eq=False)
class GuidingFunction:
    """Nodeless sampling function with psi_g^2 = |psi|^(2/rho)."""

    base: TrialWavefunction
    rho: float = DEFAULT_RHO

    def __post_init__(self):
        low, high = RHO_RANGE
        if not low <= self.rho <= high:
            raise ConfigValidationError(f"rho must lie in [{low}, {high}], got {self.rho}")

    def from_base(self, values: WavefunctionValues) -> WavefunctionValues:
        """Scale base log-derivatives by 1/rho; the sign of psi_g is always +1."""
        inverse = 1.0 / self.rho
        sign = np.where(np.isnan(values.logabs), np.nan, 1.0)
        if values.gradient is None:
            return WavefunctionValues(inverse * values.logabs, sign)
        return WavefunctionValues(inverse * values.logabs, sign, inverse * values.gradient, inverse * values.laplacian)

    def evaluate(self, coords: np.ndarray, derivatives: bool = True, strict: bool = False) -> WavefunctionValues:
        return self.from_base(self.base.evaluate(coords, derivatives, strict))

    def log_density(self, coords: np.ndarray, strict: bool = False) -> np.ndarray:
        """log psi_g^2 per sample; NaN where the base cannot be evaluated."""
        return 2.0 * self.evaluate(coords, derivatives=False, strict=strict).logabs


@dataclass(frozen=True, eq=False)
class ProjectionGuide(GuidingFunction):
    """psi_g = |psi| (rho = 1), driving the projection walk with the trial function's own local energy."""

    rho: float = 1.0

    def __post_init__(self):
        if self.rho != 1.0:
            raise ConfigValidationError(f"A projection guide has rho = 1, got {self.rho}")


@dataclass(frozen=True)
class GuidingWeight:
    log_density: float
    reweighted: np.ndarray


def guiding_weight(g: GuidingFunction, config: Configuration) -> GuidingWeight:
    """log psi_g^2 and the reweighted basis values beta_i / psi_g at one configuration."""
    values = g.base.basis.evaluate(config.coords[None], derivatives=False, strict=True)
    base = g.base.combine(values, strict=True)
    log_guide = float(base.logabs[0]) / g.rho
    reweighted = values.sign[0] * np.exp(values.logabs[0] - log_guide)
    return GuidingWeight(2.0 * log_guide, reweighted)


class WavefunctionRecord(BaseModel):
    """Serialized optimized wavefunction: basis, coefficient matrix and guiding exponent."""

    species: str
    n_atoms: int = Field(..., ge=2)
    dim: int = Field(..., ge=1)
    basis_size: int = Field(..., ge=1)
    degree_cap: int = Field(..., ge=1)
    prefactor_indices: list[int]
    nonlinear_params: list[float]
    linear_coefficients: list[list[float]]
    rho: float = DEFAULT_RHO
    energies: list[float] = Field(default_factory=list)
    seed: int | None = None

    @classmethod
    def from_basis(
        cls,
        species: str,
        dim: int,
        basis: BasisSet,
        coefficients,
        rho: float = DEFAULT_RHO,
        energies=None,
        seed: int | None = None,
    ) -> "WavefunctionRecord":
        matrix = np.atleast_2d(np.asarray(coefficients, dtype=float))
        return cls(
            species=species,
            n_atoms=basis.n_atoms,
            dim=dim,
            basis_size=basis.size,
            degree_cap=basis.degree_cap,
            prefactor_indices=basis.prefactor_indices,
            nonlinear_params=basis.nonlinear_vector().tolist(),
            linear_coefficients=matrix.tolist(),
            rho=rho,
            energies=[] if energies is None else [float(e) for e in energies],
            seed=seed,
        )

    def basis(self) -> BasisSet:
        vector = np.asarray(self.nonlinear_params, dtype=float)
        asymptotics = PairAsymptotics(float(vector[-2]), float(vector[-1]))
        functions = tuple(
            BasisFunction(self.n_atoms, k, vector[:-3], asymptotics, float(vector[-3]), self.degree_cap)
            for k in self.prefactor_indices
        )
        if len(functions) != self.basis_size:
            raise ConfigValidationError("basis_size does not match the prefactor list")
        return BasisSet(functions)

    def wavefunction(self, state: int = 0) -> TrialWavefunction:
        return TrialWavefunction(self.basis(), self.linear_coefficients[state])

    def guiding_function(self) -> GuidingFunction:
        return GuidingFunction(self.wavefunction(0), self.rho)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))
        logger.info(f"Wavefunction written to {path}")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "WavefunctionRecord":
        return cls.model_validate_json(Path(path).read_text())
