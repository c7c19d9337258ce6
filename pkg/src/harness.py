"""Experiment harness: configure a dimension scan, run optimize -> VMC -> CFMC per D, fit and report."""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from dotenv import dotenv_values
from jinja2 import Environment, FileSystemLoader
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.config import (
    DEFAULT_DEGREE_CAP,
    DEFAULT_RHO,
    JACKKNIFE_GROUPS,
    LOG_LEVEL,
    MIN_EQUILIBRATION_SWEEPS,
    OUTPUT_DIR,
    SVD_THRESHOLD,
    TEMPLATE_DIR,
    TIME_MAX_FACTOR,
    TIME_POINTS,
    TIME_STEP_FACTOR,
)
from src.errors import ClusterQMCError, ConfigValidationError, FitError
from src.hamiltonian import Hamiltonian, SpeciesTable, classical_minimum
from src.projector import extrapolate_levels, project
from src.reference_data import published_level
from src.sampler import WalkerEnsemble, autotune_step, equilibrate, sample
from src.spectral import accumulate, jackknife_levels, matrix_threshold, optimize_nonlinear
from src.wavefunction import (
    BasisSet,
    GuidingFunction,
    ProjectionGuide,
    TrialWavefunction,
    WavefunctionRecord,
    symmetrized_monomials,
)

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)

CSV_COLUMNS = ["species", "N", "D", "k", "E", "error", "method", "dE"]
CSV_META_PREFIX = "#"
REPORT_TEMPLATE = "report_template.txt"

STAGE_OPTIMIZE = 0
STAGE_VMC = 1
STAGE_CFMC = 2


class ExperimentConfig(BaseModel):
    """One dimension scan for one cluster; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    species: str
    n_atoms: int = Field(..., ge=2)
    dims: list[int]
    n_states: int = Field(1, ge=1)
    basis_size: int | None = Field(None, ge=1)
    degree_cap: int | None = Field(None, ge=1)
    optimization_samples: int = Field(10_000, ge=1)
    optimization_rounds: int = Field(2, ge=1)
    max_evaluations: int = Field(300, ge=1)
    production_samples: int = Field(1_000_000, ge=1)
    production_batches: int = Field(JACKKNIFE_GROUPS, ge=2)
    n_walkers: int = Field(200, ge=1)
    thin: int = Field(5, ge=1)
    equilibration_sweeps: int = Field(MIN_EQUILIBRATION_SWEEPS, ge=0)
    cfmc_walkers: int = Field(200, ge=1)
    cfmc_steps: int = Field(4000, ge=2)
    time_step_factor: float = Field(TIME_STEP_FACTOR, gt=0)
    time_max_factor: float = Field(TIME_MAX_FACTOR, gt=0)
    time_points: int = Field(TIME_POINTS, ge=3)
    svd_threshold: float = Field(SVD_THRESHOLD, gt=0, lt=1)
    rho: float = Field(DEFAULT_RHO, ge=2.0, le=3.0)
    seed: int = Field(0, ge=0)
    output: str = OUTPUT_DIR
    fit_d_min: int | None = None
    fit_center: float | None = None
    run_cfmc: bool = True

    @field_validator("dims", mode="before")
    @classmethod
    def split_dims(cls, value):
        if isinstance(value, str):
            value = [part.strip() for part in value.split(",") if part.strip()]
        return value

    @field_validator("dims")
    @classmethod
    def check_dims(cls, value: list[int]) -> list[int]:
        if not value:
            raise ValueError("dims must list at least one dimension")
        if any(d < 1 for d in value):
            raise ValueError(f"dimensions must be >= 1, got {value}")
        if len(set(value)) != len(value):
            raise ValueError(f"dimensions must be distinct, got {value}")
        return value

    @field_validator("species")
    @classmethod
    def known_species(cls, value: str) -> str:
        return SpeciesTable().resolve(value)

    @model_validator(mode="after")
    def fill_defaults(self) -> "ExperimentConfig":
        if self.basis_size is None:
            self.basis_size = 8 if self.n_atoms <= 3 else 12
        if self.degree_cap is None:
            self.degree_cap = DEFAULT_DEGREE_CAP
            while len(symmetrized_monomials(self.n_atoms, self.degree_cap)) + 1 < self.basis_size:
                self.degree_cap += 1
        elif len(symmetrized_monomials(self.n_atoms, self.degree_cap)) + 1 < self.basis_size:
            raise ValueError(f"degree_cap {self.degree_cap} gives fewer than basis_size={self.basis_size} prefactors")
        if self.n_states > self.basis_size:
            raise ValueError(f"n_states ({self.n_states}) exceeds basis_size ({self.basis_size})")
        if self.fit_d_min is None:
            self.fit_d_min = max(1, self.n_atoms - 1)
        if self.fit_center is None:
            self.fit_center = float(self.n_atoms)
        return self

    @property
    def inv_mass(self) -> float:
        return SpeciesTable().inverse_mass(self.species)

    @property
    def label(self) -> str:
        return f"{self.species}{self.n_atoms}"


def load_experiment_config(path: str | Path, overrides: Mapping | None = None) -> ExperimentConfig:
    """Read a flat ``key = value`` file; keys are case-insensitive.

    Raises:
        ConfigValidationError: If the file is missing or any key or value is invalid.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigValidationError(f"Config file not found: {path}")
    values = {key.lower(): value for key, value in dotenv_values(path).items()}
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        config = ExperimentConfig(**values)
    except ValidationError as error:
        raise ConfigValidationError(f"Invalid experiment config {path}: {error}") from error
    logger.info(f"Loaded experiment {config.label} over D={config.dims} from {path}")
    return config


def dimension_seed(master_seed: int, dim: int, stage: int = STAGE_OPTIMIZE) -> int:
    """Independent, reproducible seed for one (dimension, stage) job."""
    return int(np.random.SeedSequence([master_seed, dim, stage]).generate_state(1)[0])


def time_grid(time_step: float, time_max: float, points: int) -> np.ndarray:
    """About ``points`` projection times from 0 to ``time_max`` that are multiples of ``time_step``."""
    last = max(int(round(time_max / time_step)), points - 1)
    lags = np.unique(np.rint(np.linspace(0, last, points)).astype(int))
    return lags * time_step


class ResultRow(BaseModel):
    species: str
    n_atoms: int
    dim: int
    level: int
    energy: float
    error: float
    method: str
    deviation: float | None = None


class DimensionFailure(BaseModel):
    dim: int
    stage: str
    message: str


class ParabolaFit(BaseModel):
    """E(D) = offset + curvature * (D - center)^2 fitted over D >= d_min; deviations are fit - E."""

    center: float
    d_min: int
    offset: float
    curvature: float
    fitted_dims: list[int]
    deviations: dict[int, float]

    def evaluate(self, dim: float) -> float:
        return self.offset + self.curvature * (dim - self.center) ** 2


class DegeneracyCheck(BaseModel):
    level: int
    low_dim: int
    high_dim: int
    difference: float
    combined_error: float
    published_low: float | None = None
    published_high: float | None = None

    @property
    def significance(self) -> float:
        return abs(self.difference) / self.combined_error if self.combined_error > 0 else math.inf


class ResultTable(BaseModel):
    species: str
    n_atoms: int
    seed: int
    rows: list[ResultRow] = Field(default_factory=list)
    fit: ParabolaFit | None = None
    degeneracy: list[DegeneracyCheck] = Field(default_factory=list)
    failures: list[DimensionFailure] = Field(default_factory=list)

    def best_rows(self) -> dict[tuple[int, int], ResultRow]:
        """One row per (D, level), preferring CFMC over VMC."""
        best: dict[tuple[int, int], ResultRow] = {}
        for row in self.rows:
            key = (row.dim, row.level)
            if key not in best or (row.method == "CFMC" and best[key].method != "CFMC"):
                best[key] = row
        return best

    def energies(self, level: int = 1) -> dict[int, float]:
        return {dim: row.energy for (dim, k), row in sorted(self.best_rows().items()) if k == level}


def parabola_fit(table, d_min: int, center: float, level: int = 1) -> ParabolaFit:
    """Least-squares parabola with fixed center over D >= d_min.

    Args:
        table: ResultTable, or a mapping D -> energy.
        d_min: Smallest dimension included in the fit.
        center: Dimension of the parabola's extremum.
        level: State used when ``table`` is a ResultTable (1 = ground state).

    Raises:
        FitError: With fewer than three fitted points.
    """
    energies = table.energies(level) if isinstance(table, ResultTable) else {int(d): float(e) for d, e in table.items()}
    fitted = sorted(d for d in energies if d >= d_min)
    if len(fitted) < 3:
        raise FitError(f"Parabola fit needs at least 3 dimensions >= {d_min}, got {fitted}")
    x = np.array([(d - center) ** 2 for d in fitted], dtype=float)
    design = np.column_stack([np.ones_like(x), x])
    (offset, curvature), *_ = np.linalg.lstsq(design, np.array([energies[d] for d in fitted]), rcond=None)
    fit = ParabolaFit(
        center=center,
        d_min=d_min,
        offset=float(offset),
        curvature=float(curvature),
        fitted_dims=fitted,
        deviations={},
    )
    fit.deviations = {d: fit.evaluate(d) - energies[d] for d in sorted(energies)}
    logger.info(f"Parabola fit: E(D) = {offset:.10f} + {curvature:.6e} (D - {center})^2 over D={fitted}")
    return fit


def degeneracy_checks(table: ResultTable) -> list[DegeneracyCheck]:
    """|E_k(N-1) - E_k(N+1)| against the combined error, for every level measured in both."""
    low, high = table.n_atoms - 1, table.n_atoms + 1
    best = table.best_rows()
    checks = []
    for (dim, level), row in sorted(best.items()):
        partner = best.get((high, level))
        if dim != low or partner is None:
            continue
        combined = math.hypot(row.error, partner.error)
        checks.append(
            DegeneracyCheck(
                level=level,
                low_dim=low,
                high_dim=high,
                difference=row.energy - partner.energy,
                combined_error=combined,
                published_low=published_level(table.species, table.n_atoms, low, level),
                published_high=published_level(table.species, table.n_atoms, high, level),
            )
        )
    return checks


@dataclass
class DimensionResult:
    dim: int
    rows: list[ResultRow] = field(default_factory=list)
    failure: DimensionFailure | None = None


class VmcRecord(BaseModel):
    """Production VMC energies for one dimension."""

    dim: int
    energies: list[float]
    errors: list[float]
    samples: int
    acceptance: float

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.model_dump_json(indent=2))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "VmcRecord":
        return cls.model_validate_json(Path(path).read_text())


class ExperimentRunner:
    """Run the per-dimension pipeline of one experiment and keep its stage artifacts."""

    def __init__(self, config: ExperimentConfig, out_dir: str | Path | None = None):
        """Initialize the runner.

        Args:
            config: Validated experiment configuration.
            out_dir: Directory for stage artifacts; defaults to ``config.output``.
        """
        self.config = config
        self.out_dir = Path(out_dir if out_dir is not None else config.output)
        self.species_table = SpeciesTable()

    def artifact_path(self, dim: int, name: str) -> Path:
        return self.out_dir / f"{self.config.label}_D{dim}" / name

    def hamiltonian(self, dim: int) -> Hamiltonian:
        return Hamiltonian.from_spec(self.species_table.cluster(self.config.species, self.config.n_atoms, dim))

    def reference_geometry(self, dim: int) -> np.ndarray:
        minimum = classical_minimum(self.config.n_atoms, dim, n_starts=8, seed=self.config.seed)
        return np.array(minimum.configuration.coords)

    def _ensemble(self, dim: int, guiding, n_walkers: int, seed: int) -> WalkerEnsemble:
        ensemble = WalkerEnsemble.initialize(guiding, self.reference_geometry(dim), n_walkers, seed)
        tuning = autotune_step(ensemble, guiding)
        ensemble = replace(ensemble, step_scale=tuning.step_scale)
        return equilibrate(ensemble, guiding, self.config.equilibration_sweeps).ensemble

    def optimize(self, dim: int) -> WavefunctionRecord:
        """Fit nonlinear and linear parameters on fixed samples, resampling between rounds."""
        config = self.config
        seed = dimension_seed(config.seed, dim, STAGE_OPTIMIZE)
        hamiltonian = self.hamiltonian(dim)
        basis = BasisSet.for_mass(config.n_atoms, config.basis_size, config.inv_mass, config.degree_cap)
        start = np.zeros(basis.size)
        start[0] = 1.0
        guiding = GuidingFunction(TrialWavefunction(basis, start), config.rho)
        states = tuple(range(config.n_states))
        result = None
        for round_index in range(config.optimization_rounds):
            ensemble = self._ensemble(dim, guiding, config.n_walkers, seed + round_index)
            samples = sample(ensemble, guiding, config.optimization_samples, config.thin).samples
            result = optimize_nonlinear(
                basis,
                samples,
                guiding,
                hamiltonian,
                states=states,
                svd_threshold=config.svd_threshold,
                max_evaluations=config.max_evaluations,
            )
            basis = result.basis
            guiding = GuidingFunction(result.spectrum.wavefunction(basis, 0), config.rho)
            logger.info(f"D={dim} round {round_index + 1}: E={result.spectrum.eigenvalues[: config.n_states]}")
        coefficients = [result.spectrum.coefficients(k) for k in states]
        record = WavefunctionRecord.from_basis(
            config.species,
            dim,
            basis,
            coefficients,
            rho=config.rho,
            energies=result.spectrum.eigenvalues[: config.n_states],
            seed=seed,
        )
        record.save(self.artifact_path(dim, "wavefunction.json"))
        return record

    def vmc(self, dim: int, record: WavefunctionRecord | None = None) -> VmcRecord:
        """Production VMC in batches; errors by jackknife over the batches."""
        config = self.config
        record = record or WavefunctionRecord.load(self.artifact_path(dim, "wavefunction.json"))
        basis = record.basis()
        guiding = record.guiding_function()
        hamiltonian = self.hamiltonian(dim)
        ensemble = self._ensemble(dim, guiding, config.n_walkers, dimension_seed(config.seed, dim, STAGE_VMC))
        batch = math.ceil(config.production_samples / config.production_batches)
        overlaps, hamiltonians, scales = [], [], []
        acceptance = []
        for index in range(config.production_batches):
            run = sample(ensemble, guiding, batch, config.thin)
            ensemble = run.ensemble
            acceptance.append(ensemble.acceptance)
            acc = accumulate(run.samples, basis, guiding, hamiltonian)
            overlaps.append(acc.overlap)
            hamiltonians.append(acc.hamiltonian)
            scales.append(acc.log_scale)
            logger.debug(f"D={dim} production batch {index + 1}/{config.production_batches} done")
        reference = max(scales)
        factors = np.exp(2.0 * (np.array(scales) - reference))[:, None, None]
        levels = jackknife_levels(
            np.stack(overlaps) * factors,
            np.stack(hamiltonians) * factors,
            config.n_states,
            matrix_threshold(config.svd_threshold),
        )
        result = VmcRecord(
            dim=dim,
            energies=levels.energies.tolist(),
            errors=levels.errors.tolist(),
            samples=batch * config.production_batches,
            acceptance=float(np.mean(acceptance)),
        )
        result.save(self.artifact_path(dim, "vmc.json"))
        logger.info(f"D={dim} VMC: E={result.energies} +- {result.errors}")
        return result

    def cfmc(self, dim: int, record: WavefunctionRecord | None = None, vmc: VmcRecord | None = None):
        """Project the optimized basis with E_ref fixed at the VMC ground-state energy.

        The walk is guided by |psi_0| itself, so the weights fluctuate only with its local energy.
        """
        config = self.config
        record = record or WavefunctionRecord.load(self.artifact_path(dim, "wavefunction.json"))
        vmc = vmc or VmcRecord.load(self.artifact_path(dim, "vmc.json"))
        guiding = ProjectionGuide(record.wavefunction(0))
        basis = guiding.base.basis
        seed = dimension_seed(config.seed, dim, STAGE_CFMC)
        ensemble = self._ensemble(dim, guiding, config.cfmc_walkers, seed)
        # Vibrational periods scale as sqrt(m).
        time_unit = config.inv_mass ** -0.5
        time_step = config.time_step_factor * time_unit
        times = time_grid(time_step, config.time_max_factor * time_unit, config.time_points)
        run = project(
            basis,
            guiding,
            self.hamiltonian(dim),
            times,
            ensemble.walkers,
            max(config.cfmc_steps, int(round(times[-1] / time_step)) + 1),
            time_step,
            vmc.energies[0],
            master_seed=seed,
            n_states=config.n_states,
            svd_threshold=config.svd_threshold,
        )
        run.to_record().save(self.artifact_path(dim, "projection.json"))
        return extrapolate_levels(run)[: config.n_states]

    def run_dimension(self, dim: int) -> DimensionResult:
        """All stages for one D; the first failing stage is recorded and ends the job."""
        config = self.config
        result = DimensionResult(dim)
        stage = "optimize"
        try:
            record = self.optimize(dim)
            stage = "vmc"
            vmc = self.vmc(dim, record)
            for k, (energy, error) in enumerate(zip(vmc.energies, vmc.errors), start=1):
                result.rows.append(ResultRow(species=config.species, n_atoms=config.n_atoms, dim=dim, level=k, energy=energy, error=error, method="VMC"))
            if config.run_cfmc:
                stage = "cfmc"
                for level in self.cfmc(dim, record, vmc):
                    result.rows.append(
                        ResultRow(
                            species=config.species,
                            n_atoms=config.n_atoms,
                            dim=dim,
                            level=level.state + 1,
                            energy=level.energy,
                            error=level.error,
                            method="CFMC",
                        )
                    )
        except ClusterQMCError as error:
            logger.error(f"D={dim} failed in stage {stage}: {error}")
            result.failure = DimensionFailure(dim=dim, stage=stage, message=str(error))
        return result


def _run_dimension_job(config: ExperimentConfig, out_dir: str, dim: int) -> DimensionResult:
    return ExperimentRunner(config, out_dir).run_dimension(dim)


def assemble_table(config: ExperimentConfig, results: list[DimensionResult]) -> ResultTable:
    """Collect per-D results, fit the ground state and attach deviations and the degeneracy footer."""
    table = ResultTable(species=config.species, n_atoms=config.n_atoms, seed=config.seed)
    for result in sorted(results, key=lambda r: r.dim):
        table.rows.extend(result.rows)
        if result.failure is not None:
            table.failures.append(result.failure)
    try:
        table.fit = parabola_fit(table, config.fit_d_min, config.fit_center)
    except FitError as error:
        logger.warning(f"No parabola fit: {error}")
    if table.fit is not None:
        for row in table.rows:
            if row.level == 1 and row.dim in table.fit.deviations:
                row.deviation = table.fit.evaluate(row.dim) - row.energy
    table.degeneracy = degeneracy_checks(table)
    return table


def run_experiment(config: ExperimentConfig, parallel_dims: int = 1, out_dir: str | Path | None = None) -> ResultTable:
    """Run every configured dimension and assemble the result table.

    Dimensions run as independent jobs seeded from (seed, D), so the table does not
    depend on ``parallel_dims``.
    """
    out = str(out_dir if out_dir is not None else config.output)
    if parallel_dims > 1 and len(config.dims) > 1:
        with ProcessPoolExecutor(max_workers=min(parallel_dims, len(config.dims))) as pool:
            results = list(pool.map(_run_dimension_job, [config] * len(config.dims), [out] * len(config.dims), config.dims))
    else:
        runner = ExperimentRunner(config, out)
        results = [runner.run_dimension(dim) for dim in config.dims]
    table = assemble_table(config, results)
    logger.info(f"Experiment {config.label}: {len(table.rows)} rows, {len(table.failures)} failed dimensions")
    return table


def _format(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_table_csv(table: ResultTable, path: str | Path) -> Path:
    """Write the rows under a ``# species=.. N=.. seed=..`` line so the table can be read back whole."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"{CSV_META_PREFIX} species={table.species} N={table.n_atoms} seed={table.seed}\n")
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for row in table.rows:
            writer.writerow(
                [row.species, row.n_atoms, row.dim, row.level, _format(row.energy), _format(row.error), row.method, _format(row.deviation)]
            )
    return path


def read_table_csv(path: str | Path) -> ResultTable:
    """Table of an emitted CSV; fit and footer are not part of the CSV.

    Raises:
        ConfigValidationError: If the identifying line or the columns are missing or malformed.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        meta = _parse_csv_meta(f.readline(), path)
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_COLUMNS:
            raise ConfigValidationError(f"Unexpected CSV columns in {path}: {reader.fieldnames}")
        for entry in reader:
            rows.append(
                ResultRow(
                    species=entry["species"],
                    n_atoms=int(entry["N"]),
                    dim=int(entry["D"]),
                    level=int(entry["k"]),
                    energy=float(entry["E"]),
                    error=float(entry["error"]),
                    method=entry["method"],
                    deviation=float(entry["dE"]) if entry["dE"] else None,
                )
            )
    return ResultTable(species=meta["species"], n_atoms=int(meta["N"]), seed=int(meta["seed"]), rows=rows)


def _parse_csv_meta(line: str, path) -> dict[str, str]:
    if not line.startswith(CSV_META_PREFIX):
        raise ConfigValidationError(f"{path} has no '{CSV_META_PREFIX} species=.. N=.. seed=..' line")
    meta = dict(token.split("=", 1) for token in line[len(CSV_META_PREFIX):].split() if "=" in token)
    missing = {"species", "N", "seed"} - meta.keys()
    if missing:
        raise ConfigValidationError(f"{path} is missing {sorted(missing)} in its identifying line")
    try:
        int(meta["N"]), int(meta["seed"])
    except ValueError as e:
        raise ConfigValidationError(f"Malformed identifying line in {path}: {line.strip()}") from e
    return meta


def render_report(table: ResultTable, template_dir: str = TEMPLATE_DIR) -> str:
    environment = Environment(loader=FileSystemLoader(template_dir), keep_trailing_newline=True)
    return environment.get_template(REPORT_TEMPLATE).render(table=table, fmt=_format)


def emit_table(table: ResultTable, out_dir: str | Path, formats=("csv", "report"), stem: str | None = None) -> list[Path]:
    """Write the table as CSV and/or a text report.

    Returns:
        The written paths.

    Raises:
        OSError: If the directory or a file cannot be written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{table.species}{table.n_atoms}_results"
    written = []
    for fmt in formats:
        if fmt == "csv":
            written.append(write_table_csv(table, out_dir / f"{stem}.csv"))
        elif fmt == "report":
            path = out_dir / f"{stem}.txt"
            path.write_text(render_report(table))
            written.append(path)
        else:
            raise ConfigValidationError(f"Unknown table format '{fmt}'")
    for path in written:
        logger.info(f"Wrote {path}")
    return written
