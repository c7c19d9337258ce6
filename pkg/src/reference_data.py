"""Published S-state energies of small rare-gas clusters in D = 1..6.

Energies are kept as the printed strings so that the least significant printed
digit (the quoted uncertainty) survives. Deviations are the printed
differences from a parabola with its minimum at D = N fitted over
D >= ``fit_d_min``.
"""

from dataclasses import dataclass, field

from src.errors import ConfigValidationError


def printed_uncertainty(text: str) -> float:
    """One unit in the last printed decimal place of ``text``."""
    _, _, decimals = text.partition(".")
    return 10.0 ** -len(decimals)


@dataclass(frozen=True)
class GroundStateTable:
    species: str
    n_atoms: int
    energies: dict[int, str]
    deviations: dict[int, float]
    fit_d_min: int

    @property
    def center(self) -> int:
        return self.n_atoms

    def energy(self, dim: int) -> float:
        return float(self.energies[dim])

    def uncertainty(self, dim: int) -> float:
        return printed_uncertainty(self.energies[dim])

    def as_floats(self) -> dict[int, float]:
        return {dim: float(value) for dim, value in self.energies.items()}


@dataclass(frozen=True)
class ExcitedStateTable:
    """Levels E_k (k counted from 1 = ground state) per dimension."""

    species: str
    n_atoms: int
    levels: dict[int, dict[int, str]]
    converged: bool = True
    note: str = field(default="")

    def energy(self, dim: int, level: int) -> float:
        return float(self.levels[dim][level])

    def uncertainty(self, dim: int, level: int) -> float:
        return printed_uncertainty(self.levels[dim][level])


GROUND_STATES = {
    "Kr3": GroundStateTable(
        species="Kr",
        n_atoms=3,
        energies={
            1: "-1.8725485476",
            2: "-2.7604613515",
            3: "-2.7605552787",
            4: "-2.7604613513",
            5: "-2.7601795698",
            6: "-2.7597099376",
        },
        deviations={1: -9e-1, 2: 2e-10, 3: 6e-10, 4: -5e-11, 5: -1e-9, 6: 5e-10},
        fit_d_min=2,
    ),
    "Ar3": GroundStateTable(
        species="Ar",
        n_atoms=3,
        energies={
            1: "-1.73480871",
            2: "-2.55295322",
            3: "-2.55328943",
            4: "-2.55295322",
            5: "-2.55194461",
            6: "-2.55026364",
        },
        deviations={1: -8e-1, 2: -1e-9, 3: 1e-8, 4: -1e-9, 5: -2e-8, 6: 7e-9},
        fit_d_min=2,
    ),
    "half-Ne3": GroundStateTable(
        species="½-Ne",
        n_atoms=3,
        energies={
            1: "-0.895584",
            2: "-1.302484",
            3: "-1.308442",
            4: "-1.302483",
            5: "-1.284627",
            6: "-1.254901",
        },
        deviations={1: -4e-1, 2: -7e-7, 3: 9e-6, 4: -2e-6, 5: -1e-5, 6: 5e-6},
        fit_d_min=2,
    ),
    "Ar4": GroundStateTable(
        species="Ar",
        n_atoms=4,
        energies={
            1: "-2.62562256",
            2: "-4.32951795",
            3: "-5.11814605",
            4: "-5.11865384",
            5: "-5.11814605",
            6: "-5.11662270",
        },
        deviations={1: -2.0, 2: -8e-1, 3: -2e-9, 4: 3e-9, 5: -2e-9, 6: 1e-9},
        fit_d_min=3,
    ),
}

EXCITED_STATES = {
    "Ar3": ExcitedStateTable(
        species="Ar",
        n_atoms=3,
        levels={
            2: {2: "-2.2498602", 3: "-2.1260388", 4: "-1.996153", 5: "-1.9463"},
            3: {2: "-2.2501855", 3: "-2.126361", 4: "-1.99643", 5: "-1.9467"},
            4: {2: "-2.249860", 3: "-2.126039", 4: "-1.996153", 5: "-1.9463"},
        },
    ),
    "Ar4": ExcitedStateTable(
        species="Ar",
        n_atoms=4,
        levels={
            3: {2: "-4.80089773", 3: "-4.7251567", 4: "-4.630025", 5: "-4.586389"},
            5: {2: "-4.80089775", 3: "-4.7251566", 4: "-4.630025", 5: "-4.586384"},
        },
    ),
    "Ne5": ExcitedStateTable(
        species="Ne",
        n_atoms=5,
        levels={
            4: {1: "-5.82121", 2: "-5.3466", 3: "-5.26", 4: "-5.06", 5: "-4.95"},
            6: {1: "-5.82121", 2: "-5.3372", 3: "-5.18", 4: "-4.99", 5: "-4.91"},
        },
        converged=False,
        note="excited levels not converged for five atoms",
    ),
}

# Lowest total pair potential per (N, D); D beyond the last entry equals the last value.
CLASSICAL_MINIMA = {3: {1: -2.03, 2: -3.0}, 4: {1: -3.07, 2: -5.07, 3: -6.0}}


def ground_state_table(name: str) -> GroundStateTable:
    try:
        return GROUND_STATES[name]
    except KeyError:
        raise ConfigValidationError(f"No published table '{name}'; known: {sorted(GROUND_STATES)}") from None


def classical_minimum_reference(n_atoms: int, dim: int) -> float:
    table = CLASSICAL_MINIMA.get(n_atoms)
    if table is None:
        raise ConfigValidationError(f"No classical reference for N={n_atoms}")
    return table[min(dim, max(table))]


def published_level(species: str, n_atoms: int, dim: int, level: int) -> float | None:
    """Printed E_k for a cluster and dimension, or None when no converged value is tabulated."""
    for table in EXCITED_STATES.values():
        if (table.species, table.n_atoms) == (species, n_atoms) and table.converged and level in table.levels.get(dim, {}):
            return table.energy(dim, level)
    if level == 1:
        for table in GROUND_STATES.values():
            if (table.species, table.n_atoms) == (species, n_atoms) and dim in table.energies:
                return table.energy(dim)
    return None
