"""Test the Lennard-Jones Hamiltonian, local energies and classical minima."""

import math
import os
import sys
import unittest

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import ortho_group

# Add the parent directory to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import ConfigValidationError, DomainError, NodeProximityError
from src.geometry import Configuration, DistanceSet
from src.hamiltonian import (
    HarmonicPotential,
    Hamiltonian,
    LennardJonesPotential,
    SpeciesTable,
    classical_minimum,
    compensated_sum,
    lj_pair,
    lj_pair_derivative,
    total_potential,
)
from src.oscillator import HermiteBasis
from src.reference_data import classical_minimum_reference
from src.wavefunction import BasisSet, TrialWavefunction


class TestPairPotential(unittest.TestCase):
    """Dimensionless pair potential."""

    def test_minimum_at_unit_distance(self):
        self.assertEqual(lj_pair(1.0), -1.0)
        self.assertEqual(lj_pair_derivative(1.0), 0.0)

    def test_zero_crossing(self):
        self.assertAlmostEqual(lj_pair(2.0 ** (-1.0 / 6.0)), 0.0, places=12)

    def test_vectorized(self):
        np.testing.assert_allclose(lj_pair(np.array([1.0, 2.0])), [-1.0, 2.0**-12 - 2.0 * 2.0**-6])

    def test_derivative_matches_finite_difference(self):
        r, h = 1.37, 1e-6
        numeric = (lj_pair(r + h) - lj_pair(r - h)) / (2 * h)
        self.assertAlmostEqual(lj_pair_derivative(r), numeric, places=8)

    def test_nonpositive_distance(self):
        with self.assertRaises(DomainError):
            lj_pair(0.0)
        with self.assertRaises(DomainError):
            lj_pair_derivative(-1.0)

    def test_total_potential_of_triangle(self):
        self.assertEqual(total_potential(DistanceSet([1.0, 1.0, 1.0], 3)), -3.0)

    def test_compensated_sum(self):
        values = np.array([[1e16, 1.0, -1e16, 1.0]])
        self.assertEqual(compensated_sum(values)[0], 2.0)

    def test_batch_potential_matches_pair_sum(self):
        rng = np.random.default_rng(2)
        coords = rng.normal(size=(5, 3, 4)) * 1.5
        energies = LennardJonesPotential().energy(coords)
        expected = [float(np.sum(lj_pair(pdist(coords[s].T)))) for s in range(5)]
        np.testing.assert_allclose(energies, expected, rtol=1e-10)


class TestSpeciesTable(unittest.TestCase):
    """Species labels and masses."""

    def setUp(self):
        self.table = SpeciesTable()

    def test_aliases(self):
        self.assertEqual(self.table.resolve("half-Ne"), "½-Ne")
        self.assertAlmostEqual(self.table.inverse_mass("half-Ne"), 2 * self.table.inverse_mass("Ne"), places=12)

    def test_unknown_species(self):
        with self.assertRaises(ConfigValidationError):
            self.table.resolve("Xe")

    def test_cluster(self):
        spec = self.table.cluster("Ar", 3, 2)
        self.assertEqual(spec.species_label, "Ar")
        self.assertEqual(spec.inv_masses.shape, (3,))


class TestLocalEnergy(unittest.TestCase):
    """Local energies on exactly solvable wavefunctions."""

    def setUp(self):
        self.hamiltonian = Hamiltonian(np.ones(1), HarmonicPotential(1.0))
        self.basis = HermiteBasis.one_dimensional(3)

    def test_eigenfunctions_have_constant_local_energy(self):
        for k, expected in enumerate((0.5, 1.5, 2.5)):
            coeffs = np.zeros(3)
            coeffs[k] = 1.0
            psi = TrialWavefunction(self.basis, coeffs)
            for x in (-1.2, 0.3, 2.1):
                energy = self.hamiltonian.local_energy(psi, Configuration(np.array([[x]])))
                self.assertAlmostEqual(energy, expected, places=11)

    def test_local_energy_at_node_raises(self):
        psi = TrialWavefunction(self.basis, [0.0, 1.0, 0.0])
        with self.assertRaises(NodeProximityError):
            self.hamiltonian.local_energy(psi, Configuration(np.array([[0.0]])))

    def test_batched_local_energies(self):
        psi = TrialWavefunction(self.basis, [1.0, 0.0, 0.0])
        coords = np.linspace(-2, 2, 7).reshape(7, 1, 1)
        values = psi.evaluate(coords)
        np.testing.assert_allclose(self.hamiltonian.local_energies(coords, values), 0.5, atol=1e-12)

    def test_masses_must_be_positive(self):
        with self.assertRaises(ConfigValidationError):
            Hamiltonian(np.array([1.0, -1.0]))


class TestLocalEnergyInvariants(unittest.TestCase):
    """Local energy of a correlated three-atom wavefunction."""

    def setUp(self):
        basis = BasisSet.for_mass(3, 4, inv_mass=0.01, degree_cap=3)
        vector = basis.nonlinear_vector()
        vector[:-3] = 0.3 * np.random.default_rng(0).normal(size=vector.size - 3)
        self.psi = TrialWavefunction(basis.with_nonlinear_vector(vector), [1.0, -0.4, 0.2, 0.05])
        self.hamiltonian = Hamiltonian(np.full(3, 0.01))
        self.coords = np.array([[0.0, 1.05, 0.4], [0.0, 0.1, 0.95], [0.0, -0.05, 0.2]])

    def relative_value(self, coords, center):
        values = self.psi.evaluate(coords[None], derivatives=False)
        return float(values.sign[0] * center.sign[0] * np.exp(values.logabs[0] - center.logabs[0]))

    def test_matches_finite_difference_laplacian(self):
        center = self.psi.evaluate(self.coords[None], derivatives=False)
        step = 2e-3
        stencil = {1: 3.0 / 2.0, 2: -3.0 / 20.0, 3: 1.0 / 90.0}
        laplacian = 0.0
        for d in range(3):
            for n in range(3):
                second = -49.0 / 18.0
                for offset, weight in stencil.items():
                    for direction in (1.0, -1.0):
                        moved = self.coords.copy()
                        moved[d, n] += direction * offset * step
                        second += weight * self.relative_value(moved, center)
                laplacian += second / step**2
        expected = float(LennardJonesPotential().energy(self.coords[None])[0]) - 0.5 * 0.01 * laplacian
        energy = self.hamiltonian.local_energy(self.psi, Configuration(self.coords))
        self.assertAlmostEqual(energy, expected, delta=1e-8 * max(1.0, abs(expected)))

    def test_rigid_motions_leave_local_energy_unchanged(self):
        energy = self.hamiltonian.local_energy(self.psi, Configuration(self.coords))
        for seed in range(3):
            with self.subTest(seed=seed):
                rotation = ortho_group.rvs(3, random_state=seed)
                shift = np.random.default_rng(seed).normal(size=(3, 1)) * 5.0
                moved = rotation @ self.coords + shift
                self.assertAlmostEqual(
                    self.hamiltonian.local_energy(self.psi, Configuration(moved)),
                    energy,
                    delta=1e-10 * max(1.0, abs(energy)),
                )

    def test_atom_relabeling_leaves_local_energy_unchanged(self):
        energy = self.hamiltonian.local_energy(self.psi, Configuration(self.coords))
        relabeled = self.hamiltonian.local_energy(self.psi, Configuration(self.coords[:, [2, 0, 1]]))
        self.assertAlmostEqual(relabeled, energy, delta=1e-10 * max(1.0, abs(energy)))


class TestSummationOrder(unittest.TestCase):
    """Pair sums do not depend on the order of the terms."""

    def test_compensated_sum_is_order_independent(self):
        rng = np.random.default_rng(4)
        values = lj_pair(rng.uniform(0.95, 2.5, size=5000))
        exact = math.fsum(values)
        for ordered in (values, values[::-1], rng.permutation(values)):
            self.assertAlmostEqual(float(compensated_sum(ordered[None])[0]), exact, delta=1e-12 * abs(exact))

    def test_potential_is_independent_of_atom_order(self):
        rng = np.random.default_rng(5)
        coords = rng.uniform(-2.0, 2.0, size=(20, 3, 7))
        forward = LennardJonesPotential().energy(coords)
        for order in (np.arange(7)[::-1], rng.permutation(7)):
            np.testing.assert_allclose(LennardJonesPotential().energy(coords[:, :, order]), forward, rtol=1e-12, atol=1e-12)


class TestClassicalMinimum(unittest.TestCase):
    """Multistart search for the lowest total pair potential."""

    def test_reference_minima(self):
        for n_atoms, dim in ((3, 1), (3, 2), (3, 3), (4, 1), (4, 2), (4, 3)):
            result = classical_minimum(n_atoms, dim, n_starts=32, seed=0)
            self.assertAlmostEqual(result.energy, classical_minimum_reference(n_atoms, dim), delta=0.005)
            self.assertEqual(result.configuration.coords.shape, (dim, n_atoms))

    def test_invalid_arguments(self):
        with self.assertRaises(ConfigValidationError):
            classical_minimum(1, 3)


if __name__ == "__main__":
    unittest.main()
