"""Test the symmetrized trial wavefunction basis and the guiding function."""

import os
import sys
import tempfile
import unittest

import numpy as np

# Add the parent directory to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import ConfigValidationError, ParameterRangeError
from src.geometry import Configuration
from src.wavefunction import (
    BasisSet,
    GuidingFunction,
    PairAsymptotics,
    ProjectionGuide,
    TrialWavefunction,
    WavefunctionRecord,
    eval_log_basis,
    guiding_weight,
    log_derivatives,
    symmetrized_monomials,
)

COORDS = np.array([[[0.0, 1.05, 0.4], [0.0, 0.1, 0.95], [0.0, -0.05, 0.2]]])


def perturbed_basis(size=4, seed=0):
    basis = BasisSet.for_mass(3, size, inv_mass=0.01, degree_cap=3)
    rng = np.random.default_rng(seed)
    vector = basis.nonlinear_vector()
    vector[:-3] = 0.3 * rng.normal(size=vector.size - 3)
    return basis.with_nonlinear_vector(vector)


def numeric_derivatives(function, coords, step=1e-4):
    """Central-difference gradient and per-atom Laplacian of a scalar log function."""
    _, dim, n_atoms = coords.shape
    gradient = np.zeros((dim, n_atoms))
    laplacian = np.zeros(n_atoms)
    center = function(coords)
    for d in range(dim):
        for n in range(n_atoms):
            up, down = coords.copy(), coords.copy()
            up[0, d, n] += step
            down[0, d, n] -= step
            f_up, f_down = function(up), function(down)
            gradient[d, n] = (f_up - f_down) / (2 * step)
            laplacian[n] += (f_up - 2 * center + f_down) / step**2
    return gradient, laplacian


class TestMonomials(unittest.TestCase):
    """Permutation-invariant monomials of pair variables."""

    def test_counts(self):
        self.assertEqual(len(symmetrized_monomials(2, 3)), 3)
        self.assertEqual(len(symmetrized_monomials(3, 3)), 6)
        self.assertEqual(len(symmetrized_monomials(3, 4)), 10)

    def test_sorted_by_degree(self):
        degrees = [m.degree for m in symmetrized_monomials(4, 3)]
        self.assertEqual(degrees, sorted(degrees))
        self.assertEqual(degrees[0], 1)

    def test_orbit_sizes(self):
        first = symmetrized_monomials(4, 2)[0]
        self.assertEqual(first.orbit_size, 6)
        self.assertEqual(first.describe(), "sym(f01)")

    def test_invalid_cap(self):
        with self.assertRaises(ConfigValidationError):
            symmetrized_monomials(3, 0)


class TestBasisEvaluation(unittest.TestCase):
    """Values and log-derivatives of basis functions."""

    def setUp(self):
        self.basis = perturbed_basis()

    def test_permutation_invariance(self):
        values = self.basis.evaluate(COORDS)
        permuted = self.basis.evaluate(COORDS[:, :, [2, 0, 1]])
        np.testing.assert_allclose(values.logabs, permuted.logabs, rtol=1e-12)
        np.testing.assert_array_equal(values.sign, permuted.sign)

    def test_derivatives_match_finite_differences(self):
        values = self.basis.evaluate(COORDS)
        for k in range(self.basis.size):
            gradient, laplacian = numeric_derivatives(lambda c: self.basis.evaluate(c, derivatives=False).logabs[0, k], COORDS)
            np.testing.assert_allclose(values.gradient[0, k], gradient, atol=1e-5)
            np.testing.assert_allclose(values.laplacian[0, k], laplacian, atol=1e-3)

    def test_combined_wavefunction_derivatives(self):
        psi = TrialWavefunction(self.basis, [1.0, -0.4, 0.2, 0.05])
        derivatives = log_derivatives(psi, Configuration(COORDS[0]))
        gradient, laplacian = numeric_derivatives(lambda c: psi.evaluate(c, derivatives=False).logabs[0], COORDS)
        np.testing.assert_allclose(derivatives.gradient, gradient, atol=1e-5)
        np.testing.assert_allclose(derivatives.laplacian, laplacian, atol=1e-3)

    def test_combination_matches_direct_sum(self):
        coeffs = np.array([1.0, -0.4, 0.2, 0.05])
        values = self.basis.evaluate(COORDS, derivatives=False)
        direct = np.sum(coeffs * values.sign[0] * np.exp(values.logabs[0]))
        combined = TrialWavefunction(self.basis, coeffs).evaluate(COORDS, derivatives=False)
        self.assertAlmostEqual(combined.sign[0] * np.exp(combined.logabs[0]) / direct, 1.0, places=12)

    def test_single_function_evaluation_matches_basis(self):
        values = self.basis.evaluate(COORDS, derivatives=False)
        for k, beta in enumerate(self.basis.functions):
            with self.subTest(function=k):
                logabs, sign = eval_log_basis(beta, Configuration(COORDS[0]))
                self.assertAlmostEqual(logabs, values.logabs[0, k], delta=1e-12 * max(1.0, abs(values.logabs[0, k])))
                self.assertEqual(sign, values.sign[0, k])

    def test_exponent_overflow_names_parameter(self):
        vector = self.basis.nonlinear_vector()
        vector[0] = 5000.0
        basis = self.basis.with_nonlinear_vector(vector)
        with self.assertRaises(ParameterRangeError) as context:
            basis.evaluate(COORDS)
        self.assertEqual(context.exception.parameter, "a_1")
        relaxed = basis.evaluate(COORDS, strict=False)
        self.assertTrue(np.all(np.isnan(relaxed.logabs)))

    def test_asymptotic_parameters_must_be_positive(self):
        with self.assertRaises(ParameterRangeError):
            PairAsymptotics(0.0, 1.0)
        with self.assertRaises(ParameterRangeError):
            PairAsymptotics(1.0, -2.0)

    def test_basis_size_limit(self):
        with self.assertRaises(ParameterRangeError):
            BasisSet.symmetric(3, 8, degree_cap=3)

    def test_parameter_vector_round_trip(self):
        vector = self.basis.nonlinear_vector()
        self.assertEqual(len(self.basis.parameter_names()), vector.size)
        np.testing.assert_array_equal(self.basis.with_nonlinear_vector(vector).nonlinear_vector(), vector)
        bounds = self.basis.bounds()
        self.assertTrue(np.all(vector >= bounds.lb) and np.all(vector <= bounds.ub))


class TestGuidingFunction(unittest.TestCase):
    """Guiding function psi_g = |psi|^(1/rho)."""

    def setUp(self):
        self.basis = perturbed_basis()
        self.psi = TrialWavefunction(self.basis, [1.0, 0.3, 0.0, 0.0])

    def test_rho_range(self):
        with self.assertRaises(ConfigValidationError):
            GuidingFunction(self.psi, 1.5)

    def test_log_density(self):
        guide = GuidingFunction(self.psi, 2.5)
        expected = 2.0 / 2.5 * self.psi.evaluate(COORDS, derivatives=False).logabs
        np.testing.assert_allclose(guide.log_density(COORDS), expected, rtol=1e-14)
        self.assertEqual(guide.evaluate(COORDS).sign[0], 1.0)

    def test_projection_guide_is_the_trial_function(self):
        guide = ProjectionGuide(self.psi)
        values = self.psi.evaluate(COORDS)
        guided = guide.evaluate(COORDS)
        np.testing.assert_array_equal(guided.logabs, values.logabs)
        np.testing.assert_array_equal(guided.gradient, values.gradient)
        np.testing.assert_allclose(guide.log_density(COORDS), 2.0 * values.logabs, rtol=1e-14)
        with self.assertRaises(ConfigValidationError):
            ProjectionGuide(self.psi, 2.5)

    def test_reweighted_values(self):
        guide = GuidingFunction(self.psi, 2.0)
        weight = guiding_weight(guide, Configuration(COORDS[0]))
        values = self.basis.evaluate(COORDS, derivatives=False)
        log_guide = guide.evaluate(COORDS, derivatives=False).logabs[0]
        expected = values.sign[0] * np.exp(values.logabs[0] - log_guide)
        np.testing.assert_allclose(weight.reweighted, expected, rtol=1e-12)
        self.assertAlmostEqual(weight.log_density, 2.0 * log_guide, places=12)


class TestWavefunctionRecord(unittest.TestCase):
    """Serialized wavefunction parameters."""

    def test_save_and_load(self):
        basis = perturbed_basis(seed=4)
        coefficients = [[1.0, 0.1, -0.2, 0.0], [0.3, 1.0, 0.0, 0.5]]
        record = WavefunctionRecord.from_basis("Ar", 3, basis, coefficients, rho=2.5, energies=[-2.5, -2.2], seed=9)
        with tempfile.TemporaryDirectory() as tmp:
            path = record.save(os.path.join(tmp, "psi.json"))
            loaded = WavefunctionRecord.load(path)
        self.assertEqual(loaded, record)
        np.testing.assert_array_equal(loaded.basis().nonlinear_vector(), basis.nonlinear_vector())
        original = TrialWavefunction(basis, coefficients[1]).evaluate(COORDS, derivatives=False)
        restored = loaded.wavefunction(1).evaluate(COORDS, derivatives=False)
        np.testing.assert_array_equal(restored.logabs, original.logabs)
        self.assertEqual(loaded.guiding_function().rho, 2.5)


if __name__ == "__main__":
    unittest.main()
