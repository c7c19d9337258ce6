"""Test cluster geometry: distances, Grammians and the chain rule to Cartesian derivatives."""

import math
import os
import sys
import unittest

import numpy as np
from scipy.spatial.distance import pdist

# Add the parent directory to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.errors import (
    ConfigValidationError,
    DegenerateConfigurationError,
    NearCollinearError,
    UnrealizableDistancesError,
)
from src.geometry import (
    ClusterSpec,
    Configuration,
    DistanceSet,
    batch_pair_geometry,
    cartesian_derivatives,
    check_noncollinear,
    coordinate_gram_matrix,
    cos_angle,
    cramer_identity_residual,
    gram_det,
    gram_matrix,
    omega_gradient,
    pair_distances,
    pair_index,
    simplex_volume,
)

TRIANGLE = np.array([[0.0, 1.0, 0.5], [0.0, 0.0, math.sqrt(3) / 2]])


def random_configuration(rng, dim, n_atoms):
    while True:
        coords = rng.normal(size=(dim, n_atoms))
        if pdist(coords.T).min() > 0.3:
            return Configuration(coords)


class TestDistances(unittest.TestCase):
    """Pair ordering and distance sets."""

    def test_pair_index_matches_pdist(self):
        coords = np.arange(12, dtype=float).reshape(3, 4) ** 1.5
        flat = pdist(coords.T)
        for i in range(4):
            for j in range(4):
                if i != j:
                    expected = np.linalg.norm(coords[:, i] - coords[:, j])
                    self.assertAlmostEqual(flat[pair_index(i, j, 4)], expected, places=12)

    def test_pair_index_rejects_same_atom(self):
        with self.assertRaises(ConfigValidationError):
            pair_index(1, 1, 3)

    def test_equilateral_triangle(self):
        dists = pair_distances(Configuration(TRIANGLE))
        np.testing.assert_allclose(dists.r, [1.0, 1.0, 1.0], atol=1e-15)
        self.assertAlmostEqual(cos_angle(dists, 0, 1, 2), 0.5, places=14)
        self.assertEqual(cos_angle(dists, 0, 1, 1), 1.0)

    def test_invariant_under_rigid_motion_and_permutation(self):
        rng = np.random.default_rng(3)
        config = random_configuration(rng, 3, 4)
        rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        moved = config.transformed(rotation).translated([1.0, -2.0, 0.5])
        np.testing.assert_allclose(pair_distances(moved).r, pair_distances(config).r, rtol=1e-12)
        order = [2, 0, 3, 1]
        np.testing.assert_allclose(
            pair_distances(config.permuted(order)).matrix(),
            pair_distances(config).permuted(order).matrix(),
            rtol=1e-12,
        )

    def test_coincident_atoms_name_the_pair(self):
        coords = np.array([[0.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
        with self.assertRaises(DegenerateConfigurationError) as context:
            pair_distances(Configuration(coords))
        self.assertEqual(context.exception.pair, (1, 2))

    def test_wrong_distance_count(self):
        with self.assertRaises(ConfigValidationError):
            DistanceSet([1.0, 1.0], 3)

    def test_cluster_spec_validation(self):
        with self.assertRaises(ConfigValidationError):
            ClusterSpec(1, 3, 1.0)
        with self.assertRaises(ConfigValidationError):
            ClusterSpec(3, 3, -1.0)
        self.assertEqual(ClusterSpec(4, 3, 0.5).n_pairs, 6)


class TestGrammian(unittest.TestCase):
    """Grammian determinant and its derivatives."""

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_equilateral_triangle_omega(self):
        dists = DistanceSet([1.0, 1.0, 1.0], 3)
        self.assertAlmostEqual(gram_det(dists), 0.75, places=14)
        self.assertAlmostEqual(simplex_volume(dists), math.sqrt(3) / 4, places=14)

    def test_pivot_independence(self):
        for n_atoms in (3, 4, 5):
            config = random_configuration(self.rng, n_atoms - 1, n_atoms)
            dists = pair_distances(config)
            omegas = [gram_det(dists, pivot) for pivot in range(n_atoms)]
            self.assertLess((max(omegas) - min(omegas)) / max(omegas), 1e-10)

    def test_distance_and_coordinate_grammians_agree(self):
        config = random_configuration(self.rng, 4, 4)
        dists = pair_distances(config)
        for pivot in range(4):
            np.testing.assert_allclose(gram_matrix(dists, pivot), coordinate_gram_matrix(config, pivot), atol=1e-12)

    def test_unrealizable_distances(self):
        with self.assertRaises(UnrealizableDistancesError):
            gram_det(DistanceSet([1.0, 1.0, 3.0], 3))

    def test_collinear_configuration(self):
        dists = pair_distances(Configuration(np.array([[0.0, 1.0, 2.0], [0.0, 0.0, 0.0]])))
        with self.assertRaises(NearCollinearError):
            check_noncollinear(dists, gram_det(dists))

    def test_cramer_identity(self):
        for n_atoms in (3, 4):
            dists = pair_distances(random_configuration(self.rng, n_atoms, n_atoms))
            for pivot in range(n_atoms):
                self.assertLess(cramer_identity_residual(dists, pivot), 1e-10)

    def test_omega_gradient_matches_finite_differences(self):
        dists = pair_distances(random_configuration(self.rng, 3, 4))
        gradient = omega_gradient(dists)
        step = 1e-6
        for p in range(dists.r.size):
            up, down = dists.r.copy(), dists.r.copy()
            up[p] += step
            down[p] -= step
            numeric = (gram_det(DistanceSet(up, 4)) - gram_det(DistanceSet(down, 4))) / (2 * step)
            self.assertAlmostEqual(gradient[p], numeric, delta=1e-6 * max(1.0, abs(numeric)))


class TestCartesianDerivatives(unittest.TestCase):
    """Chain rule from pair-distance derivatives."""

    def test_sum_of_squared_distances(self):
        rng = np.random.default_rng(5)
        dim, n_atoms = 3, 4
        coords = rng.normal(size=(2, dim, n_atoms))
        unit, distances = batch_pair_geometry(coords)
        pairs = distances.shape[1]
        grad_r = (2.0 * distances)[:, None, :]
        hess_r = np.broadcast_to(2.0 * np.eye(pairs), (2, 1, pairs, pairs))
        gradient, laplacian = cartesian_derivatives(unit, distances, grad_r, hess_r)
        expected_gradient = 2.0 * (n_atoms * coords - coords.sum(axis=2, keepdims=True))
        np.testing.assert_allclose(gradient[:, 0], expected_gradient, atol=1e-12)
        np.testing.assert_allclose(laplacian[:, 0], 2.0 * dim * (n_atoms - 1), atol=1e-12)

    def test_pair_distance_laplacian(self):
        coords = np.array([[[0.0, 1.3], [0.0, 0.4], [0.0, -0.2]]])
        unit, distances = batch_pair_geometry(coords)
        gradient, laplacian = cartesian_derivatives(unit, distances, np.ones((1, 1, 1)), np.zeros((1, 1, 1, 1)))
        r = distances[0, 0]
        np.testing.assert_allclose(laplacian[0, 0], [2.0 / r, 2.0 / r], rtol=1e-14)
        self.assertAlmostEqual(float(np.linalg.norm(gradient[0, 0, :, 0])), 1.0, places=14)


if __name__ == "__main__":
    unittest.main()
