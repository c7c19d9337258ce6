"""Test the FastAPI application."""

import os
import sys
from fastapi.testclient import TestClient

# Add the parent directory to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.api import app
from src.config import SPECIES_INVERSE_MASS

client = TestClient(app)

class TestAPI:
    """Test the API endpoints."""

    def test_health_check(self):
        """Test the health check endpoint."""
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json() == {"status": "healthy"}

    def test_species(self):
        """Test the species listing."""
        response = client.get("/species")
        assert response.status_code == 200
        assert response.json()["Ar"] == SPECIES_INVERSE_MASS["Ar"]

    def test_fit_endpoint(self):
        """Test the parabola fit endpoint."""
        energies = {str(d): -2.5 + 0.01 * (d - 3) ** 2 for d in range(1, 7)}
        response = client.post("/fit", json={"energies": energies, "n_atoms": 3})

        assert response.status_code == 200
        data = response.json()
        assert data["center"] == 3.0
        assert data["d_min"] == 2
        assert data["fitted_dims"] == [2, 3, 4, 5, 6]
        assert abs(data["offset"] + 2.5) < 1e-12
        assert abs(data["curvature"] - 0.01) < 1e-12

    def test_fit_with_too_few_dimensions(self):
        """Test that an under-determined fit is rejected."""
        response = client.post("/fit", json={"energies": {"2": -2.0, "3": -2.1}, "n_atoms": 3})
        assert response.status_code == 422

    def test_effective_potential_endpoint(self):
        """Test the effective potential of the equilateral argon trimer."""
        inv_mass = SPECIES_INVERSE_MASS["Ar"]
        test_request = {"distances": [1.0, 1.0, 1.0], "n_atoms": 3, "dim": 3, "inv_mass": inv_mass}
        response = client.post("/effective-potential", json=test_request)

        assert response.status_code == 200
        data = response.json()
        assert data["potential"] == -3.0
        assert abs(data["effective_potential"] - (-3.0 - 2.0 * inv_mass)) < 1e-12
        assert data["amplitude"] == 0.5
        assert data["physical"] is True

    def test_effective_potential_validation(self):
        """Test that inconsistent input is rejected."""
        response = client.post(
            "/effective-potential", json={"distances": [1.0, 1.0], "n_atoms": 3, "dim": 3, "inv_mass": 1e-3}
        )
        assert response.status_code == 422

        response = client.post(
            "/effective-potential", json={"distances": [1.0, 1.0, 1.0], "n_atoms": 3, "dim": 3, "inv_mass": 0.0}
        )
        assert response.status_code == 422

    def test_verify_identities_endpoint(self):
        """Test the randomized identity suite."""
        response = client.post("/verify-identities", json={"n_configs": 5, "seed": 1, "n_atoms": [3]})

        assert response.status_code == 200
        data = response.json()
        assert data["seed"] == 1
        assert len(data["checks"]) == 5
        assert all(check["passed"] for check in data["checks"])
