"""FastAPI server for the cluster QMC engine's exact and fitting tools."""

import logging
from typing import Dict, List, Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from src.config import LOG_LEVEL, SPECIES_INVERSE_MASS
from src.dimsym import IdentityReport, amplitude, effective_potential, is_physical_dimension, run_identity_suite
from src.errors import ConfigValidationError, FitError, NumericalError
from src.geometry import ClusterSpec, DistanceSet
from src.harness import ParabolaFit, parabola_fit
from src.hamiltonian import total_potential

# Set up logging
logging.basicConfig(level=LOG_LEVEL)
logger = logging.getLogger(__name__)

# Initialize the application
app = FastAPI(
    title="Cluster QMC API",
    description="Identity checks, effective potentials and dimension fits for Lennard-Jones clusters",
    version="1.0.0",
)

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class IdentityRequest(BaseModel):
    """Request model for the randomized identity suite."""

    n_configs: int = Field(100, ge=1, le=10_000, description="Random configurations per atom count")
    seed: int = Field(0, ge=0)
    n_atoms: List[int] = Field(default_factory=lambda: [3, 4, 5], description="Atom counts to check")


class FitRequest(BaseModel):
    """Request model for a parabola fit of E(D)."""

    energies: Dict[int, float] = Field(..., description="Energy per dimension")
    n_atoms: int = Field(..., ge=2)
    d_min: Optional[int] = Field(None, description="Smallest fitted dimension (default N-1)")
    center: Optional[float] = Field(None, description="Parabola center (default N)")


class EffectivePotentialRequest(BaseModel):
    """Request model for V - sum_i U_i / 2m at one distance set."""

    distances: List[float] = Field(..., description="Pair distances in pdist order")
    n_atoms: int = Field(..., ge=2)
    dim: float = Field(..., ge=1)
    inv_mass: float = Field(..., gt=0)


class EffectivePotentialResponse(BaseModel):
    potential: float
    effective_potential: float
    amplitude: float
    physical: bool


def _raise_http(error: Exception):
    if isinstance(error, (ConfigValidationError, FitError)):
        raise HTTPException(status_code=422, detail=str(error))
    raise HTTPException(status_code=500, detail=str(error))


@app.post("/verify-identities", response_model=IdentityReport)
async def verify_identities(request: IdentityRequest):
    """Run the exact identity checks on random realizable configurations."""
    try:
        return run_identity_suite(request.n_configs, tuple(request.n_atoms), seed=request.seed)
    except (ConfigValidationError, NumericalError) as e:
        logger.error(f"Identity suite failed: {str(e)}")
        _raise_http(e)


@app.post("/fit", response_model=ParabolaFit)
async def fit(request: FitRequest):
    """Fit E(D) to a parabola with fixed center."""
    d_min = request.d_min if request.d_min is not None else max(1, request.n_atoms - 1)
    center = request.center if request.center is not None else float(request.n_atoms)
    try:
        return parabola_fit(request.energies, d_min, center)
    except (ConfigValidationError, NumericalError) as e:
        logger.error(f"Fit failed: {str(e)}")
        _raise_http(e)


@app.post("/effective-potential", response_model=EffectivePotentialResponse)
async def effective_potential_endpoint(request: EffectivePotentialRequest):
    """Evaluate the transformed multiplicative potential at one distance set."""
    try:
        dists = DistanceSet(request.distances, request.n_atoms)
        spec = ClusterSpec(request.n_atoms, max(1, int(request.dim)), request.inv_mass)
        return EffectivePotentialResponse(
            potential=total_potential(dists),
            effective_potential=effective_potential(dists, spec, dim=request.dim),
            amplitude=amplitude(request.n_atoms, request.dim),
            physical=is_physical_dimension(request.n_atoms, request.dim),
        )
    except (ConfigValidationError, NumericalError) as e:
        logger.error(f"Effective potential failed: {str(e)}")
        _raise_http(e)


@app.get("/species")
async def species():
    """Known species and their inverse masses."""
    return SPECIES_INVERSE_MASS


@app.get("/health")
async def health_check():
    """Health check endpoint."""
    return {"status": "healthy"}


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
