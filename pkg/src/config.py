"""Configuration settings for the Lennard-Jones cluster QMC engine."""

import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Species table: dimensionless inverse masses (square of the de Boer parameter, up to a constant)
SPECIES_INVERSE_MASS = {
    "Kr": 1.9128e-4,
    "Ar": 6.9635e-4,
    "Ne": 7.0920e-3,
    "½-Ne": 1.4184e-2,
}
SPECIES_ALIASES = {"half-Ne": "½-Ne", "1/2-Ne": "½-Ne"}

# Geometry tolerances (LJ length units)
DISTANCE_TOLERANCE = 1e-10
REALIZABILITY_TOLERANCE = 1e-9
OMEGA_FLOOR = 1e-14
COLLINEAR_RATIO = 1e-12

# Trial wavefunction
EXPONENT_LIMIT = 700.0
NODE_TOLERANCE = 1e-12
SCALE_BOUNDS = (0.3, 3.0)
DEFAULT_DEGREE_CAP = 3
DEFAULT_RHO = 2.5
RHO_RANGE = (2.0, 3.0)

# Metropolis sampling
DEFAULT_TARGET_ACCEPTANCE = 0.5
ACCEPTANCE_TOLERANCE = 0.05
MAX_TUNING_ITERATIONS = 50
MIN_EQUILIBRATION_SWEEPS = 1000
AUTOCORRELATION_FACTOR = 20
BLOCKING_MIN_LENGTH = 64
BLOCKING_MIN_BLOCKS = 16
BLOCKING_PLATEAU_CHANGE = 0.05

# Spectral estimation
SVD_THRESHOLD = 1e-8
MATRIX_RANK_FLOOR = 1e-14
IMAGINARY_TOLERANCE = 1e-10
EVALUATION_CHUNK = 4096

# Correlation-function projection
TIME_STEP_FACTOR = 2e-3
TIME_MAX_FACTOR = 2.0
TIME_POINTS = 16
WEIGHT_DYNAMIC_RANGE = 1e3
BREAKDOWN_TOLERANCE = 1e-12
JACKKNIFE_GROUPS = 8

# Output and parallelism
OUTPUT_DIR = os.getenv("CLUSTER_QMC_OUTPUT", "results")
NUM_WORKERS = int(os.getenv("CLUSTER_QMC_WORKERS", "1"))

# Template Settings
TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "templates")

# Logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
