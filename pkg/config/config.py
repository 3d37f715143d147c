"""
Configuration file for the measurement-error correction toolkit
Contains estimator, oracle and Monte Carlo defaults shared by all modules
For the catalog of synthetic data-generating processes, see dgp_catalog.py
"""
import copy
import logging
import os
from typing import Any, Dict

# ============================================
# DGP CATALOG LOADER
# ============================================
def get_spec_config(spec_id: str) -> Dict[str, Any]:
    """
    Load a catalog data-generating process by id

    Args:
        spec_id: Catalog id, e.g. 'gaussian_symmetric'

    Returns:
        Spec document (a fresh copy, safe to modify)
    """
    from config.dgp_catalog import SPEC_CATALOG

    key = spec_id.lower()
    if key not in SPEC_CATALOG:
        raise ValueError(f"Unknown spec: {spec_id}. Choose one of {sorted(SPEC_CATALOG)}")
    return copy.deepcopy(SPEC_CATALOG[key])


# ============================================
# KERNEL SMOOTHING PARAMETERS
# ============================================
KERNEL_FAMILY = 'gaussian'
SMOOTHNESS_ORDER = 4                  # m in the n^(-1/(2m+1)) rule
ROT_CONSTANT = 1.06                   # c in c * sd * n^(-1/(2m+1)), gaussian kernel
TRIWEIGHT_BANDWIDTH_RATIO = 2.978     # canonical triweight / gaussian bandwidth ratio
CV_NUM_CANDIDATES = 25
CV_SPAN = (0.1, 10.0)                 # multiples of the rule-of-thumb value
CV_MIN_OBS = 50
CV_MAX_POINTS = 800                   # deterministic subsample used by leave-one-out CV
DERIVATIVE_BANDWIDTH_INFLATION = 1.2  # per derivative order
SKEDASTIC_BANDWIDTH_FACTOR = 1.5      # per-label regression bandwidth multiple
LOCAL_POLY_DEGREE = 3
DENSITY_FLOOR_FRACTION = 0.05         # floor = fraction * max f on the grid
KDE_CHUNK_SIZE = 20000                # data points per vectorised kernel block
MAX_CONDITION_NUMBER = 1e12           # local design considered singular above this

# ============================================
# GRID PARAMETERS
# ============================================
GRID_QUANTILES = (0.05, 0.95)
GRID_SIZE = 101
MIN_GRID_POINTS = 3

# ============================================
# RANK CONDITION
# ============================================
RANK_THRESHOLD = 1e-3
POPULATION_RANK_THRESHOLD = 1e-6

# ============================================
# DATA-GENERATING PROCESS
# ============================================
OUTCOME_NOISE_SD = 0.5                # U ~ N(0, 0.25)
MIN_SIGMA = 1e-8                      # sigma(x) must stay above this on the working range

# ============================================
# QUADRATURE PARAMETERS
# ============================================
QUADRATURE_RULE = 'gauss_hermite'
QUADRATURE_NODES = 128
QUADRATURE_ABS_TOL = 1e-9
MIN_HERMITE_NODES = 64
MAX_ABS_TOL = 1e-8
WORKING_SUPPORT_SDS = 8.0             # X* working support: mean +/- 8 sd per instrument value
CDF_PANEL_WIDTH = 0.25                # Gauss-Legendre panel width for population CDFs
CDF_PANEL_NODES = 16
ROOT_TOL = 1e-12                      # quantile root-finding tolerance

# ============================================
# NCME PARAMETERS
# ============================================
MIN_VALID_MASS = 0.5                  # required share of grid mass with valid skedastic fit
CDF_SLACK = 1e-3                      # tolerated excursion of the corrected CDF before clamping
MIN_MARGINAL_ROWS = 100

# ============================================
# MONTE CARLO PARAMETERS
# ============================================
MC_REPS = 200
MC_SEED = 20240101
EVAL_QUANTILES = (0.25, 0.5, 0.75)
TAU_RULE_MULTIPLIER = 0.8
TAU_RULE_EXPONENT = -1.0 / 12.0
SLOPE_FLOOR_FACTOR = 10.0             # drop smallest tau if its error is within this * quadrature tol
MIN_TAU_POINTS = 4
MIN_SLOPE_POINTS = 3
GEOMETRIC_RTOL = 0.01
QUANTILE_CHECK_LEVEL = 0.25
NCME_CHECK_POINT = 0.5

# Acceptance windows reported by sweep summaries
SLOPE_MARGIN = 0.4                    # corrected slope must reach p - margin
NAIVE_SLOPE_WINDOW = (1.8, 2.2)

# Statistical parameters
SIGNIFICANCE_LEVEL = 0.05
AGREEMENT_SDS = 3.0

# ============================================
# DATA QUALITY PARAMETERS
# ============================================
MIN_DATA_POINTS = 200
MIN_POINTS_PER_LABEL = 10


# ============================================
# RUNTIME ENVIRONMENT
# ============================================
def get_thread_count() -> int:
    """
    Worker count for parallel replications

    Reads EIV_THREADS; defaults to the number of machine cores.
    """
    raw = os.environ.get('EIV_THREADS')
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"EIV_THREADS must be a positive integer, got {raw!r}")
        if value < 1:
            raise ValueError(f"EIV_THREADS must be a positive integer, got {raw!r}")
        return value
    return os.cpu_count() or 1


LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
_LOGGING_READY = False


def get_logger(name: str) -> logging.Logger:
    """
    Module logger with a single shared stream handler

    Level comes from EIV_LOG_LEVEL (default WARNING).
    """
    global _LOGGING_READY
    if not _LOGGING_READY:
        root = logging.getLogger('eiv')
        if not root.handlers:
            handler = logging.StreamHandler()
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            root.addHandler(handler)
        root.setLevel(os.environ.get('EIV_LOG_LEVEL', 'WARNING').upper())
        root.propagate = False
        _LOGGING_READY = True
    return logging.getLogger(f'eiv.{name}')
