import logging
import os

__all__ = ['DEFAULT_TOL', 'ASSEMBLY_TOL', 'CLASSIFY_TOL', 'SYMMETRY_TOL', 'RECOVER_BOUNDARY_FACTOR',
           'DEFAULT_SEED', 'DEFAULT_SAMPLES', 'NOISE_CHUNK', 'MC_SIGMAS', 'TOLERANCE_ENV', 'default_tolerance']

# relative zero test: |block| <= tol * (1 + max|matrix|)
DEFAULT_TOL = 1e-8
ASSEMBLY_TOL = 1e-9
# looser, absorbs the conditioning of a covariance inversion
CLASSIFY_TOL = 1e-7
SYMMETRY_TOL = 1e-10
RECOVER_BOUNDARY_FACTOR = 10.0

DEFAULT_SEED = 0
DEFAULT_SAMPLES = 10_000
# samples per counter-based noise stream; changing it changes every generated batch
NOISE_CHUNK = 4096
MC_SIGMAS = 4.0

TOLERANCE_ENV = "CMSEQ_TOL"


def default_tolerance(fallback: float = DEFAULT_TOL) -> float:
    value = os.environ.get(TOLERANCE_ENV)
    if not value:
        return fallback

    try:
        tol = float(value)
    except ValueError:
        logging.warning("Ignoring %s=%r, not a number", TOLERANCE_ENV, value)
        return fallback

    if tol <= 0:
        logging.warning("Ignoring %s=%r, tolerance must be positive", TOLERANCE_ENV, value)
        return fallback
    return tol
