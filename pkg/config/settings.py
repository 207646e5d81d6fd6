"""
Configuration settings for the harmonic map flow laboratory.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# Project Paths
PROJECT_ROOT = Path(__file__).parent.parent
OUTPUT_DIR = Path(os.getenv("HMF_OUTPUT_DIR", str(PROJECT_ROOT / "runs")))
PRESET_DIR = OUTPUT_DIR / "presets"

# Grid defaults (half width L, nodes per side N)
DEFAULT_HALF_WIDTH = float(os.getenv("HMF_GRID_L", "8.0"))
DEFAULT_NODES = int(os.getenv("HMF_GRID_N", "256"))

# Flow integration
DT_SAFETY = float(os.getenv("HMF_DT_SAFETY", "0.2"))
USE_NUMBA = os.getenv("HMF_USE_NUMBA", "1") not in ("0", "false", "False", "")

# Analysis parameters
EPS0 = float(os.getenv("HMF_EPS0", "1.0"))
LOJ_BETA = float(os.getenv("HMF_LOJ_BETA", "0.1"))
POINCARE_TOLERANCE = float(os.getenv("HMF_POINCARE_TOL", "0.05"))

# Execution
JOBS = int(os.getenv("HMF_JOBS", "1"))
CORPUS_SEED = int(os.getenv("HMF_SEED", "7"))
LOG_LEVEL = os.getenv("HMF_LOG_LEVEL", "INFO").upper()

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def validate_config():
    """Validate lab configuration."""
    problems = []

    if DEFAULT_HALF_WIDTH <= 0:
        problems.append(f"HMF_GRID_L must be positive (got {DEFAULT_HALF_WIDTH})")
    if DEFAULT_NODES < 16:
        problems.append(f"HMF_GRID_N must be at least 16 (got {DEFAULT_NODES})")
    if not 0 < DT_SAFETY <= 0.25:
        problems.append(f"HMF_DT_SAFETY must lie in (0, 0.25] (got {DT_SAFETY})")
    if EPS0 <= 0:
        problems.append(f"HMF_EPS0 must be positive (got {EPS0})")
    if not 0 < LOJ_BETA < 1:
        problems.append(f"HMF_LOJ_BETA must lie in (0, 1) (got {LOJ_BETA})")
    if JOBS < 1:
        problems.append(f"HMF_JOBS must be at least 1 (got {JOBS})")
    if LOG_LEVEL not in _LOG_LEVELS:
        problems.append(f"HMF_LOG_LEVEL must be one of {', '.join(_LOG_LEVELS)} (got {LOG_LEVEL})")

    if problems:
        raise ValueError(
            "Invalid lab configuration:\n   "
            + "\n   ".join(problems)
            + "\nPlease check your .env file."
        )


if __name__ != "__main__":
    validate_config()
