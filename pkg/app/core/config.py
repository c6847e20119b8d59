"""Runtime configuration from environment variables."""

import os

from dotenv import load_dotenv

load_dotenv()

# Numerical tolerances
EPS_ROOT = float(os.getenv("RENEGE_EPS_ROOT", "1e-3"))
EPS_QUAD = float(os.getenv("RENEGE_EPS_QUAD", "1e-6"))
EPS_MASS = float(os.getenv("RENEGE_EPS_MASS", "1e-3"))

# Points per axis for steady-state grids
GRID_POINTS = int(os.getenv("RENEGE_GRID_POINTS", "400"))

# Simulation defaults
SIM_HORIZON = int(os.getenv("RENEGE_SIM_HORIZON", "10000000"))
SIM_WARMUP_FRACTION = float(os.getenv("RENEGE_SIM_WARMUP_FRACTION", "0.1"))
TAG_RATE = float(os.getenv("RENEGE_TAG_RATE", "0.001"))
TRACE_CAP = int(os.getenv("RENEGE_TRACE_CAP", "1000000"))

LOG_LEVEL = os.getenv("RENEGE_LOG_LEVEL", "INFO").upper()
