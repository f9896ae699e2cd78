"""
Configuration for the in-network solver
"""
import os
from dotenv import load_dotenv

load_dotenv()

# Output / runtime
RESULTS_DIR = os.getenv("INNET_RESULTS_DIR", "results")
LOG_LEVEL = os.getenv("INNET_LOG_LEVEL", "INFO")
SHOW_PROGRESS = os.getenv("INNET_SHOW_PROGRESS", "0") == "1"

# Network generation
CONNECTIVITY_RETRIES = int(os.getenv("INNET_CONNECTIVITY_RETRIES", 1000))

# Numerics
RANK_TOL = 1e-12                    # singular values below RANK_TOL * sigma_1 count as zero
POWER_ITER_TOL = 1e-12              # relative, on sigma
POWER_ITER_WINDOW = 100
POWER_ITER_MAX = 20000
SYMMETRY_TOL = 1e-10

# Default tuning-parameter fractions of the admissible upper bounds
LAMBDA_1_FRACTION = 0.1             # lambda_1 = 0.1 * ||R'Y||_inf
LAMBDA_STAR_FRACTION = 0.3          # lambda_* = 0.3 * ||Y||

# CSV output
CSV_SIGNIFICANT_DIGITS = 17

# Scenario kinds and the files each run writes
SCENARIOS = ("duna", "drpca", "dmc", "dlasso")
METRICS_HEADER = ["round", "consensus_q", "consensus_a", "rel_err_x", "rel_err_a", "cost"]
ROC_HEADER = ["threshold", "p_fa", "p_d"]
CERTIFICATE_HEADER = [
    "spectral_residual", "lambda_star", "condition_met",
    "res_eq13", "res_eq14", "res_eq15",
]
NODES_HEADER = ["node", "x", "y"]
EDGES_HEADER = ["i", "j"]
