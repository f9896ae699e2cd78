from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import LAMBDA_1_FRACTION, LAMBDA_STAR_FRACTION

ScenarioKind = Literal["duna", "drpca", "dmc", "dlasso"]


# ==================== SCENARIO SCHEMAS ====================

class ScenarioConfig(BaseModel):
    """One experiment. The presets under presets/ retune c, mu and the lambda fractions per scenario."""
    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioKind
    n_agents: int = Field(10, ge=1, description="Number of agents N")
    t_cols: int = Field(90, ge=1, description="Time horizon / columns T")
    f_flows: int | None = Field(None, ge=1, description="Flows F (duna: derived from the graph)")
    l_links: int | None = Field(None, ge=1, description="Measurement rows for dmc, generic-R rows for dlasso")
    rank_true: int = Field(3, ge=0, description="Rank r of the ground-truth low-rank component")
    rho: int = Field(3, ge=1, description="Rank upper bound rho")
    sigma: float = Field(0.01, ge=0, description="Noise standard deviation")
    pi: float = Field(0.01, ge=0, le=1, description="Anomaly probability")
    p_obs: float = Field(0.6, ge=0, le=1, description="Observation probability (dmc)")
    comm_range: float = Field(0.35, gt=0, description="Communication range on the unit square")
    lambda_star: float | None = Field(None, ge=0, description="Nuclear-norm weight (default lambda_star_fraction ||Y||)")
    lambda_1: float | None = Field(None, ge=0, description="l1 weight (default lambda_1_fraction ||R'Y||_inf)")
    lambda_star_fraction: float = Field(LAMBDA_STAR_FRACTION, gt=0, le=1)
    lambda_1_fraction: float = Field(LAMBDA_1_FRACTION, gt=0, le=1)
    c: float = Field(0.1, gt=0, description="Penalty coefficient")
    mu: float = Field(0.1, gt=0, description="Dual step size")
    tol: float = Field(1e-6, gt=0, description="Stopping tolerance on normalized successive change")
    max_rounds: int = Field(2000, ge=0)
    seed: int = Field(0, ge=0)
    out_path: str = "results"
    oracle_tol: float = Field(1e-10, gt=0)
    oracle_max_iter: int = Field(20000, ge=1)
    n_thresholds: int = Field(200, ge=1)

    @property
    def rows_f(self) -> int:
        return self.f_flows if self.f_flows is not None else self.t_cols

    @model_validator(mode="after")
    def check_scenario_fields(self):
        if self.scenario == "dlasso" and self.l_links is not None and self.f_flows is None:
            raise ValueError("f_flows is required when dlasso uses a generic regression matrix (l_links set)")
        return self


class Hyperparams(BaseModel):
    lambda_star: float = Field(..., ge=0)
    lambda_1: float = Field(..., ge=0)
    c: float = Field(..., gt=0)
    mu: float = Field(..., gt=0)
    rho: int = Field(..., ge=1)
    max_rounds: int = Field(..., ge=0)
    tol: float = Field(..., gt=0)


# ==================== OUTPUT SCHEMAS ====================

class MetricsRow(BaseModel):
    round: int
    consensus_q: float
    consensus_a: float
    rel_err_x: float
    rel_err_a: float
    cost: float

    def as_row(self) -> list:
        return [self.round, self.consensus_q, self.consensus_a, self.rel_err_x, self.rel_err_a, self.cost]


class CertificateReport(BaseModel):
    spectral_residual: float         # ||P_Omega(Y - L Q' - R A)||
    lambda_star: float
    condition_met: bool              # spectral_residual <= lambda_star
    dual_bound: float                # sigma_max of the dual block: half the spectral residual
    res_eq13: float                  # l1 block (sub)gradient residual
    res_eq14: float                  # gradient w.r.t. L
    res_eq15: float                  # gradient w.r.t. Q'

    def as_row(self) -> list:
        return [self.spectral_residual, self.lambda_star, self.condition_met,
                self.res_eq13, self.res_eq14, self.res_eq15]


class RunSummary(BaseModel):
    """What `run_scenario` reports back (also written as summary.json)"""
    scenario: ScenarioKind
    exit_status: int
    converged: bool
    rounds: int
    lambda_star: float
    lambda_1: float
    final_consensus_q: float
    final_consensus_a: float
    rel_err_x: float
    rel_err_a: float
    oracle_rel_err_x: float
    oracle_rel_err_a: float
    cost_distributed: float           # nuclear-norm cost at the averaged iterates
    cost_centralized: float           # nuclear-norm cost at the oracle solution
    max_agent_distance_to_oracle: float
    auc: float | None = None
    certificate: CertificateReport
    oracle_certificate: CertificateReport
    files: list[str]


# ==================== REQUEST SCHEMAS ====================

class RunRequest(BaseModel):
    config_text: str = Field(..., description="Scenario config in `key = value` form")
    seed: int | None = Field(None, ge=0, description="Override the config seed")
    out_dir: str | None = Field(None, description="Override the output directory")


class GraphRequest(BaseModel):
    config_text: str


class CertifyRequest(BaseModel):
    config_text: str
    estimates_dir: str


class GraphNode(BaseModel):
    id: int
    x: float
    y: float


class GraphResponse(BaseModel):
    n_nodes: int
    nodes: list[GraphNode]
    edges: list[tuple[int, int]]
