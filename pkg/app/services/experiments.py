"""
Scenario runner: config parsing, metrics, ROC evaluation and the
end-to-end `run_scenario` that writes every result file.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.config import CERTIFICATE_HEADER, METRICS_HEADER, ROC_HEADER
from app.exceptions import (
    ConfigParseError,
    ConfigValidationError,
    DegenerateTruth,
    EstimateFileError,
    NoAnomalies,
    ShapeMismatch,
)
from app.schemas import CertificateReport, Hyperparams, MetricsRow, RunSummary, ScenarioConfig
from app.services import admm_core
from app.services.admm_core import AgentState, Estimates, UpdateRules
from app.services.network import (
    Graph,
    RoutingMatrix,
    export_graph_csv,
    od_flows,
    random_geometric_graph,
    shortest_path_routing,
)
from app.services.numerics import frobenius_norm
from app.services.oracles import (
    balanced_factors,
    lambda_bounds,
    p1_cost,
    p3_cost,
    prop1_certificate,
    solve_p1_centralized,
)
from app.services.solvers import get_rules
from app.services.synth import ScenarioData, build_scenario_data
from app.utils import format_value, read_matrix, write_csv, write_matrix

logger = logging.getLogger(__name__)


# ==================== CONFIG ====================

def parse_config(text: str) -> ScenarioConfig:
    """
    `key = value` per line; `#` starts a comment; blank lines ignored.
    Unknown or repeated keys are parse errors; values are validated by
    ScenarioConfig.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigParseError(lineno, "missing key")
        if key not in ScenarioConfig.model_fields:
            raise ConfigParseError(lineno, f"unknown key {key!r}")
        if key in values:
            raise ConfigParseError(lineno, f"key {key!r} given twice")
        values[key] = value

    try:
        return ScenarioConfig(**values)
    except ValidationError as e:
        err = e.errors()[0]
        field = ".".join(str(part) for part in err["loc"]) or "config"
        raise ConfigValidationError(field, err["msg"]) from e


def load_config(path: str | Path) -> ScenarioConfig:
    return parse_config(Path(path).read_text())


def default_lambdas(config: ScenarioConfig, data: ScenarioData) -> tuple[float, float]:
    """(lambda_star, lambda_1), defaulting to the configured fractions of the admissible bounds"""
    bounds = lambda_bounds(data.y, data.r, data.mask)
    lambda_star = config.lambda_star
    if lambda_star is None:
        lambda_star = config.lambda_star_fraction * bounds.lambda_star_max
    lambda_1 = config.lambda_1
    if lambda_1 is None:
        lambda_1 = config.lambda_1_fraction * bounds.lambda_1_max if data.r is not None else 0.0
    return lambda_star, lambda_1


def make_hyperparams(config: ScenarioConfig, data: ScenarioData) -> Hyperparams:
    lambda_star, lambda_1 = default_lambdas(config, data)
    return Hyperparams(
        lambda_star=lambda_star,
        lambda_1=lambda_1,
        c=config.c,
        mu=config.mu,
        rho=config.rho,
        max_rounds=config.max_rounds,
        tol=config.tol,
    )


# ==================== METRICS ====================

def relative_error(est: np.ndarray, truth: np.ndarray) -> float:
    if est.shape != truth.shape:
        raise ShapeMismatch(f"estimate is {est.shape}, truth is {truth.shape}")
    norm = frobenius_norm(truth)
    if norm == 0:
        raise DegenerateTruth("relative error against an all-zero truth")
    return frobenius_norm(est - truth) / norm


def _error_or_absolute(est: np.ndarray | None, truth: np.ndarray | None) -> float:
    if est is None or truth is None:
        return 0.0
    try:
        return relative_error(est, truth)
    except DegenerateTruth:
        return frobenius_norm(est)


def roc_curve(a_hat: np.ndarray, a0: np.ndarray, n_thresholds: int = 200) -> list[tuple[float, float, float]]:
    """
    Flag (f, t) when |a_hat| >= tau, for tau on a geometric sweep from
    1e-6 max|a_hat| up to max|a_hat|. Rows are (tau, p_fa, p_d), tau increasing.
    """
    if a_hat.shape != a0.shape:
        raise ShapeMismatch(f"a_hat is {a_hat.shape}, a0 is {a0.shape}")
    anomalies = a0 != 0
    n_true = int(np.count_nonzero(anomalies))
    if n_true == 0:
        raise NoAnomalies("ground truth has no anomalies")
    n_clean = anomalies.size - n_true

    scores = np.abs(a_hat)
    top = float(np.max(scores))
    if top == 0:
        return [(0.0, 0.0, 0.0)]

    curve = []
    for tau in np.geomspace(1e-6 * top, top, n_thresholds):
        flagged = scores >= tau
        p_d = np.count_nonzero(flagged & anomalies) / n_true
        p_fa = np.count_nonzero(flagged & ~anomalies) / n_clean if n_clean else 0.0
        curve.append((float(tau), float(p_fa), float(p_d)))
    return curve


def roc_auc(curve: list[tuple[float, float, float]]) -> float:
    """Trapezoidal area with the (0, 0) and (1, 1) corners added"""
    points = sorted({(0.0, 0.0), (1.0, 1.0)} | {(p_fa, p_d) for _, p_fa, p_d in curve})
    p_fa, p_d = np.array(points).T
    return float(np.trapezoid(p_d, p_fa))


def make_evaluator(data: ScenarioData, rules: UpdateRules, hp: Hyperparams):
    """Per-round MetricsRow: consensus, estimation errors and the bilinear cost at the averaged iterates"""

    def evaluate(k: int, states: list[AgentState]) -> MetricsRow:
        est = admm_core.averaged_iterates(states, rules)
        return MetricsRow(
            round=k,
            consensus_q=admm_core.consensus_error(states, "Q").max if rules.consensus_q else 0.0,
            consensus_a=admm_core.consensus_error(states, "A").max if rules.consensus_a else 0.0,
            rel_err_x=_error_or_absolute(est.x, data.truth.x0),
            rel_err_a=_error_or_absolute(est.a, data.truth.a0),
            cost=p3_cost(data.y, data.mask, data.r, est.l, est.q, est.a, hp.lambda_star, hp.lambda_1),
        )

    return evaluate


class MetricsCsvSink:
    """Streams metrics rows to CSV as rounds complete"""

    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(path, "w", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(METRICS_HEADER)

    def __call__(self, row: MetricsRow) -> None:
        self._writer.writerow([format_value(v) for v in row.as_row()])

    def close(self) -> None:
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ==================== SCENARIO SETUP ====================

@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    graph: Graph
    positions: np.ndarray
    routing: RoutingMatrix | None
    data: ScenarioData


def build_graph(config: ScenarioConfig, seed: int) -> tuple[Graph, np.ndarray]:
    return random_geometric_graph(config.n_agents, config.comm_range, seed)


def build_scenario(config: ScenarioConfig, seed: int | None = None) -> Scenario:
    seed = config.seed if seed is None else seed
    graph, positions = build_graph(config, seed)
    routing = None
    if config.scenario == "duna" or (config.scenario == "dlasso" and config.l_links is None):
        routing = shortest_path_routing(graph, od_flows(graph.n_nodes))
    data = build_scenario_data(config, seed, graph, routing)
    return Scenario(config, graph, positions, routing, data)


def _oracle_certificate(data: ScenarioData, x, a, hp: Hyperparams) -> CertificateReport:
    l = q = None
    if x is not None:
        l, q = balanced_factors(x)
    return prop1_certificate(data.y, data.mask, data.r, l, q, a, hp.lambda_star, hp.lambda_1)


def _distance_to_oracle(states, rules: UpdateRules, est: Estimates, oracle_x, oracle_a) -> float:
    """max_n ||A_n - A_oracle|| / (1 + ||A_oracle||) when A is consented, else the X distance"""
    if rules.consensus_a:
        scale = 1.0 + frobenius_norm(oracle_a)
        return max(frobenius_norm(s.a_n - oracle_a) / scale for s in states)
    return frobenius_norm(est.x - oracle_x) / (1.0 + frobenius_norm(oracle_x))


# ==================== RUN ====================

def run_scenario(config: ScenarioConfig, seed: int | None = None, out_dir: str | Path | None = None) -> RunSummary:
    """
    Build graph and data, run the distributed solver and the centralized
    oracle, and write metrics, estimates, ROC, certificates, graph and a
    JSON summary to out_dir. exit_status is 0 on convergence, 2 otherwise.
    """
    seed = config.seed if seed is None else seed
    out = Path(out_dir if out_dir is not None else config.out_path)
    logger.info("running %s scenario (seed %d) into %s", config.scenario, seed, out)

    scenario = build_scenario(config, seed)
    data = scenario.data
    rules = get_rules(config.scenario)
    hp = make_hyperparams(config, data)
    logger.info("lambda_star=%.6g lambda_1=%.6g", hp.lambda_star, hp.lambda_1)

    agent_data = admm_core.build_agent_data(data, rules, hp)
    states = admm_core.init_agents(agent_data, scenario.graph.neighborhoods(), rules, hp, seed)
    with MetricsCsvSink(out / "metrics.csv") as sink:
        result = admm_core.run(states, rules, agent_data, hp, make_evaluator(data, rules, hp), sink)
    files = ["metrics.csv"]

    est = admm_core.averaged_iterates(result.states, rules)
    for name, m in (("l_hat.csv", est.l), ("q_hat.csv", est.q), ("a_hat.csv", est.a), ("x_hat.csv", est.x)):
        if m is not None:
            write_matrix(out / name, m)
            files.append(name)

    oracle = solve_p1_centralized(
        data.y, data.mask, data.r, hp.lambda_star, hp.lambda_1,
        tol=config.oracle_tol, max_iter=config.oracle_max_iter,
        fit_low_rank=rules.has_factors,
    )
    for name, m in (("oracle_x.csv", oracle.x), ("oracle_a.csv", oracle.a)):
        if m is not None:
            write_matrix(out / name, m)
            files.append(name)

    auc = None
    if config.scenario in ("duna", "drpca"):
        try:
            curve = roc_curve(est.a, data.truth.a0, config.n_thresholds)
            write_csv(out / "roc.csv", ROC_HEADER, curve)
            files.append("roc.csv")
            auc = roc_auc(curve)
        except NoAnomalies:
            logger.warning("no anomalies in the ground truth; ROC skipped")

    certificate = prop1_certificate(data.y, data.mask, data.r, est.l, est.q, est.a, hp.lambda_star, hp.lambda_1)
    oracle_certificate = _oracle_certificate(data, oracle.x, oracle.a, hp)
    write_csv(out / "certificate.csv", CERTIFICATE_HEADER, [certificate.as_row()])
    write_csv(out / "certificate_centralized.csv", CERTIFICATE_HEADER, [oracle_certificate.as_row()])
    files += ["certificate.csv", "certificate_centralized.csv"]

    export_graph_csv(scenario.graph, scenario.positions, out)
    files += ["nodes.csv", "edges.csv"]

    last = result.metrics[-1] if result.metrics else make_evaluator(data, rules, hp)(0, result.states)
    summary = RunSummary(
        scenario=config.scenario,
        exit_status=0 if result.converged else 2,
        converged=result.converged,
        rounds=result.rounds,
        lambda_star=hp.lambda_star,
        lambda_1=hp.lambda_1,
        final_consensus_q=last.consensus_q,
        final_consensus_a=last.consensus_a,
        rel_err_x=last.rel_err_x,
        rel_err_a=last.rel_err_a,
        oracle_rel_err_x=_error_or_absolute(oracle.x, data.truth.x0),
        oracle_rel_err_a=_error_or_absolute(oracle.a, data.truth.a0),
        cost_distributed=p1_cost(data.y, data.mask, data.r, est.x, est.a, hp.lambda_star, hp.lambda_1),
        cost_centralized=p1_cost(data.y, data.mask, data.r, oracle.x, oracle.a, hp.lambda_star, hp.lambda_1),
        max_agent_distance_to_oracle=_distance_to_oracle(result.states, rules, est, oracle.x, oracle.a),
        auc=auc,
        certificate=certificate,
        oracle_certificate=oracle_certificate,
        files=files + ["summary.json"],
    )
    (out / "summary.json").write_text(summary.model_dump_json(indent=2) + "\n")
    logger.info("%s finished: exit status %d after %d rounds", config.scenario, summary.exit_status, result.rounds)
    return summary


# ==================== CERTIFY / GRAPH ====================

def certify_estimates(config: ScenarioConfig, estimates_dir: str | Path, seed: int | None = None) -> CertificateReport:
    """Certificate for saved estimates against the data regenerated from config"""
    estimates_dir = Path(estimates_dir)
    if not estimates_dir.is_dir():
        raise EstimateFileError(f"estimates directory not found: {estimates_dir}")
    scenario = build_scenario(config, seed)
    data = scenario.data
    rules = get_rules(config.scenario)
    hp = make_hyperparams(config, data)

    l = q = a = None
    if rules.has_factors:
        l = read_matrix(estimates_dir / "l_hat.csv")
        q = read_matrix(estimates_dir / "q_hat.csv")
    if rules.has_sparse:
        a = read_matrix(estimates_dir / "a_hat.csv")
    if l is not None and (l.shape[0] != data.y.shape[0] or q.shape[0] != data.y.shape[1] or l.shape[1] != q.shape[1]):
        raise EstimateFileError(f"factor shapes {l.shape}, {q.shape} do not fit Y {data.y.shape}")
    if a is not None and data.r is not None and a.shape != (data.r.shape[1], data.y.shape[1]):
        raise EstimateFileError(f"a_hat shape {a.shape} does not fit the scenario")

    report = prop1_certificate(data.y, data.mask, data.r, l, q, a, hp.lambda_star, hp.lambda_1)
    write_csv(estimates_dir / "certificate.csv", CERTIFICATE_HEADER, [report.as_row()])
    return report


def export_graph(config: ScenarioConfig, out_dir: str | Path | None = None, seed: int | None = None):
    seed = config.seed if seed is None else seed
    graph, positions = build_graph(config, seed)
    out = Path(out_dir if out_dir is not None else config.out_path)
    export_graph_csv(graph, positions, out)
    logger.info("graph with %d nodes and %d edges written to %s", graph.n_nodes, len(graph.edges), out)
    return graph, positions
