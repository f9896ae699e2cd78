import json
from pathlib import Path

import numpy as np
import pytest

from app.exceptions import (
    ConfigParseError,
    ConfigValidationError,
    DegenerateTruth,
    EstimateFileError,
    NoAnomalies,
    ShapeMismatch,
)
from app.services.experiments import (
    build_scenario,
    certify_estimates,
    default_lambdas,
    export_graph,
    load_config,
    parse_config,
    relative_error,
    roc_auc,
    roc_curve,
    run_scenario,
)
from app.services.oracles import lambda_bounds
from app.utils import write_csv
from tests.conftest import read_csv, small_config

PRESETS = Path(__file__).resolve().parent.parent / "presets"


# ==================== config ====================

def test_parse_config():
    config = parse_config(
        "# anomaly run\n"
        "scenario = duna\n"
        "\n"
        "n_agents = 4   # small\n"
        "sigma=0.05\n"
    )
    assert config.scenario == "duna"
    assert config.n_agents == 4
    assert config.sigma == 0.05
    assert config.rho == 3


@pytest.mark.parametrize("text, line", [
    ("scenario = duna\nn_agents 4\n", 2),
    ("scenario = duna\n = 4\n", 2),
    ("scenario = duna\n\nbogus = 1\n", 3),
    ("scenario = duna\nrho = 2\nrho = 3\n", 3),
])
def test_parse_config_errors(text, line):
    with pytest.raises(ConfigParseError) as exc:
        parse_config(text)
    assert exc.value.line == line
    assert exc.value.exit_code == 3


def test_parse_config_validation_errors():
    with pytest.raises(ConfigValidationError) as exc:
        parse_config("scenario = duna\nn_agents = 0\n")
    assert exc.value.field == "n_agents"

    with pytest.raises(ConfigValidationError) as exc:
        parse_config("scenario = pca\n")
    assert exc.value.field == "scenario"

    with pytest.raises(ConfigValidationError):
        parse_config("scenario = dlasso\nl_links = 20\n")


def test_presets_parse():
    paths = sorted(PRESETS.glob("*.cfg"))
    assert len(paths) == 8
    for path in paths:
        config = load_config(path)
        assert path.name.startswith(config.scenario)


# ==================== metrics ====================

def test_relative_error():
    assert relative_error(np.array([[3.0, 4.0]]), np.array([[0.0, 5.0]])) == pytest.approx(np.sqrt(10) / 5)
    assert relative_error(np.ones((2, 2)), np.ones((2, 2))) == 0.0
    with pytest.raises(DegenerateTruth):
        relative_error(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ShapeMismatch):
        relative_error(np.ones((2, 2)), np.ones((2, 3)))


def test_roc_perfect_detector():
    a0 = np.zeros((4, 5))
    a0[1, 2] = a0[3, 0] = 1.0
    a_hat = 0.05 * a0
    curve = roc_curve(a_hat, a0, n_thresholds=10)
    assert len(curve) == 10
    assert [tau for tau, _, _ in curve] == sorted(tau for tau, _, _ in curve)
    assert all(p_fa == 0.0 and p_d == 1.0 for _, p_fa, p_d in curve)
    assert roc_auc(curve) == pytest.approx(1.0)


def test_roc_curve_is_monotone(rng):
    a0 = (rng.uniform(size=(20, 20)) < 0.1).astype(float)
    a_hat = a0 + 0.3 * rng.standard_normal((20, 20))
    curve = roc_curve(a_hat, a0, n_thresholds=50)
    p_fa = [row[1] for row in curve]
    p_d = [row[2] for row in curve]
    assert p_fa == sorted(p_fa, reverse=True)
    assert p_d == sorted(p_d, reverse=True)
    assert 0.5 < roc_auc(curve) <= 1.0


def test_roc_random_scores_are_near_chance(rng):
    a0 = (rng.uniform(size=(100, 100)) < 0.1).astype(float)
    curve = roc_curve(rng.uniform(size=(100, 100)), a0, n_thresholds=200)
    assert roc_auc(curve) == pytest.approx(0.5, abs=0.1)


def test_roc_edge_cases():
    a0 = np.ones((2, 2))
    assert roc_curve(np.zeros((2, 2)), a0) == [(0.0, 0.0, 0.0)]
    assert roc_auc([(0.0, 0.0, 0.0)]) == pytest.approx(0.5)
    assert all(p_fa == 0.0 for _, p_fa, _ in roc_curve(np.ones((2, 2)), a0, 5))
    with pytest.raises(NoAnomalies):
        roc_curve(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ShapeMismatch):
        roc_curve(np.ones((2, 2)), np.ones((3, 2)))


def test_write_csv(tmp_path):
    path = tmp_path / "out" / "rows.csv"
    write_csv(path, ["a", "b", "c"], [(1, 0.1, True), (2, 1e-20, False)])
    assert path.read_text() == "a,b,c\n1,0.10000000000000001,true\n2,9.9999999999999995e-21,false\n"
    with pytest.raises(ShapeMismatch):
        write_csv(path, ["a", "b"], [(1,)])


# ==================== tuning ====================

def test_default_lambdas_follow_the_bounds():
    config = small_config("drpca")
    data = build_scenario(config, seed=0).data
    bounds = lambda_bounds(data.y, data.r)
    lambda_star, lambda_1 = default_lambdas(config, data)
    assert lambda_star == pytest.approx(0.3 * bounds.lambda_star_max)
    assert lambda_1 == pytest.approx(0.1 * bounds.lambda_1_max)

    config = small_config("drpca", lambda_star_fraction=0.03, lambda_1_fraction=0.01)
    lambda_star, lambda_1 = default_lambdas(config, data)
    assert lambda_star == pytest.approx(0.03 * bounds.lambda_star_max)
    assert lambda_1 == pytest.approx(0.01 * bounds.lambda_1_max)

    config = small_config("drpca", lambda_star=2.0, lambda_1=0.5)
    assert default_lambdas(config, data) == (2.0, 0.5)


def test_default_lambda_1_is_zero_without_sparse_block():
    config = small_config("dmc")
    data = build_scenario(config, seed=0).data
    assert default_lambdas(config, data)[1] == 0.0


# ==================== run_scenario ====================

@pytest.mark.parametrize("kind", ["duna", "drpca", "dmc", "dlasso"])
def test_run_scenario_writes_results(tmp_path, kind):
    summary = run_scenario(small_config(kind, pi=0.3), seed=1, out_dir=tmp_path)
    assert summary.scenario == kind
    assert summary.exit_status == (0 if summary.converged else 2)
    for name in summary.files:
        assert (tmp_path / name).exists(), name

    header, rows = read_csv(tmp_path / "metrics.csv")
    assert header == ["round", "consensus_q", "consensus_a", "rel_err_x", "rel_err_a", "cost"]
    assert len(rows) == summary.rounds
    assert [int(row[0]) for row in rows] == list(range(1, summary.rounds + 1))

    header, rows = read_csv(tmp_path / "certificate.csv")
    assert header == ["spectral_residual", "lambda_star", "condition_met", "res_eq13", "res_eq14", "res_eq15"]
    assert rows[0][2] in ("true", "false")

    assert ("roc.csv" in summary.files) == (kind in ("duna", "drpca"))
    stored = json.loads((tmp_path / "summary.json").read_text())
    assert stored["rounds"] == summary.rounds
    assert stored["scenario"] == kind


def test_run_scenario_is_deterministic(tmp_path):
    config = small_config("duna", max_rounds=15, pi=0.3)
    run_scenario(config, seed=3, out_dir=tmp_path / "first")
    run_scenario(config, seed=3, out_dir=tmp_path / "second")
    for name in ("metrics.csv", "q_hat.csv", "a_hat.csv", "nodes.csv", "roc.csv"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()


def test_run_scenario_without_rounds(tmp_path):
    summary = run_scenario(small_config("drpca", max_rounds=0), out_dir=tmp_path)
    assert summary.exit_status == 2
    assert summary.rounds == 0 and not summary.converged
    assert (tmp_path / "metrics.csv").read_text() == "round,consensus_q,consensus_a,rel_err_x,rel_err_a,cost\n"


def test_run_scenario_defaults_to_config_out_path(tmp_path):
    config = small_config("dmc", max_rounds=2, out_path=str(tmp_path / "from_config"))
    run_scenario(config)
    assert (tmp_path / "from_config" / "summary.json").exists()


# ==================== certify / graph ====================

def test_certify_saved_estimates(tmp_path):
    config = small_config("drpca", max_rounds=10)
    summary = run_scenario(config, out_dir=tmp_path)
    (tmp_path / "certificate.csv").unlink()
    report = certify_estimates(config, tmp_path)
    assert report.spectral_residual == pytest.approx(summary.certificate.spectral_residual, rel=1e-12)
    assert report.res_eq14 == pytest.approx(summary.certificate.res_eq14, rel=1e-9, abs=1e-12)
    assert (tmp_path / "certificate.csv").exists()


def test_certify_missing_estimates(tmp_path):
    config = small_config("drpca")
    with pytest.raises(EstimateFileError):
        certify_estimates(config, tmp_path / "nowhere")
    with pytest.raises(EstimateFileError) as exc:
        certify_estimates(config, tmp_path)
    assert exc.value.exit_code == 7


def test_certify_rejects_wrong_shapes(tmp_path):
    config = small_config("dmc")
    np.savetxt(tmp_path / "l_hat.csv", np.ones((3, 2)), delimiter=",")
    np.savetxt(tmp_path / "q_hat.csv", np.ones((8, 2)), delimiter=",")
    with pytest.raises(EstimateFileError):
        certify_estimates(config, tmp_path)


def test_export_graph(tmp_path):
    graph, positions = export_graph(small_config("duna"), out_dir=tmp_path)
    assert graph.n_nodes == 3 and len(graph.edges) == 3
    header, rows = read_csv(tmp_path / "edges.csv")
    assert len(rows) == 3
    header, rows = read_csv(tmp_path / "nodes.csv")
    assert float(rows[0][1]) == positions[0, 0]
