from dataclasses import replace

import numpy as np
import pytest

from app.exceptions import MissingMessage, NonFinite, ShapeMismatch
from app.schemas import MetricsRow
from app.services import admm_core
from app.services.admm_core import AgentState, NeighborMessage
from app.services.numerics import soft_threshold
from app.services.solvers import get_rules
from app.services.synth import build_scenario_data
from app.utils import derive_rng
from tests.conftest import make_agent_data, make_hyperparams, make_states, small_config


# ==================== init ====================

def test_init_agents_shapes_and_zero_duals(rng, chain3):
    hp = make_hyperparams()
    agent_data = make_agent_data(rng, [1, 2, 1], t=5, f=4)
    states = make_states("duna", agent_data, chain3, hp, seed=11)
    for s, data in zip(states, agent_data):
        assert s.l_n.shape == (data.n_rows, 2)
        assert s.q_n.shape == (5, 2)
        assert s.a_n.shape == s.b_n.shape == s.m_n.shape == s.p_n.shape == (4, 5)
        assert s.o_n.shape == (5, 2)
        for block in (s.a_n, s.b_n, s.m_n, s.o_n, s.p_n):
            assert not block.any()
    assert states[1].neighbor_ids == (0, 2)


def test_init_agents_draws_l_then_q_per_agent(rng, chain3):
    hp = make_hyperparams()
    agent_data = make_agent_data(rng, [2, 2, 2], t=4)
    states = make_states("dmc", agent_data, chain3, hp, seed=5)
    for n, s in enumerate(states):
        stream = derive_rng(5, "init", n)
        assert np.array_equal(s.l_n, stream.standard_normal((2, 2)))
        assert np.array_equal(s.q_n, stream.standard_normal((4, 2)))
        assert s.a_n is None and s.b_n is None and s.p_n is None


def test_init_agents_blocks_per_solver(rng, chain3):
    hp = make_hyperparams()
    drpca = make_states("drpca", make_agent_data(rng, [3, 2, 2], t=4), chain3, hp)
    assert drpca[0].a_n.shape == (3, 4)
    assert drpca[0].p_n is None and drpca[0].m_n is None

    dlasso = make_states("dlasso", make_agent_data(rng, [3, 2, 2], t=4, f=5), chain3, hp)
    assert dlasso[0].l_n is None and dlasso[0].q_n is None and dlasso[0].o_n is None
    assert dlasso[0].a_n.shape == (5, 4)


def test_init_agents_checks_shapes(rng, chain3):
    hp = make_hyperparams()
    agent_data = make_agent_data(rng, [1, 1], t=3)
    with pytest.raises(ShapeMismatch):
        make_states("dmc", agent_data, chain3, hp)

    agent_data = make_agent_data(rng, [1, 1, 1], t=3)
    agent_data[2] = replace(agent_data[2], y_n=np.zeros((1, 4)))
    with pytest.raises(ShapeMismatch):
        make_states("dmc", agent_data, chain3, hp)


def test_build_agent_data_caches_gram_inverse_only_with_b():
    config = small_config("drpca")
    hp = make_hyperparams()
    data = build_scenario_data(config, seed=0)
    agents = admm_core.build_agent_data(data, get_rules("drpca"), hp)
    assert all(a.gram_inv is None for a in agents)
    assert np.array_equal(np.vstack([a.y_n for a in agents]), data.y)

    config = small_config("dlasso")
    data = build_scenario_data(config, seed=0)
    agents = admm_core.build_agent_data(data, get_rules("dlasso"), hp)
    r0 = agents[0].r_n
    assert np.allclose(agents[0].gram_inv @ (r0.T @ r0 + hp.c * np.eye(10)), np.eye(10))


# ==================== dual step ====================

def test_dual_step_updates():
    state = AgentState(
        agent_id=0, neighbor_ids=(1, 2),
        q_n=np.ones((2, 1)), a_n=np.ones((1, 2)), b_n=3 * np.ones((1, 2)),
        m_n=np.zeros((1, 2)), o_n=np.zeros((2, 1)), p_n=np.zeros((1, 2)),
    )
    messages = [
        NeighborMessage(sender=1, q=np.zeros((2, 1)), a=2 * np.ones((1, 2))),
        NeighborMessage(sender=2, q=-np.ones((2, 1)), a=np.ones((1, 2))),
    ]
    out = admm_core.dual_step(state, messages, step=0.5)
    assert np.allclose(out.m_n, 1.0)       # 0.5 * (3 - 1)
    assert np.allclose(out.o_n, 1.5)       # 0.5 * ((1 - 0) + (1 + 1))
    assert np.allclose(out.p_n, -0.5)      # 0.5 * ((1 - 2) + (1 - 1))


def test_dual_step_isolated_agent():
    state = AgentState(agent_id=0, neighbor_ids=(), q_n=np.ones((2, 1)), o_n=np.zeros((2, 1)))
    assert np.array_equal(admm_core.dual_step(state, [], 1.0).o_n, np.zeros((2, 1)))


def test_dual_step_missing_message():
    state = AgentState(agent_id=0, neighbor_ids=(1, 2), q_n=np.ones((2, 1)), o_n=np.zeros((2, 1)))
    with pytest.raises(MissingMessage):
        admm_core.dual_step(state, [NeighborMessage(sender=1, q=np.ones((2, 1)), a=None)], 1.0)


# ==================== rounds ====================

def test_round_does_not_depend_on_visit_order(rng, chain3):
    hp = make_hyperparams()
    rules = get_rules("duna")
    agent_data = make_agent_data(rng, [2, 1, 2], t=4, f=3, c=hp.c)
    states = make_states("duna", agent_data, chain3, hp)
    forward = admm_core.run_round(states, rules, agent_data, hp, order=[0, 1, 2])
    backward = admm_core.run_round(states, rules, agent_data, hp, order=[2, 1, 0])
    for a, b in zip(forward, backward):
        for name, block in a.blocks().items():
            assert np.array_equal(block, b.blocks()[name])


def test_duna_round_by_hand(rng, chain3):
    """Agent 1 (two neighbors) after one round, from explicit inverses."""
    hp = make_hyperparams(lambda_star=0.7, lambda_1=0.05, c=0.3, mu=0.2)
    agent_data = make_agent_data(rng, [2, 2, 2], t=3, f=4, c=hp.c)
    states = make_states("duna", agent_data, chain3, hp, seed=2)
    # nonzero starting blocks so every term of the updates is exercised
    states = [replace(s, a_n=rng.standard_normal((4, 3)), b_n=rng.standard_normal((4, 3)),
                      m_n=rng.standard_normal((4, 3)), o_n=rng.standard_normal((3, 2)),
                      p_n=rng.standard_normal((4, 3))) for s in states]
    out = admm_core.run_round(states, get_rules("duna"), agent_data, hp)

    s, data = states[1], agent_data[1]
    nb = [states[0], states[2]]
    n_agents, d, c = 3, 2, hp.c
    m = s.m_n + hp.mu * (s.b_n - s.a_n)
    o = s.o_n + hp.mu * sum(s.q_n - x.q_n for x in nb)
    p = s.p_n + hp.mu * sum(s.a_n - x.a_n for x in nb)
    e = data.y_n - data.r_n @ s.b_n

    q = (e.T @ s.l_n - o + c * sum(s.q_n + x.q_n for x in nb)) @ np.linalg.inv(
        s.l_n.T @ s.l_n + (hp.lambda_star / n_agents + 2 * c * d) * np.eye(2))
    a = soft_threshold(m + c * s.b_n - p + c * sum(s.a_n + x.a_n for x in nb),
                       hp.lambda_1 / n_agents) / (c * (1 + 2 * d))
    l = e @ q @ np.linalg.inv(q.T @ q + hp.lambda_star * np.eye(2))
    b = np.linalg.inv(data.r_n.T @ data.r_n + c * np.eye(4)) @ (
        data.r_n.T @ (data.y_n - l @ q.T) - m + c * a)

    got = out[1]
    for mine, theirs in ((got.m_n, m), (got.o_n, o), (got.p_n, p), (got.q_n, q),
                         (got.a_n, a), (got.l_n, l), (got.b_n, b)):
        assert np.allclose(mine, theirs, atol=1e-10)


def test_consensus_duals_sum_to_zero(rng, chain3):
    hp = make_hyperparams()
    rules = get_rules("duna")
    agent_data = make_agent_data(rng, [2, 1, 2], t=4, f=3, c=hp.c)
    states = make_states("duna", agent_data, chain3, hp)
    for _ in range(10):
        states = admm_core.run_round(states, rules, agent_data, hp)
        assert np.allclose(sum(s.o_n for s in states), 0.0, atol=1e-12)
        assert np.allclose(sum(s.p_n for s in states), 0.0, atol=1e-12)


# ==================== diagnostics ====================

def test_consensus_error():
    states = [AgentState(agent_id=n, neighbor_ids=(), q_n=np.full((2, 1), v)) for n, v in enumerate([1.0, 3.0])]
    err = admm_core.consensus_error(states, "Q")
    assert not err.degenerate
    # average is 2: each agent is off by sqrt(2) against ||avg|| = 2 sqrt(2)
    assert np.allclose(err.errors, 0.5)
    assert err.max == 0.5


def test_consensus_error_degenerate_average():
    states = [AgentState(agent_id=n, neighbor_ids=(), a_n=np.full((1, 1), v)) for n, v in enumerate([1.0, -1.0])]
    err = admm_core.consensus_error(states, "A")
    assert err.degenerate
    assert np.allclose(err.errors, 1.0)


def test_consensus_error_missing_block():
    states = [AgentState(agent_id=0, neighbor_ids=())]
    with pytest.raises(ShapeMismatch):
        admm_core.consensus_error(states, "Q")


def test_has_converged():
    before = [AgentState(agent_id=0, neighbor_ids=(), q_n=np.ones((2, 2)), o_n=np.zeros((2, 2)))]
    assert admm_core.has_converged(before, before, 1e-12)
    after = [replace(before[0], o_n=np.full((2, 2), 1e-3))]
    assert not admm_core.has_converged(before, after, 1e-6)
    assert admm_core.has_converged(before, after, 1e-2)
    with pytest.raises(ValueError):
        admm_core.has_converged(before, before, 0.0)


def test_check_finite():
    states = [AgentState(agent_id=0, neighbor_ids=(), q_n=np.array([[np.nan]]))]
    with pytest.raises(NonFinite):
        admm_core.check_finite(states, 3)


def test_averaged_iterates(rng, chain3):
    hp = make_hyperparams()
    agent_data = make_agent_data(rng, [2, 1, 2], t=4, f=3)
    states = make_states("duna", agent_data, chain3, hp)
    est = admm_core.averaged_iterates(states, get_rules("duna"))
    assert est.l.shape == (5, 2)
    assert np.allclose(est.q, np.mean([s.q_n for s in states], axis=0))
    assert np.allclose(est.x, est.l @ est.q.T)
    assert est.a.shape == (3, 4)


# ==================== outer loop ====================

def test_zero_rounds_returns_initial_states(rng, chain3):
    hp = make_hyperparams(max_rounds=0)
    agent_data = make_agent_data(rng, [1, 1, 1], t=3)
    states = make_states("dmc", agent_data, chain3, hp)
    result = admm_core.run(states, get_rules("dmc"), agent_data, hp)
    assert result.rounds == 0 and not result.converged
    assert result.states is states


def test_run_reports_every_round(rng, chain3):
    hp = make_hyperparams(max_rounds=5, tol=1e-300)
    agent_data = make_agent_data(rng, [2, 2, 2], t=3)
    states = make_states("dmc", agent_data, chain3, hp)
    seen = []

    def evaluate(k, _states):
        return MetricsRow(round=k, consensus_q=0.0, consensus_a=0.0, rel_err_x=0.0, rel_err_a=0.0, cost=0.0)

    result = admm_core.run(states, get_rules("dmc"), agent_data, hp, evaluate, seen.append)
    assert result.rounds == 5 and not result.converged
    assert [row.round for row in seen] == [1, 2, 3, 4, 5]
    assert result.metrics == seen


def test_run_raises_on_non_finite_state(rng, chain3):
    hp = make_hyperparams(c=1.0)
    agent_data = make_agent_data(rng, [2, 2, 2], t=3, f=4, c=1.0)
    y = agent_data[0].y_n.copy()
    y[0, 0] = np.inf
    agent_data[0] = replace(agent_data[0], y_n=y)
    states = make_states("dlasso", agent_data, chain3, hp)
    with pytest.raises(NonFinite):
        admm_core.run(states, get_rules("dlasso"), agent_data, hp)
