import csv

import numpy as np
import pytest

from app.schemas import Hyperparams, ScenarioConfig
from app.services.admm_core import AgentData, init_agents
from app.services.network import Graph, RoutingMatrix
from app.services.numerics import inv_regularized_gram
from app.services.solvers import get_rules


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def chain3() -> Graph:
    return Graph(n_nodes=3, edges=((0, 1), (1, 2)))


def make_hyperparams(**overrides) -> Hyperparams:
    values = dict(lambda_star=1.0, lambda_1=0.1, c=0.5, mu=0.5, rho=2, max_rounds=20, tol=1e-9)
    values.update(overrides)
    return Hyperparams(**values)


def make_agent_data(
    rng: np.random.Generator,
    rows: list[int],
    t: int,
    f: int | None = None,
    c: float = 0.5,
    mask_p: float | None = None,
) -> list[AgentData]:
    """Random per-agent blocks; r_n and its cached inverse only when f is given."""
    agents = []
    for n, l_n in enumerate(rows):
        y_n = rng.standard_normal((l_n, t))
        r_n = gram_inv = mask_n = None
        if f is not None:
            r_n = rng.standard_normal((l_n, f))
            gram_inv = inv_regularized_gram(r_n, c)
        if mask_p is not None:
            mask_n = (rng.uniform(size=(l_n, t)) < mask_p).astype(float)
            y_n = mask_n * y_n
        agents.append(AgentData(agent_id=n, y_n=y_n, r_n=r_n, mask_n=mask_n,
                                gram_inv=gram_inv, n_agents=len(rows)))
    return agents


def make_states(kind: str, agent_data, graph: Graph, hp: Hyperparams, seed: int = 0):
    return init_agents(agent_data, graph.neighborhoods(), get_rules(kind), hp, seed)


def small_config(scenario: str, **overrides) -> ScenarioConfig:
    """Few agents on a complete graph, small matrices, short runs"""
    base = dict(
        scenario=scenario, n_agents=3, t_cols=8, comm_range=1.5, rank_true=2, rho=2,
        sigma=0.01, pi=0.1, c=10.0, mu=10.0, max_rounds=40, tol=1e-8, oracle_tol=1e-9,
        oracle_max_iter=2000, n_thresholds=20,
    )
    if scenario in ("drpca", "dmc"):
        base.update(f_flows=12)
    if scenario == "dlasso":
        base.update(l_links=15, f_flows=10, t_cols=3, rank_true=0, c=1.0, mu=1.0)
    base.update(overrides)
    return ScenarioConfig(**base)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        return header, [row for row in reader]


def route_links(routing: RoutingMatrix, flow: tuple[int, int]) -> list[tuple[int, int]]:
    """Directed links marked in the column of `flow`, in path order."""
    s, d = flow
    marked = {routing.links[row] for row in np.flatnonzero(routing.entries[:, routing.flow_index[flow]])}
    path, cur = [], s
    while cur != d and marked:
        nxt = next(link for link in marked if link[0] == cur)
        marked.remove(nxt)
        path.append(nxt)
        cur = nxt[1]
    return path
