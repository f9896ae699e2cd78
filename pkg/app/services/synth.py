"""
Synthetic ground truth and observations for the four applications.

Every generator takes an explicit numpy Generator; build_scenario_data
derives one named substream per purpose ("low_rank", "sparse", "noise",
"mask", "regression") from the scenario seed.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from app.exceptions import ShapeMismatch
from app.schemas import ScenarioConfig
from app.services.network import Graph, RoutingMatrix, partition_rows
from app.utils import derive_rng, write_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundTruth:
    x0: np.ndarray | None       # low-rank component (None for dlasso)
    a0: np.ndarray | None       # sparse component F x T (None for dmc)
    true_rank: int


@dataclass(frozen=True)
class ScenarioData:
    """
    Pooled observations plus the per-agent row partition.

    `r` is the regression operator R of the model Y = X + RA + V: the routing matrix for duna,
    the identity for drpca, a fat matrix for dlasso and None for dmc.
    `mask` is None when every entry is observed.
    """
    kind: str
    y: np.ndarray
    mask: np.ndarray | None
    r: np.ndarray | None
    truth: GroundTruth
    row_blocks: tuple[slice, ...]

    @property
    def n_agents(self) -> int:
        return len(self.row_blocks)

    def agent_rows(self, agent: int) -> np.ndarray:
        return self.y[self.row_blocks[agent]]


# ==================== GENERATORS ====================

def gen_low_rank(rows: int, cols: int, r: int, w_var: float, z_var: float,
                 rng: np.random.Generator) -> np.ndarray:
    """W Z' with W rows x r ~ N(0, w_var) and Z cols x r ~ N(0, z_var)."""
    if r < 0 or r > min(rows, cols):
        raise ShapeMismatch(f"rank {r} impossible for a {rows}x{cols} matrix")
    w = rng.normal(0.0, np.sqrt(w_var), size=(rows, r))
    z = rng.normal(0.0, np.sqrt(z_var), size=(cols, r))
    return w @ z.T


def gen_sparse(f: int, t: int, pi: float, rng: np.random.Generator) -> np.ndarray:
    """Entries -1 and +1 with probability pi/2 each, 0 otherwise."""
    if not 0 <= pi <= 1:
        raise ValueError(f"pi must lie in [0, 1], got {pi}")
    u = rng.uniform(0.0, 1.0, size=(f, t))
    a = np.zeros((f, t))
    a[u < pi / 2] = -1.0
    a[(u >= pi / 2) & (u < pi)] = 1.0
    return a


def gen_noise(rows: int, cols: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    return sigma * rng.standard_normal((rows, cols))


def gen_mask(rows: int, cols: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(p) sampling mask"""
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return (rng.uniform(0.0, 1.0, size=(rows, cols)) < p).astype(np.float64)


# ==================== ROW PARTITIONS ====================

def equal_blocks(n_rows: int, n_agents: int) -> tuple[slice, ...]:
    """Contiguous blocks whose sizes differ by at most one."""
    bounds = np.cumsum([0] + [len(chunk) for chunk in np.array_split(np.arange(n_rows), n_agents)])
    return tuple(slice(int(bounds[i]), int(bounds[i + 1])) for i in range(n_agents))


def _link_blocks(graph: Graph, routing: RoutingMatrix) -> tuple[slice, ...]:
    return tuple(block.rows for block in partition_rows(graph, routing))


# ==================== SCENARIOS ====================

def build_scenario_data(
    config: ScenarioConfig,
    seed: int,
    graph: Graph | None = None,
    routing: RoutingMatrix | None = None,
) -> ScenarioData:
    kind = config.scenario
    t = config.t_cols
    r = config.rank_true

    if kind == "duna":
        if graph is None or routing is None:
            raise ShapeMismatch("duna needs the graph and its routing matrix")
        f = routing.n_flows
        if config.f_flows is not None and config.f_flows != f:
            raise ShapeMismatch(f"f_flows={config.f_flows} but the routing matrix has {f} flows")
        z0 = gen_low_rank(f, t, r, 100.0 / f, 100.0 / t, derive_rng(seed, "low_rank"))
        x0 = routing.entries @ z0
        a0 = gen_sparse(f, t, config.pi, derive_rng(seed, "sparse"))
        v = gen_noise(routing.n_links, t, config.sigma, derive_rng(seed, "noise"))
        y = x0 + routing.entries @ a0 + v
        data = ScenarioData(kind, y, None, routing.entries, GroundTruth(x0, a0, r),
                            _link_blocks(graph, routing))

    elif kind == "drpca":
        f = config.rows_f
        x0 = gen_low_rank(f, t, r, 100.0 / f, 100.0 / t, derive_rng(seed, "low_rank"))
        a0 = gen_sparse(f, t, config.pi, derive_rng(seed, "sparse"))
        v = gen_noise(f, t, config.sigma, derive_rng(seed, "noise"))
        data = ScenarioData(kind, x0 + a0 + v, None, np.eye(f), GroundTruth(x0, a0, r),
                            equal_blocks(f, config.n_agents))

    elif kind == "dmc":
        rows = config.l_links if config.l_links is not None else config.rows_f
        x0 = gen_low_rank(rows, t, r, 100.0 / rows, 100.0 / t, derive_rng(seed, "low_rank"))
        v = gen_noise(rows, t, config.sigma, derive_rng(seed, "noise"))
        mask = gen_mask(rows, t, config.p_obs, derive_rng(seed, "mask"))
        data = ScenarioData(kind, mask * (x0 + v), mask, None, GroundTruth(x0, None, r),
                            equal_blocks(rows, config.n_agents))

    elif kind == "dlasso":
        if config.l_links is None:
            if graph is None or routing is None:
                raise ShapeMismatch("dlasso without l_links regresses on the routing matrix")
            reg = routing.entries
            blocks = _link_blocks(graph, routing)
        else:
            reg = derive_rng(seed, "regression").standard_normal((config.l_links, config.f_flows))
            reg /= np.sqrt(config.l_links)
            blocks = equal_blocks(config.l_links, config.n_agents)
        a0 = gen_sparse(reg.shape[1], t, config.pi, derive_rng(seed, "sparse"))
        v = gen_noise(reg.shape[0], t, config.sigma, derive_rng(seed, "noise"))
        data = ScenarioData(kind, reg @ a0 + v, None, reg, GroundTruth(None, a0, 0), blocks)

    else:
        raise ValueError(f"unknown scenario kind {kind!r}")

    if len(data.row_blocks) != config.n_agents:
        raise ShapeMismatch(f"{len(data.row_blocks)} row blocks for {config.n_agents} agents")
    logger.info("synthesized %s data: Y is %dx%d", kind, *data.y.shape)
    return data


def dump_ground_truth(truth: GroundTruth, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for name, m in (("x0.csv", truth.x0), ("a0.csv", truth.a0)):
        if m is not None:
            write_matrix(out_dir / name, m)
            written.append(out_dir / name)
    return written
