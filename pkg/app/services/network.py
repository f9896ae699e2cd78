"""
Agent communication graph and the link-by-flow routing operator.

Links are directed (two per undirected edge) and sorted by (source, target),
so the rows agent i owns (its outgoing links) are contiguous in R.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from app.config import CONNECTIVITY_RETRIES, EDGES_HEADER, NODES_HEADER
from app.exceptions import ConnectivityFailure, InvalidGraph, ShapeMismatch
from app.utils import derive_rng, write_csv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Graph:
    n_nodes: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.n_nodes < 1:
            raise InvalidGraph(f"graph needs at least one node, got {self.n_nodes}")
        seen = set()
        normalized = []
        for i, j in self.edges:
            if i == j:
                raise InvalidGraph(f"self loop at node {i}")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise InvalidGraph(f"edge ({i}, {j}) out of range for {self.n_nodes} nodes")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InvalidGraph(f"duplicate edge {key}")
            seen.add(key)
            normalized.append(key)
        object.__setattr__(self, "edges", tuple(sorted(normalized)))

    def neighbors(self, node: int) -> tuple[int, ...]:
        """Sorted neighborhood J_n."""
        return tuple(sorted(
            [j for i, j in self.edges if i == node] + [i for i, j in self.edges if j == node]
        ))

    def neighborhoods(self) -> list[tuple[int, ...]]:
        return [self.neighbors(n) for n in range(self.n_nodes)]

    def directed_links(self) -> list[tuple[int, int]]:
        return sorted([(i, j) for i, j in self.edges] + [(j, i) for i, j in self.edges])

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n_nodes))
        g.add_edges_from(self.edges)
        return g


@dataclass(frozen=True)
class RoutingMatrix:
    entries: np.ndarray                           # L x F, {0, 1}
    links: tuple[tuple[int, int], ...]            # row order
    flows: tuple[tuple[int, int], ...]            # column order
    link_index: dict = field(default_factory=dict)
    flow_index: dict = field(default_factory=dict)

    @property
    def n_links(self) -> int:
        return self.entries.shape[0]

    @property
    def n_flows(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class RowBlock:
    """Rows of R (and Y) owned by one agent."""
    agent: int
    start: int
    stop: int
    r_n: np.ndarray

    @property
    def rows(self) -> slice:
        return slice(self.start, self.stop)


# ==================== GRAPH GENERATION ====================

def is_connected(g: Graph) -> bool:
    return nx.is_connected(g.to_networkx())


def _geometric_edges(positions: np.ndarray, comm_range: float) -> list[tuple[int, int]]:
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.sum(diff ** 2, axis=-1))
    ii, jj = np.nonzero(np.triu(dist < comm_range, k=1))
    return list(zip(ii.tolist(), jj.tolist()))


def random_geometric_graph(n: int, comm_range: float, rng_seed: int) -> tuple[Graph, np.ndarray]:
    """
    n agents uniform on the unit square, linked when closer than comm_range.

    Disconnected draws are discarded and positions resampled from the next
    derived seed (seed, attempt) until the graph is connected.
    """
    if n < 1:
        raise InvalidGraph(f"n must be >= 1, got {n}")
    if comm_range <= 0:
        raise InvalidGraph(f"comm_range must be positive, got {comm_range}")

    for attempt in range(CONNECTIVITY_RETRIES):
        positions = derive_rng(rng_seed, "graph", attempt).uniform(0.0, 1.0, size=(n, 2))
        graph = Graph(n_nodes=n, edges=tuple(_geometric_edges(positions, comm_range)))
        if is_connected(graph):
            logger.debug("connected geometric graph after %d attempt(s)", attempt + 1)
            return graph, positions

    raise ConnectivityFailure(
        f"no connected graph with n={n}, comm_range={comm_range} after {CONNECTIVITY_RETRIES} draws"
    )


# ==================== ROUTING ====================

def od_flows(n: int) -> list[tuple[int, int]]:
    if n < 2:
        raise InvalidGraph(f"OD flows need at least two nodes, got {n}")
    return [(s, d) for s in range(n) for d in range(n) if s != d]


def shortest_path_routing(g: Graph, flows: list[tuple[int, int]]) -> RoutingMatrix:
    """
    Hop-count shortest paths; among equally short options the lowest-numbered
    next hop is taken, so the result is a pure function of (g, flows).
    """
    links = g.directed_links()
    link_index = {link: row for row, link in enumerate(links)}
    flow_index = {flow: col for col, flow in enumerate(flows)}
    entries = np.zeros((len(links), len(flows)))

    nxg = g.to_networkx()
    neighborhoods = g.neighborhoods()
    hops_to = {}

    for col, (s, d) in enumerate(flows):
        if d not in hops_to:
            hops_to[d] = nx.single_source_shortest_path_length(nxg, d)
        dist = hops_to[d]
        if s not in dist:
            raise ConnectivityFailure(f"flow ({s}, {d}) has no route")
        cur = s
        while cur != d:
            nxt = min(m for m in neighborhoods[cur] if dist.get(m) == dist[cur] - 1)
            entries[link_index[(cur, nxt)], col] = 1.0
            cur = nxt

    return RoutingMatrix(
        entries=entries,
        links=tuple(links),
        flows=tuple(flows),
        link_index=link_index,
        flow_index=flow_index,
    )


def partition_rows(g: Graph, routing: RoutingMatrix) -> list[RowBlock]:
    """Directed link i->j belongs to agent i."""
    if len(routing.links) != len(g.directed_links()):
        raise ShapeMismatch("routing matrix was not built from this graph")

    blocks = []
    start = 0
    for agent in range(g.n_nodes):
        stop = start
        while stop < len(routing.links) and routing.links[stop][0] == agent:
            stop += 1
        blocks.append(RowBlock(agent=agent, start=start, stop=stop, r_n=routing.entries[start:stop]))
        start = stop
    return blocks


# ==================== EXPORT ====================

def export_graph_csv(g: Graph, positions: np.ndarray, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    nodes_path = out_dir / "nodes.csv"
    edges_path = out_dir / "edges.csv"
    write_csv(nodes_path, NODES_HEADER, [(n, positions[n, 0], positions[n, 1]) for n in range(g.n_nodes)])
    write_csv(edges_path, EDGES_HEADER, g.edges)
    return nodes_path, edges_path
