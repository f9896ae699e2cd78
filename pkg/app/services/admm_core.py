"""
Per-agent AD-MoM engine.

Each round every agent reads only its own round-k state and the round-k
messages its neighbors posted on the board, applies the dual step
and then the solver's primal updates (Q then A, then L, then B).
The new states are collected into a fresh board, so agent visit order
never changes the result.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
from tqdm import tqdm

from app.config import SHOW_PROGRESS
from app.exceptions import MissingMessage, NonFinite, ShapeMismatch
from app.schemas import Hyperparams, MetricsRow
from app.services.numerics import frobenius_norm, inv_regularized_gram
from app.services.synth import ScenarioData
from app.utils import derive_rng

logger = logging.getLogger(__name__)

PRIMAL_BLOCKS = ("l_n", "q_n", "a_n", "b_n")
DUAL_BLOCKS = ("m_n", "o_n", "p_n")


@dataclass(frozen=True)
class AgentData:
    agent_id: int
    y_n: np.ndarray                       # L_n x T (masked for dmc)
    r_n: np.ndarray | None = None         # L_n x F
    mask_n: np.ndarray | None = None
    gram_inv: np.ndarray | None = None    # (R_n'R_n + cI)^-1, cached once per run
    n_agents: int = 1

    @property
    def n_rows(self) -> int:
        return self.y_n.shape[0]


@dataclass(frozen=True)
class AgentState:
    agent_id: int
    neighbor_ids: tuple[int, ...]
    l_n: np.ndarray | None = None
    q_n: np.ndarray | None = None
    a_n: np.ndarray | None = None
    b_n: np.ndarray | None = None
    m_n: np.ndarray | None = None
    o_n: np.ndarray | None = None
    p_n: np.ndarray | None = None

    def blocks(self) -> dict[str, np.ndarray]:
        return {
            name: getattr(self, name)
            for name in PRIMAL_BLOCKS + DUAL_BLOCKS
            if getattr(self, name) is not None
        }

    def message(self) -> "NeighborMessage":
        return NeighborMessage(sender=self.agent_id, q=self.q_n, a=self.a_n)


@dataclass(frozen=True)
class NeighborMessage:
    sender: int
    q: np.ndarray | None
    a: np.ndarray | None


class PrimalUpdate(Protocol):
    def __call__(self, state: AgentState, messages: Sequence[NeighborMessage],
                 data: AgentData, hp: Hyperparams) -> AgentState: ...


@dataclass(frozen=True)
class UpdateRules:
    """What one application keeps from the generic iteration"""
    name: str
    update: PrimalUpdate
    consensus_q: bool             # O_n dual, Q broadcast
    consensus_a: bool             # P_n dual, A broadcast
    uses_b: bool                  # B_n auxiliary and M_n dual
    has_factors: bool = True      # L_n, Q_n present
    has_sparse: bool = True       # A_n present
    local_sparse: bool = False    # A_n has the agent's rows only (drpca)
    dual_step_is_c: bool = False  # dlasso ascends its duals with step c

    def dual_step_size(self, hp: Hyperparams) -> float:
        return hp.c if self.dual_step_is_c else hp.mu


@dataclass
class RunResult:
    states: list[AgentState]
    metrics: list[MetricsRow] = field(default_factory=list)
    rounds: int = 0
    converged: bool = False


# ==================== SETUP ====================

def build_agent_data(data: ScenarioData, rules: UpdateRules, hp: Hyperparams) -> list[AgentData]:
    agents = []
    for n, rows in enumerate(data.row_blocks):
        r_n = data.r[rows] if data.r is not None else None
        agents.append(AgentData(
            agent_id=n,
            y_n=data.y[rows],
            r_n=r_n,
            mask_n=data.mask[rows] if data.mask is not None else None,
            gram_inv=inv_regularized_gram(r_n, hp.c) if rules.uses_b else None,
            n_agents=data.n_agents,
        ))
    return agents


def init_agents(
    agent_data: Sequence[AgentData],
    neighborhoods: Sequence[Sequence[int]],
    rules: UpdateRules,
    hp: Hyperparams,
    seed: int,
) -> list[AgentState]:
    """
    Duals, A_n and B_n start at zero; L_n then Q_n are drawn i.i.d. N(0, 1)
    from the substream (seed, "init", n).
    """
    if len(agent_data) != len(neighborhoods):
        raise ShapeMismatch(f"{len(agent_data)} data blocks for {len(neighborhoods)} agents")
    t = agent_data[0].y_n.shape[1]
    f = None
    if rules.uses_b:
        f = agent_data[0].r_n.shape[1]

    states = []
    for data, nbrs in zip(agent_data, neighborhoods):
        if data.y_n.shape[1] != t:
            raise ShapeMismatch(f"agent {data.agent_id} has {data.y_n.shape[1]} columns, expected {t}")
        if data.r_n is not None and data.r_n.shape[0] != data.n_rows:
            raise ShapeMismatch(f"agent {data.agent_id}: R_n rows do not match Y_n rows")
        if data.mask_n is not None and data.mask_n.shape != data.y_n.shape:
            raise ShapeMismatch(f"agent {data.agent_id}: mask shape {data.mask_n.shape} != {data.y_n.shape}")
        if rules.uses_b and data.r_n.shape[1] != f:
            raise ShapeMismatch(f"agent {data.agent_id}: R_n has {data.r_n.shape[1]} columns, expected {f}")

        rng = derive_rng(seed, "init", data.agent_id)
        state = AgentState(agent_id=data.agent_id, neighbor_ids=tuple(sorted(nbrs)))
        if rules.has_factors:
            state = replace(
                state,
                l_n=rng.standard_normal((data.n_rows, hp.rho)),
                q_n=rng.standard_normal((t, hp.rho)),
            )
        if rules.has_sparse:
            a_rows = data.n_rows if rules.local_sparse else f
            state = replace(state, a_n=np.zeros((a_rows, t)))
        if rules.uses_b:
            state = replace(state, b_n=np.zeros((f, t)), m_n=np.zeros((f, t)))
        if rules.consensus_q:
            state = replace(state, o_n=np.zeros((t, hp.rho)))
        if rules.consensus_a:
            state = replace(state, p_n=np.zeros((f, t)))
        states.append(state)
    return states


# ==================== ONE ROUND ====================

def dual_step(state: AgentState, messages: Sequence[NeighborMessage], step: float) -> AgentState:
    """
    M_n += step (B_n - A_n), O_n += step sum(Q_n - Q_m),
    P_n += step sum(A_n - A_m). Absent duals are skipped.
    """
    received = {msg.sender for msg in messages}
    missing = [m for m in state.neighbor_ids if m not in received]
    if missing:
        raise MissingMessage(f"agent {state.agent_id} has no round message from {missing}")
    own = [msg for msg in messages if msg.sender in state.neighbor_ids]

    m_n, o_n, p_n = state.m_n, state.o_n, state.p_n
    if m_n is not None:
        m_n = m_n + step * (state.b_n - state.a_n)
    if o_n is not None and own:
        o_n = o_n + step * sum(state.q_n - msg.q for msg in own)
    if p_n is not None and own:
        p_n = p_n + step * sum(state.a_n - msg.a for msg in own)
    return replace(state, m_n=m_n, o_n=o_n, p_n=p_n)


def run_round(
    states: Sequence[AgentState],
    rules: UpdateRules,
    agent_data: Sequence[AgentData],
    hp: Hyperparams,
    order: Iterable[int] | None = None,
) -> list[AgentState]:
    board = {s.agent_id: s.message() for s in states}
    by_id = {s.agent_id: s for s in states}
    step = rules.dual_step_size(hp)

    advanced = {}
    for n in (order if order is not None else by_id):
        state = by_id[n]
        messages = [board[m] for m in state.neighbor_ids if m in board]
        state = dual_step(state, messages, step)
        advanced[n] = rules.update(state, messages, agent_data[n], hp)
    return [advanced[s.agent_id] for s in states]


# ==================== DIAGNOSTICS ====================

@dataclass(frozen=True)
class ConsensusError:
    errors: np.ndarray      # one entry per agent
    degenerate: bool        # network average is zero; errors are absolute

    @property
    def max(self) -> float:
        return float(np.max(self.errors)) if self.errors.size else 0.0


def consensus_error(states: Sequence[AgentState], which: str) -> ConsensusError:
    """||Z_n - Z_bar||_F / ||Z_bar||_F for Z in {Q, A}"""
    attr = {"Q": "q_n", "A": "a_n"}[which]
    blocks = [getattr(s, attr) for s in states]
    if any(b is None for b in blocks):
        raise ShapeMismatch(f"block {which} is not kept by every agent")
    avg = np.mean(blocks, axis=0)
    norm = frobenius_norm(avg)
    errors = np.array([frobenius_norm(b - avg) for b in blocks])
    if norm == 0:
        logger.debug("network average of %s is zero; reporting absolute consensus errors", which)
        return ConsensusError(errors, True)
    return ConsensusError(errors / norm, False)


def has_converged(prev: Sequence[AgentState], states: Sequence[AgentState], tol: float) -> bool:
    """max over agents and blocks of ||delta||_F / (1 + ||block||_F) < tol"""
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    worst = 0.0
    for before, after in zip(prev, states):
        old = before.blocks()
        for name, block in after.blocks().items():
            change = frobenius_norm(block - old[name]) / (1.0 + frobenius_norm(block))
            worst = max(worst, change)
    return worst < tol


def check_finite(states: Sequence[AgentState], k: int) -> None:
    for s in states:
        for name, block in s.blocks().items():
            if not np.isfinite(block).all():
                raise NonFinite(f"agent {s.agent_id} block {name} is non-finite at round {k}")


@dataclass(frozen=True)
class Estimates:
    """Network-level estimates from the local iterates"""
    l: np.ndarray | None        # stacked L_n (each agent owns its rows)
    q: np.ndarray | None        # average of Q_n
    a: np.ndarray | None        # average of A_n, or stacked A_n when A is row-local

    @property
    def x(self) -> np.ndarray | None:
        if self.l is None or self.q is None:
            return None
        return self.l @ self.q.T


def averaged_iterates(states: Sequence[AgentState], rules: UpdateRules) -> Estimates:
    l = q = a = None
    if rules.has_factors:
        l = np.vstack([s.l_n for s in states])
        q = np.mean([s.q_n for s in states], axis=0)
    if rules.has_sparse:
        if rules.local_sparse:
            a = np.vstack([s.a_n for s in states])
        else:
            a = np.mean([s.a_n for s in states], axis=0)
    return Estimates(l=l, q=q, a=a)


# ==================== OUTER LOOP ====================

def run(
    states: list[AgentState],
    rules: UpdateRules,
    agent_data: Sequence[AgentData],
    hp: Hyperparams,
    evaluate: Callable[[int, list[AgentState]], MetricsRow] | None = None,
    sink: Callable[[MetricsRow], None] | None = None,
) -> RunResult:
    """
    Advance rounds until has_converged or hp.max_rounds. Each round's
    metrics row is appended to the result and handed to `sink`.
    """
    result = RunResult(states=states)
    for k in tqdm(range(1, hp.max_rounds + 1), desc=rules.name, disable=not SHOW_PROGRESS):
        prev = result.states
        result.states = run_round(prev, rules, agent_data, hp)
        result.rounds = k
        check_finite(result.states, k)

        if evaluate is not None:
            row = evaluate(k, result.states)
            result.metrics.append(row)
            if sink is not None:
                sink(row)
            logger.debug("round %d: consensus_q=%.3e consensus_a=%.3e cost=%.6e",
                         k, row.consensus_q, row.consensus_a, row.cost)

        if has_converged(prev, result.states, hp.tol):
            result.converged = True
            logger.info("%s converged after %d rounds", rules.name, k)
            break
    else:
        if hp.max_rounds > 0:
            logger.warning("%s reached max_rounds=%d without converging", rules.name, hp.max_rounds)
    return result
