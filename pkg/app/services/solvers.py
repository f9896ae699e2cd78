"""
Closed-form primal updates for the four applications.

Each update takes the agent state after its dual step, the round-k
neighbor messages, the agent's data and the hyperparameters, and returns
the state with the new primal blocks. Iterate indices: the Q update uses
L[k], B[k]; the A update uses round-k quantities; L uses Q[k+1], B[k];
B uses L[k+1], Q[k+1], A[k+1].
"""
import logging
from dataclasses import replace
from typing import Sequence

import numpy as np

from app.schemas import Hyperparams
from app.services.admm_core import AgentData, AgentState, NeighborMessage, UpdateRules
from app.services.numerics import right_solve_sym_pd, soft_threshold, solve_sym_pd

logger = logging.getLogger(__name__)


def _pair_sum(own: np.ndarray, neighbor_blocks: Sequence[np.ndarray]) -> np.ndarray:
    """sum over m in J_n of (own + block_m)"""
    total = len(neighbor_blocks) * own
    for block in neighbor_blocks:
        total = total + block
    return total


def _q_shift(data: AgentData, hp: Hyperparams, degree: int) -> float:
    return hp.lambda_star / data.n_agents + 2.0 * hp.c * degree


def _a_consensus_update(state: AgentState, messages: Sequence[NeighborMessage],
                        data: AgentData, hp: Hyperparams) -> np.ndarray:
    """[c(1 + 2|J_n|)]^-1 S_{lambda_1/N}(M + cB - P + c sum(A_n + A_m))"""
    d = len(messages)
    s = (state.m_n + hp.c * state.b_n - state.p_n
         + hp.c * _pair_sum(state.a_n, [msg.a for msg in messages]))
    return soft_threshold(s, hp.lambda_1 / data.n_agents) / (hp.c * (1 + 2 * d))


# ==================== DUNA ====================

def duna_updates(state: AgentState, messages: Sequence[NeighborMessage],
                 data: AgentData, hp: Hyperparams) -> AgentState:
    d = len(messages)
    l, q, b = state.l_n, state.q_n, state.b_n
    rho = q.shape[1]
    y_minus_rb = data.y_n - data.r_n @ b

    rhs = y_minus_rb.T @ l - state.o_n + hp.c * _pair_sum(q, [msg.q for msg in messages])
    q_new = right_solve_sym_pd(rhs, l.T @ l + _q_shift(data, hp, d) * np.eye(rho))

    a_new = _a_consensus_update(state, messages, data, hp)

    l_new = right_solve_sym_pd(y_minus_rb @ q_new, q_new.T @ q_new + hp.lambda_star * np.eye(rho))

    b_new = data.gram_inv @ (data.r_n.T @ (data.y_n - l_new @ q_new.T) - state.m_n + hp.c * a_new)
    return replace(state, q_n=q_new, a_n=a_new, l_n=l_new, b_n=b_new)


# ==================== DRPCA ====================

def drpca_updates(state: AgentState, messages: Sequence[NeighborMessage],
                  data: AgentData, hp: Hyperparams) -> AgentState:
    d = len(messages)
    l, q = state.l_n, state.q_n
    rho = q.shape[1]
    y_minus_a = data.y_n - state.a_n

    rhs = y_minus_a.T @ l - state.o_n + hp.c * _pair_sum(q, [msg.q for msg in messages])
    q_new = right_solve_sym_pd(rhs, l.T @ l + _q_shift(data, hp, d) * np.eye(rho))

    l_new = right_solve_sym_pd(y_minus_a @ q_new, q_new.T @ q_new + hp.lambda_star * np.eye(rho))

    # agent-local l1 term: threshold lambda_1, not lambda_1 / N
    a_new = soft_threshold(data.y_n - l_new @ q_new.T, hp.lambda_1)
    return replace(state, q_n=q_new, l_n=l_new, a_n=a_new)


# ==================== DMC ====================

def dmc_updates(state: AgentState, messages: Sequence[NeighborMessage],
                data: AgentData, hp: Hyperparams) -> AgentState:
    """
    Per-slice solves. Row t of Q solves
    [L' diag(w_t) L + (lambda_*/N + 2c|J_n|) I] q_t = L'(w_t * y_t) - o_t + c sum(q_n,t + q_m,t)
    and row l of L solves [Q' diag(w_l) Q + lambda_* I] l_l = Q'(w_l * y_l).
    """
    d = len(messages)
    l, q = state.l_n, state.q_n
    rho = q.shape[1]
    mask = data.mask_n if data.mask_n is not None else np.ones_like(data.y_n)
    observed = mask * data.y_n

    q_gram = np.einsum("lt,li,lj->tij", mask, l, l) + _q_shift(data, hp, d) * np.eye(rho)
    q_rhs = observed.T @ l - state.o_n + hp.c * _pair_sum(q, [msg.q for msg in messages])
    q_new = solve_sym_pd(q_gram, q_rhs)

    if data.n_rows == 0:
        return replace(state, q_n=q_new, l_n=np.zeros((0, rho)))
    l_gram = np.einsum("lt,ti,tj->lij", mask, q_new, q_new) + hp.lambda_star * np.eye(rho)
    l_new = solve_sym_pd(l_gram, observed @ q_new)
    return replace(state, q_n=q_new, l_n=l_new)


# ==================== DLASSO ====================

def dlasso_updates(state: AgentState, messages: Sequence[NeighborMessage],
                   data: AgentData, hp: Hyperparams) -> AgentState:
    a_new = _a_consensus_update(state, messages, data, hp)
    b_new = data.gram_inv @ (data.r_n.T @ data.y_n - state.m_n + hp.c * a_new)
    return replace(state, a_n=a_new, b_n=b_new)


RULES: dict[str, UpdateRules] = {
    "duna": UpdateRules(
        name="duna", update=duna_updates,
        consensus_q=True, consensus_a=True, uses_b=True,
    ),
    "drpca": UpdateRules(
        name="drpca", update=drpca_updates,
        consensus_q=True, consensus_a=False, uses_b=False, local_sparse=True,
    ),
    "dmc": UpdateRules(
        name="dmc", update=dmc_updates,
        consensus_q=True, consensus_a=False, uses_b=False, has_sparse=False,
    ),
    "dlasso": UpdateRules(
        name="dlasso", update=dlasso_updates,
        consensus_q=False, consensus_a=True, uses_b=True, has_factors=False,
        dual_step_is_c=True,
    ),
}


def get_rules(kind: str) -> UpdateRules:
    try:
        return RULES[kind]
    except KeyError:
        raise ValueError(f"unknown solver {kind!r}; expected one of {sorted(RULES)}") from None
