"""
Centralized reference solvers and optimality checks.

The distributed solvers are judged against these: a monotone accelerated
proximal-gradient solver for the convex problem, the stationarity / spectral certificate
for a factored point, and two slow explicit forms of the per-agent
iteration (multiplier-explicit AD-MoM and the Kronecker-matrix DMC step).
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.exceptions import ShapeMismatch
from app.schemas import CertificateReport, Hyperparams
from app.services.admm_core import AgentData, AgentState, NeighborMessage
from app.services.numerics import (
    frobenius_norm,
    nuclear_norm,
    right_solve_sym_pd,
    soft_threshold,
    spectral_norm,
    svt_shrink,
    thin_svd,
)

logger = logging.getLogger(__name__)


def _masked(m: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return m if mask is None else mask * m


def _residual(y, mask, r, x, a) -> np.ndarray:
    res = y
    if x is not None:
        res = res - x
    if a is not None:
        if r is None:
            raise ShapeMismatch("a sparse block needs a regression operator")
        res = res - r @ a
    return _masked(res, mask)


# ==================== COSTS ====================

def p1_cost(y, mask, r, x, a, lambda_star: float, lambda_1: float) -> float:
    """1/2 ||P_Omega(Y - X - RA)||_F^2 + lambda_* ||X||_* + lambda_1 ||A||_1; absent blocks are zero"""
    cost = 0.5 * frobenius_norm(_residual(y, mask, r, x, a)) ** 2
    if x is not None:
        cost += lambda_star * nuclear_norm(x)
    if a is not None:
        cost += lambda_1 * float(np.sum(np.abs(a)))
    return cost


def p3_cost(y, mask, r, l, q, a, lambda_star: float, lambda_1: float) -> float:
    """Separable bilinear surrogate: the nuclear norm replaced by (||L||_F^2 + ||Q||_F^2) / 2"""
    x = l @ q.T if l is not None else None
    cost = 0.5 * frobenius_norm(_residual(y, mask, r, x, a)) ** 2
    if l is not None:
        cost += 0.5 * lambda_star * (frobenius_norm(l) ** 2 + frobenius_norm(q) ** 2)
    if a is not None:
        cost += lambda_1 * float(np.sum(np.abs(a)))
    return cost


@dataclass(frozen=True)
class LambdaBounds:
    lambda_1_max: float       # ||R' P_Omega(Y)||_inf
    lambda_star_max: float    # ||P_Omega(Y)||


def lambda_bounds(y: np.ndarray, r: np.ndarray | None, mask: np.ndarray | None = None) -> LambdaBounds:
    """Above both bounds the all-zero pair is the unique convex-problem solution."""
    observed = _masked(y, mask)
    l1_max = float(np.max(np.abs(r.T @ observed), initial=0.0)) if r is not None else 0.0
    return LambdaBounds(lambda_1_max=l1_max, lambda_star_max=spectral_norm(observed))


# ==================== CENTRALIZED SOLVER ====================

@dataclass
class CentralizedSolution:
    x: np.ndarray | None
    a: np.ndarray | None
    costs: list[float]
    converged: bool
    iterations: int


def lipschitz_bound(r: np.ndarray | None) -> float:
    """max(1, ||R||^2) + 1 bounds the gradient Lipschitz constant of the joint LS term"""
    r_norm = spectral_norm(r) if r is not None and r.size else 0.0
    return max(1.0, r_norm ** 2) + 1.0


def proximal_step(y, mask, r, x, a, step: float, lambda_star: float, lambda_1: float):
    """
    One proximal-gradient step from (x, a): gradient step on the LS term,
    then singular value thresholding on X and soft-thresholding on A.
    Absent blocks stay absent.
    """
    res = _residual(y, mask, r, x, a)
    x_new = svt_shrink(x + step * res, step * lambda_star) if x is not None else None
    a_new = soft_threshold(a + step * (r.T @ res), step * lambda_1) if a is not None else None
    return x_new, a_new


def solve_p1_centralized(
    y: np.ndarray,
    mask: np.ndarray | None,
    r: np.ndarray | None,
    lambda_star: float,
    lambda_1: float,
    tol: float = 1e-10,
    max_iter: int = 20000,
    fit_low_rank: bool = True,
) -> CentralizedSolution:
    """
    Monotone accelerated proximal gradient on the convex problem
    min 1/2 ||P_Omega(Y - X - RA)||_F^2 + lambda_* ||X||_* + lambda_1 ||A||_1.

    r=None drops the sparse block (matrix completion); fit_low_rank=False
    drops X (Lasso). A candidate step is accepted only if it does not
    increase the cost, so the recorded cost series is nonincreasing.
    Stops when the candidate cost changes by at most tol relative.
    """
    x = np.zeros_like(y) if fit_low_rank else None
    a = np.zeros((r.shape[1], y.shape[1])) if r is not None else None
    if x is None and a is None:
        raise ShapeMismatch("nothing to estimate: no low-rank and no sparse block")

    step = 1.0 / lipschitz_bound(r)
    cost = p1_cost(y, mask, r, x, a, lambda_star, lambda_1)
    costs = [cost]
    x_ex, a_ex = x, a
    t = 1.0

    for it in range(1, max_iter + 1):
        x_z, a_z = proximal_step(y, mask, r, x_ex, a_ex, step, lambda_star, lambda_1)
        cost_z = p1_cost(y, mask, r, x_z, a_z, lambda_star, lambda_1)
        done = abs(cost_z - cost) <= tol * abs(cost)

        if cost_z <= cost:
            x_new, a_new, cost_new = x_z, a_z, cost_z
        else:
            x_new, a_new, cost_new = x, a, cost
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if x is not None:
            x_ex = x_new + (t / t_new) * (x_z - x_new) + ((t - 1.0) / t_new) * (x_new - x)
        if a is not None:
            a_ex = a_new + (t / t_new) * (a_z - a_new) + ((t - 1.0) / t_new) * (a_new - a)
        x, a, cost, t = x_new, a_new, cost_new, t_new
        costs.append(cost)

        if done:
            logger.info("centralized solver stopped after %d iterations, cost %.10e", it, cost)
            return CentralizedSolution(x, a, costs, True, it)

    logger.warning("centralized solver used its budget of %d iterations", max_iter)
    return CentralizedSolution(x, a, costs, False, max_iter)


# ==================== CERTIFICATE ====================

def balanced_factors(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L = U S^1/2, Q = V S^1/2 over the numeric rank of x (at least one column)"""
    svd = thin_svd(x)
    k = max(svd.rank(), 1)
    root = np.sqrt(svd.sigma[:k])
    return svd.u[:, :k] * root, svd.v[:, :k] * root


def prop1_certificate(y, mask, r, l, q, a, lambda_star: float, lambda_1: float) -> CertificateReport:
    """
    Global-optimality test for a stationary point of the bilinear problem:
    ||P_Omega(Y - LQ' - RA)|| <= lambda_* plus the (sub)gradient residuals
    with respect to A, L and Q'.
    """
    x = l @ q.T if l is not None else None
    res = _residual(y, mask, r, x, a)
    spectral = spectral_norm(res)

    res_l = res_q = 0.0
    if l is not None:
        res_l = frobenius_norm(res @ q - lambda_star * l)
        res_q = frobenius_norm(l.T @ res - lambda_star * q.T)

    res_a = 0.0
    if a is not None:
        g = r.T @ res
        support = a != 0
        on = np.abs(g - lambda_1 * np.sign(a))
        off = np.maximum(np.abs(g) - lambda_1, 0.0)
        res_a = frobenius_norm(np.where(support, on, off))

    return CertificateReport(
        spectral_residual=spectral,
        lambda_star=lambda_star,
        condition_met=bool(spectral <= lambda_star),
        dual_bound=0.5 * spectral,
        res_eq13=res_a,
        res_eq14=res_l,
        res_eq15=res_q,
    )


def nuclear_variational_check(x: np.ndarray) -> float:
    """|(||L||_F^2 + ||Q||_F^2) / 2 - ||X||_*| for the SVD-balanced factors of X"""
    x = np.asarray(x, dtype=np.float64)
    if not x.any():
        return 0.0
    svd = thin_svd(x)
    root = np.sqrt(svd.sigma)
    l, q = svd.u * root, svd.v * root
    return abs(0.5 * (frobenius_norm(l) ** 2 + frobenius_norm(q) ** 2) - float(np.sum(svd.sigma)))


# ==================== EXPLICIT DMC STEP ====================

def _vec(m: np.ndarray) -> np.ndarray:
    return m.reshape(-1, order="F")


def _unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return v.reshape((rows, cols), order="F")


def dmc_kronecker_updates(state: AgentState, messages: Sequence[NeighborMessage],
                          data: AgentData, hp: Hyperparams) -> tuple[np.ndarray, np.ndarray]:
    """
    DMC Q and L updates through the full rho*T and rho*L_n systems built
    with A_Omega = diag(vec(Omega)) and column-major vec. Returns (Q, L).
    """
    l, q = state.l_n, state.q_n
    t, rho = q.shape
    l_rows = l.shape[0]
    d = len(messages)
    mask = data.mask_n if data.mask_n is not None else np.ones_like(data.y_n)
    a_omega = np.diag(_vec(mask))
    y_vec = _vec(data.y_n)

    kron_l = np.kron(np.eye(t), l)                                   # vec(L Q') = (I_T kron L) vec(Q')
    pair = sum((q + msg.q for msg in messages), np.zeros_like(q))
    e_inv = kron_l.T @ a_omega @ kron_l + (hp.lambda_star / data.n_agents + 2 * hp.c * d) * np.eye(rho * t)
    rhs = kron_l.T @ a_omega @ y_vec - _vec(state.o_n.T) + hp.c * _vec(pair.T)
    q_new = _unvec(np.linalg.solve(e_inv, rhs), rho, t).T

    kron_q = np.kron(q_new, np.eye(l_rows))                          # vec(L Q') = (Q kron I) vec(L)
    d_inv = kron_q.T @ a_omega @ kron_q + hp.lambda_star * np.eye(rho * l_rows)
    l_new = _unvec(np.linalg.solve(d_inv, kron_q.T @ a_omega @ y_vec), l_rows, rho)
    return q_new, l_new


# ==================== MULTIPLIER-EXPLICIT AD-MoM ====================

@dataclass(frozen=True)
class UnsimplifiedRound:
    q: list[np.ndarray]
    a: list[np.ndarray]
    l: list[np.ndarray]
    b: list[np.ndarray]
    m: list[np.ndarray]
    c_bar: dict[tuple[int, int], np.ndarray]
    c_tilde: dict[tuple[int, int], np.ndarray]
    d_bar: dict[tuple[int, int], np.ndarray]
    d_tilde: dict[tuple[int, int], np.ndarray]


def run_unsimplified_admm(
    agent_data: Sequence[AgentData],
    initial: Sequence[AgentState],
    hp: Hyperparams,
    rounds: int,
) -> list[UnsimplifiedRound]:
    """
    The general iteration with every per-edge auxiliary variable
    (F_bar, F_tilde, G_bar, G_tilde) and multiplier (C_bar, C_tilde,
    D_bar, D_tilde) kept explicitly, all multipliers starting at zero.
    Started from the same states it reproduces the DUNA recursions.
    """
    n_agents = len(initial)
    nbrs = [s.neighbor_ids for s in initial]
    pairs = [(n, m) for n in range(n_agents) for m in nbrs[n]]
    mu, c = hp.mu, hp.c

    q = [s.q_n.copy() for s in initial]
    a = [s.a_n.copy() for s in initial]
    l = [s.l_n.copy() for s in initial]
    b = [s.b_n.copy() for s in initial]
    m_dual = [np.zeros_like(s.a_n) for s in initial]

    f_bar = {p: 0.5 * (q[p[0]] + q[p[1]]) for p in pairs}
    f_tilde = {p: f_bar[p].copy() for p in pairs}
    g_bar = {p: 0.5 * (a[p[0]] + a[p[1]]) for p in pairs}
    g_tilde = {p: g_bar[p].copy() for p in pairs}
    c_bar = {p: np.zeros_like(q[0]) for p in pairs}
    c_tilde = {p: np.zeros_like(q[0]) for p in pairs}
    d_bar = {p: np.zeros_like(a[0]) for p in pairs}
    d_tilde = {p: np.zeros_like(a[0]) for p in pairs}

    trace = []
    for _ in range(rounds):
        # duals
        for n in range(n_agents):
            m_dual[n] = m_dual[n] + mu * (b[n] - a[n])
        for (n, m) in pairs:
            c_bar[n, m] = c_bar[n, m] + mu * (q[n] - f_bar[n, m])
            c_tilde[n, m] = c_tilde[n, m] + mu * (q[m] - f_tilde[n, m])
            d_bar[n, m] = d_bar[n, m] + mu * (a[n] - g_bar[n, m])
            d_tilde[n, m] = d_tilde[n, m] + mu * (a[m] - g_tilde[n, m])

        q_new, a_new, l_new, b_new = [], [], [], []
        for n in range(n_agents):
            data = agent_data[n]
            d = len(nbrs[n])
            rho = q[n].shape[1]
            y_minus_rb = data.y_n - data.r_n @ b[n]

            # Q and A
            rhs = y_minus_rb.T @ l[n]
            for m in nbrs[n]:
                rhs = rhs - (c_bar[n, m] + c_tilde[m, n]) + c * (f_bar[n, m] + f_tilde[m, n])
            shift = hp.lambda_star / data.n_agents + 2 * c * d
            qn = right_solve_sym_pd(rhs, l[n].T @ l[n] + shift * np.eye(rho))

            s = m_dual[n] + c * b[n]
            for m in nbrs[n]:
                s = s - (d_bar[n, m] + d_tilde[m, n]) + c * (g_bar[n, m] + g_tilde[m, n])
            an = soft_threshold(s, hp.lambda_1 / data.n_agents) / (c * (1 + 2 * d))

            # L
            ln = right_solve_sym_pd(y_minus_rb @ qn, qn.T @ qn + hp.lambda_star * np.eye(rho))

            # B
            bn = data.gram_inv @ (data.r_n.T @ (data.y_n - ln @ qn.T) - m_dual[n] + c * an)
            q_new.append(qn)
            a_new.append(an)
            l_new.append(ln)
            b_new.append(bn)

        for (n, m) in pairs:
            f_bar[n, m] = (c_bar[n, m] + c_tilde[n, m]) / (2 * c) + 0.5 * (q_new[n] + q_new[m])
            f_tilde[n, m] = f_bar[n, m].copy()
            g_bar[n, m] = (d_bar[n, m] + d_tilde[n, m]) / (2 * c) + 0.5 * (a_new[n] + a_new[m])
            g_tilde[n, m] = g_bar[n, m].copy()

        q, a, l, b = q_new, a_new, l_new, b_new
        trace.append(UnsimplifiedRound(
            q=list(q), a=list(a), l=list(l), b=list(b), m=list(m_dual),
            c_bar=dict(c_bar), c_tilde=dict(c_tilde), d_bar=dict(d_bar), d_tilde=dict(d_tilde),
        ))
    return trace
