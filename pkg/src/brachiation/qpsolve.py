"""Operator-splitting (ADMM) solver for convex quadratic programs.

Handles equality rows, two-sided general inequalities and box bounds by
stacking everything into l <= A x <= u. Problem data is Ruiz-equilibrated
before iterating; termination checks use unscaled residuals. The iteration
is deterministic, so repeated solves of the same problem are
bit-reproducible. Supports warm starts and an optional active-set polish
step for high-accuracy solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

INF = np.inf


@dataclass
class QpProblem:
    """min 1/2 x'Hx + g'x  s.t.  Aeq x = beq, lo <= Aineq x <= hi, lb <= x <= ub."""

    H: np.ndarray
    g: np.ndarray
    Aeq: Optional[np.ndarray] = None
    beq: Optional[np.ndarray] = None
    Aineq: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.g)


@dataclass
class QpOptions:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 4000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho: bool = True
    check_interval: int = 25
    scaling_iters: int = 10
    polish: bool = True
    eps_infeas: float = 1e-9


@dataclass
class QpSolution:
    x: np.ndarray
    status: str  # optimal | max_iter | infeasible
    primal_residual: float
    dual_residual: float
    iterations: int
    obj: float
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    m_eq: int = 0
    m_ineq: int = 0

    @property
    def y_eq(self) -> np.ndarray:
        return self.y[: self.m_eq]

    @property
    def y_ineq(self) -> np.ndarray:
        return self.y[self.m_eq : self.m_eq + self.m_ineq]

    @property
    def y_box(self) -> np.ndarray:
        return self.y[self.m_eq + self.m_ineq :]


def _stack_constraints(prob: QpProblem):
    """Stack (eq, ineq, box) into sparse A with bounds l, u."""
    n = prob.n
    blocks, lows, highs = [], [], []
    m_eq = m_ineq = 0
    if prob.Aeq is not None and len(prob.beq) > 0:
        Aeq = sp.csc_matrix(prob.Aeq)
        blocks.append(Aeq)
        lows.append(np.asarray(prob.beq, dtype=float))
        highs.append(np.asarray(prob.beq, dtype=float))
        m_eq = Aeq.shape[0]
    if prob.Aineq is not None and prob.Aineq.shape[0] > 0:
        Ain = sp.csc_matrix(prob.Aineq)
        blocks.append(Ain)
        lo = np.full(Ain.shape[0], -INF) if prob.lo is None else np.asarray(prob.lo, dtype=float)
        hi = np.full(Ain.shape[0], INF) if prob.hi is None else np.asarray(prob.hi, dtype=float)
        lows.append(lo)
        highs.append(hi)
        m_ineq = Ain.shape[0]
    if prob.lb is not None or prob.ub is not None:
        blocks.append(sp.eye(n, format="csc"))
        lows.append(np.full(n, -INF) if prob.lb is None else np.asarray(prob.lb, dtype=float))
        highs.append(np.full(n, INF) if prob.ub is None else np.asarray(prob.ub, dtype=float))
    if not blocks:
        return sp.csc_matrix((0, n)), np.zeros(0), np.zeros(0), 0, 0
    A = sp.vstack(blocks, format="csc")
    return A, np.concatenate(lows), np.concatenate(highs), m_eq, m_ineq


def _regularized(H: np.ndarray) -> np.ndarray:
    """Symmetrize and nudge H to be positive semidefinite (min eig >= 1e-9)."""
    H = 0.5 * (H + H.T)
    try:
        cho_factor(H + 1e-9 * np.eye(H.shape[0]))
        return H
    except np.linalg.LinAlgError:
        lam_min = float(np.linalg.eigvalsh(H)[0])
        return H + max(0.0, 1e-9 - lam_min) * np.eye(H.shape[0])


def _ruiz_scale(H, g, A, l, u, iters: int):
    """Modified Ruiz equilibration; returns scaled data and (D, E, c) factors."""
    n = H.shape[0]
    m = A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    Hs, gs, As = H.copy(), g.copy(), A.copy()
    for _ in range(iters):
        col_h = np.max(np.abs(Hs), axis=0) if n else np.zeros(0)
        col_a = np.asarray(abs(As).max(axis=0).todense()).ravel() if m else np.zeros(n)
        col = np.maximum(col_h, col_a)
        col[col < 1e-12] = 1.0
        d = 1.0 / np.sqrt(col)
        if m:
            row = np.asarray(abs(As).max(axis=1).todense()).ravel()
            row[row < 1e-12] = 1.0
            e = 1.0 / np.sqrt(row)
        else:
            e = np.zeros(0)
        Hs = Hs * d[:, None] * d[None, :]
        gs = gs * d
        if m:
            As = sp.diags(e) @ As @ sp.diags(d)
        D *= d
        E *= e
        # cost scaling keeps the objective terms near unit magnitude
        gamma_den = max(np.mean(np.max(np.abs(Hs), axis=0)) if n else 0.0,
                        float(np.max(np.abs(gs))) if n else 0.0, 1e-12)
        gamma = 1.0 / gamma_den
        Hs *= gamma
        gs *= gamma
        c *= gamma
    ls = np.where(np.isfinite(l), E * l, l) if m else l
    us = np.where(np.isfinite(u), E * u, u) if m else u
    return Hs, gs, As.tocsc() if m else As, ls, us, D, E, c


def _polish(H, g, A, l, u, x, y, eq_mask, w=None):
    """Solve the KKT system of the guessed active set; returns refined (x, y) or None.

    Rows with a finite penalty weight w that sit at the weight's saturation
    (|y| close to w) are treated as violated-at-penalty: their multiplier is
    pinned to +-w and moved to the right-hand side instead of being active.
    """
    m = A.shape[0]
    z = A @ x
    tol = 1e-7
    low_act = (z - l < tol) | (eq_mask & (y < 0))
    up_act = (u - z < tol) | (eq_mask & (y >= 0))
    sat = np.zeros(m, dtype=bool)
    if w is not None:
        finite_w = np.isfinite(w)
        sat = finite_w & (np.abs(y) >= 0.999 * np.where(finite_w, w, np.inf))
        low_act &= ~sat
        up_act &= ~sat
    act = np.where(low_act | up_act)[0]
    n = len(g)
    rhs_g = -g.copy()
    y_sat = np.zeros(m)
    if np.any(sat):
        y_sat[sat] = np.sign(y[sat]) * w[sat]
        rhs_g -= A[sat].T @ y_sat[sat]
    if len(act) == 0:
        try:
            x_new = cho_solve(cho_factor(H + 1e-12 * np.eye(n)), rhs_g)
        except np.linalg.LinAlgError:
            return None
        return x_new, y_sat
    A_act = A[act].toarray()
    b_act = np.where(low_act[act], l[act], u[act])
    k = len(act)
    KKT = np.zeros((n + k, n + k))
    KKT[:n, :n] = H + 1e-10 * np.eye(n)
    KKT[:n, n:] = A_act.T
    KKT[n:, :n] = A_act
    KKT[n:, n:] = -1e-10 * np.eye(k)
    rhs = np.concatenate([rhs_g, b_act])
    try:
        sol = np.linalg.solve(KKT, rhs)
        sol += np.linalg.solve(KKT, rhs - KKT @ sol)  # one refinement step
    except np.linalg.LinAlgError:
        return None
    x_new = sol[:n]
    y_new = y_sat
    y_new[act] = sol[n:]
    return x_new, y_new


def _norm_inf(v) -> float:
    return float(np.max(np.abs(v))) if len(v) else 0.0


def _residuals(H, g, A, x, y, z):
    """Unscaled primal/dual residuals and their relative scales."""
    ax = A @ x
    r_prim = _norm_inf(ax - z) if len(z) else 0.0
    hx = H @ x
    aty = A.T @ y if len(z) else np.zeros_like(x)
    r_dual = _norm_inf(hx + g + aty)
    prim_scale = max(_norm_inf(ax), _norm_inf(z), 1e-12)
    dual_scale = max(_norm_inf(hx), _norm_inf(g), _norm_inf(aty), 1e-12)
    return r_prim, r_dual, prim_scale, dual_scale


def _primal_infeasible(A, l, u, dy, eps) -> bool:
    nd = _norm_inf(dy)
    if nd < 1e-14:
        return False
    dyn = dy / nd
    if _norm_inf(A.T @ dyn) > eps:
        return False
    pos = np.maximum(dyn, 0.0)
    neg = np.minimum(dyn, 0.0)
    # infinite bounds with a nonzero certificate component rule it out
    if np.any(pos[~np.isfinite(u)] > eps) or np.any(neg[~np.isfinite(l)] < -eps):
        return False
    support = float(np.sum(u[np.isfinite(u)] * pos[np.isfinite(u)])
                    + np.sum(l[np.isfinite(l)] * neg[np.isfinite(l)]))
    return support < -eps


def qp_solve(
    prob: QpProblem,
    opts: Optional[QpOptions] = None,
    x0: Optional[np.ndarray] = None,
    y0: Optional[np.ndarray] = None,
    soft: Optional[np.ndarray] = None,
) -> QpSolution:
    """Solve a convex QP by ADMM with scaling, adaptive penalty and polish.

    `soft`, when given, assigns an l1 penalty weight to each general row
    (equalities then inequalities, np.inf meaning hard): those rows may be
    violated at a cost of weight * violation, which makes the subproblem
    always feasible and bounds their multipliers by the weight. Box rows stay
    hard.
    """
    opts = opts or QpOptions()
    n = prob.n
    g_us = np.asarray(prob.g, dtype=float)
    H_us = _regularized(np.asarray(prob.H, dtype=float))
    A_us, l_us, u_us, m_eq, m_ineq = _stack_constraints(prob)
    m = A_us.shape[0]

    w_us = np.full(m, INF)
    if soft is not None:
        soft = np.broadcast_to(np.asarray(soft, dtype=float),
                               (m_eq + m_ineq,))
        w_us[: m_eq + m_ineq] = soft
    any_soft = bool(np.any(np.isfinite(w_us)))

    if m == 0:
        x = cho_solve(cho_factor(H_us + 1e-12 * np.eye(n)), -g_us)
        return QpSolution(x=x, status="optimal", primal_residual=0.0,
                          dual_residual=0.0, iterations=0,
                          obj=float(0.5 * x @ H_us @ x + g_us @ x))

    H, g, A, l, u, D, E, c_scale = _ruiz_scale(
        H_us, g_us, A_us, l_us, u_us, opts.scaling_iters)
    At = A.T.tocsc()

    # penalty weights in scaled space: the objective carries c, the row E
    w = np.where(np.isfinite(w_us), c_scale * w_us / E, INF)

    eq_mask = l_us == u_us
    rho_base = opts.rho

    def rho_vec(base):
        r = np.full(m, base)
        r[eq_mask] = base * 1e3
        return np.clip(r, 1e-6, 1e6)

    rho = rho_vec(rho_base)

    def factor(rho):
        K = H + opts.sigma * np.eye(n) + (At @ sp.diags(rho) @ A).toarray()
        return cho_factor(K)

    fac = factor(rho)

    # warm start in scaled variables
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / D
    y = np.zeros(m) if y0 is None else c_scale * np.asarray(y0, dtype=float) / E
    z = np.clip(A @ x, l, u)

    def unscaled(x, y, z):
        return D * x, E * y / c_scale, z / E

    status = "max_iter"
    iterations = opts.max_iter
    r_prim = r_dual = np.inf
    for it in range(1, opts.max_iter + 1):
        rhs = opts.sigma * x - g + At @ (rho * z - y)
        x_t = cho_solve(fac, rhs)
        z_t = A @ x_t
        x_new = opts.alpha * x_t + (1 - opts.alpha) * x
        z_relax = opts.alpha * z_t + (1 - opts.alpha) * z
        v = z_relax + y / rho
        if any_soft:
            # prox of weight * dist(z, [l, u]): soft-thresholded projection
            shift = w / rho
            z_new = np.where(v < l, np.minimum(l, v + shift),
                             np.where(v > u, np.maximum(u, v - shift), v))
        else:
            z_new = np.clip(v, l, u)
        y_new = y + rho * (z_relax - z_new)

        dy = y_new - y
        x, z, y = x_new, z_new, y_new

        if it % opts.check_interval == 0 or it == opts.max_iter:
            x_us, y_us, z_us = unscaled(x, y, z)
            r_prim, r_dual, ps, ds = _residuals(H_us, g_us, A_us, x_us, y_us, z_us)
            eps_prim = opts.eps_abs + opts.eps_rel * ps
            eps_dual = opts.eps_abs + opts.eps_rel * ds
            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = "optimal"
                iterations = it
                break
            if not any_soft and _primal_infeasible(A, l, u, dy, opts.eps_infeas):
                return QpSolution(x=x_us, status="infeasible",
                                  primal_residual=r_prim, dual_residual=r_dual,
                                  iterations=it,
                                  obj=float(0.5 * x_us @ H_us @ x_us + g_us @ x_us),
                                  y=y_us, m_eq=m_eq, m_ineq=m_ineq)
            if opts.adaptive_rho:
                ratio = np.sqrt((r_prim / max(ps, 1e-12))
                                / max(r_dual / max(ds, 1e-12), 1e-12))
                if ratio > 5.0 or ratio < 0.2:
                    rho_base = float(np.clip(rho_base * ratio, 1e-6, 1e6))
                    rho = rho_vec(rho_base)
                    fac = factor(rho)

    x_us, y_us, z_us = unscaled(x, y, z)
    if status == "max_iter":
        r_prim, r_dual, _, _ = _residuals(H_us, g_us, A_us, x_us, y_us, z_us)

    if opts.polish:
        refined = _polish(H_us, g_us, A_us, l_us, u_us, x_us, y_us, eq_mask,
                          w=w_us if any_soft else None)
        if refined is not None:
            x_p, y_p = refined
            ax = A_us @ x_p
            # rows saturated at their penalty weight may violate legitimately
            sat_p = np.isfinite(w_us) & (np.abs(y_p) >= 0.999 * np.where(
                np.isfinite(w_us), w_us, INF))
            viol = np.maximum(
                np.where(np.isfinite(l_us), l_us - ax, -np.inf), 0.0
            ) + np.maximum(np.where(np.isfinite(u_us), ax - u_us, -np.inf), 0.0)
            viol[sat_p] = 0.0
            z_p = np.clip(ax, l_us, u_us)
            z_p[sat_p] = ax[sat_p]
            rp, rd, _, _ = _residuals(H_us, g_us, A_us, x_p, y_p, z_p)
            rp = max(rp, _norm_inf(viol))
            if max(rp, rd) < max(r_prim, r_dual):
                x_us, y_us = x_p, y_p
                r_prim, r_dual = rp, rd
                if rp <= opts.eps_abs and rd <= opts.eps_abs:
                    status = "optimal"

    return QpSolution(x=x_us, status=status, primal_residual=r_prim,
                      dual_residual=r_dual, iterations=iterations,
                      obj=float(0.5 * x_us @ H_us @ x_us + g_us @ x_us),
                      y=y_us, m_eq=m_eq, m_ineq=m_ineq)
