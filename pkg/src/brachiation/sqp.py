"""Sequential quadratic programming with damped BFGS and an l1 merit line search.

Constraint convention: ceq(x) = 0 and cineq(x) >= 0, plus box bounds handled
directly in the QP subproblems (never violated at iterates). Jacobians are
central finite differences unless the problem supplies analytic ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .qpsolve import QpOptions, QpProblem, qp_solve


@dataclass
class NlpProblem:
    """Smooth NLP: min cost(x) s.t. ceq(x)=0, cineq(x)>=0, lb<=x<=ub."""

    n: int
    cost: Callable[[np.ndarray], float]
    cost_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ceq: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ceq_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    cineq: Optional[Callable[[np.ndarray], np.ndarray]] = None
    cineq_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    cost_hess: Optional[np.ndarray] = None  # constant Hessian, seeds BFGS


@dataclass
class SqpOptions:
    tol_kkt: float = 1e-5
    tol_feas: float = 1e-6
    max_iter: int = 500
    fd_step: float = 1e-6
    max_restarts: int = 4
    tr_init: float = 1.0
    tr_min: float = 1e-8
    tr_max: float = 16.0
    verbose: bool = False
    qp_opts: QpOptions = field(default_factory=lambda: QpOptions(
        eps_abs=1e-8, eps_rel=1e-8, max_iter=10000, polish=True))


@dataclass
class NlpSolution:
    x: np.ndarray
    status: str  # converged | max_iter | line_search_failed | qp_infeasible
    kkt: float
    violation: float
    iterations: int
    cost: float
    merit_history: list = field(default_factory=list)
    lam_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _fd_grad(f, x, h):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _fd_jac(c, x, h):
    c0 = np.atleast_1d(c(x))
    J = np.zeros((len(c0), len(x)))
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.atleast_1d(c(x + e)) - np.atleast_1d(c(x - e))) / (2 * h)
    return J


class _Eval:
    """Cost and constraint values at one point; derivatives computed lazily.

    Line-search trials only read values, so Jacobians are evaluated on first
    access (accepted iterates) and cached.
    """

    def __init__(self, prob: NlpProblem, x: np.ndarray, h: float):
        self.x = x
        self._prob = prob
        self._h = h
        self.f = float(prob.cost(x))
        self.cE = (np.atleast_1d(np.asarray(prob.ceq(x), dtype=float))
                   if prob.ceq is not None else np.zeros(0))
        self.cI = (np.atleast_1d(np.asarray(prob.cineq(x), dtype=float))
                   if prob.cineq is not None else np.zeros(0))
        self._grad = None
        self._JE = None
        self._JI = None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            prob = self._prob
            self._grad = (prob.cost_grad(self.x) if prob.cost_grad is not None
                          else _fd_grad(prob.cost, self.x, self._h))
        return self._grad

    @property
    def JE(self):
        if self._JE is None:
            prob = self._prob
            if prob.ceq is None:
                self._JE = np.zeros((0, prob.n))
            elif prob.ceq_jac is not None:
                self._JE = prob.ceq_jac(self.x)
            else:
                self._JE = _fd_jac(prob.ceq, self.x, self._h)
        return self._JE

    @property
    def JI(self):
        if self._JI is None:
            prob = self._prob
            if prob.cineq is None:
                self._JI = np.zeros((0, prob.n))
            elif prob.cineq_jac is not None:
                self._JI = prob.cineq_jac(self.x)
            else:
                self._JI = _fd_jac(prob.cineq, self.x, self._h)
        return self._JI

    @property
    def violation(self) -> float:
        v = 0.0
        if len(self.cE):
            v = max(v, float(np.max(np.abs(self.cE))))
        if len(self.cI):
            v = max(v, float(np.max(np.maximum(-self.cI, 0.0))))
        return v

    @property
    def viol_l1(self) -> float:
        return float(np.sum(np.abs(self.cE)) + np.sum(np.maximum(-self.cI, 0.0)))

    def lagrangian_grad(self, lam_eq, lam_ineq) -> np.ndarray:
        g = self.grad.copy()
        if len(lam_eq):
            g = g + (self.JE.T @ lam_eq if not sp.issparse(self.JE) else self.JE.T.dot(lam_eq))
        if len(lam_ineq):
            g = g + (self.JI.T @ lam_ineq if not sp.issparse(self.JI) else self.JI.T.dot(lam_ineq))
        return np.asarray(g).ravel()


def _soc_step(ev: "_Eval", ev_try: "_Eval"):
    """Minimum-norm correction of the full-step constraint values.

    Uses the Jacobians at the current iterate (already factored into the QP)
    against the constraint values at the trial point; violated inequalities
    are corrected back to their boundary.
    """
    rows = []
    resid = []
    if len(ev.cE):
        rows.append(ev.JE)
        resid.append(ev_try.cE)
    if len(ev.cI):
        viol = ev_try.cI < 0.0
        if np.any(viol):
            JI = ev.JI
            rows.append(JI[np.where(viol)[0]] if sp.issparse(JI) else JI[viol])
            resid.append(ev_try.cI[viol])
    if not rows:
        return None
    A = sp.vstack([sp.csr_matrix(r) for r in rows]) if any(
        sp.issparse(r) for r in rows) else np.vstack(rows)
    r = np.concatenate(resid)
    AAt = np.asarray((A @ A.T).todense()) if sp.issparse(A) else A @ A.T
    AAt[np.diag_indices_from(AAt)] += 1e-8
    try:
        w = np.linalg.solve(AAt, -r)
    except np.linalg.LinAlgError:
        return None
    ds = A.T @ w
    return np.asarray(ds).ravel()


def sqp_solve(prob: NlpProblem, x0, opts: Optional[SqpOptions] = None) -> NlpSolution:
    """Solve an NLP by SQP; returns the best iterate found on failure.

    Subproblems are solved with l1-penalized (elastic) constraint rows at the
    merit weight mu, so they stay feasible even when the linearization is
    not; mu escalates only when the subproblem stops predicting progress on
    the infeasibility.
    """
    opts = opts or SqpOptions()
    n = prob.n
    lb = np.full(n, -np.inf) if prob.lb is None else np.asarray(prob.lb, dtype=float)
    ub = np.full(n, np.inf) if prob.ub is None else np.asarray(prob.ub, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lb, ub)

    ev = _Eval(prob, x, opts.fd_step)
    if prob.cost_hess is not None:
        B0 = np.asarray(prob.cost_hess, dtype=float) + 1e-8 * np.eye(n)
    else:
        B0 = np.eye(n)
    B = B0.copy()
    first_update = prob.cost_hess is None
    lam_eq = np.zeros(len(ev.cE))
    lam_ineq = np.zeros(len(ev.cI))
    y_box = np.zeros(n)
    mu = 1.0
    mu_max = 1e8
    tr = opts.tr_init
    bound_streak = 0
    qp_warm = None
    restarts = 0
    merit_history: list[float] = []

    best = (max(ev.violation - opts.tol_feas, 0.0), ev.f, x.copy(), ev)
    status = "max_iter"
    iterations = 0
    kkt = np.inf

    def _lin_viol(d):
        v = 0.0
        if len(ev.cE):
            v += float(np.sum(np.abs(ev.cE + ev.JE @ d)))
        if len(ev.cI):
            v += float(np.sum(np.maximum(-(ev.cI + ev.JI @ d), 0.0)))
        return v

    for it in range(opts.max_iter):
        grad_L = ev.lagrangian_grad(lam_eq, lam_ineq) + y_box
        kkt = float(np.max(np.abs(grad_L)))
        if kkt < opts.tol_kkt and ev.violation < opts.tol_feas:
            status = "converged"
            break

        qp = QpProblem(
            H=B, g=ev.grad,
            Aeq=ev.JE if len(ev.cE) else None,
            beq=-ev.cE if len(ev.cE) else None,
            Aineq=ev.JI if len(ev.cI) else None,
            lo=-ev.cI if len(ev.cI) else None,
            hi=np.full(len(ev.cI), np.inf) if len(ev.cI) else None,
            lb=np.maximum(lb - x, -tr), ub=np.minimum(ub - x, tr),
        )
        viol1 = ev.viol_l1
        x_ws = qp_warm[0] if qp_warm is not None else None
        y_ws = qp_warm[1] if qp_warm is not None else None
        qs = qp_solve(qp, opts.qp_opts, x0=x_ws, y0=y_ws)
        # an unconverged subproblem whose step does not even reduce the
        # linearized violation is an infeasibility in practice, whether or
        # not the ADMM certificate fires (trust region cutting the feasible
        # set of the linearized constraints)
        def _soft_resolve(qs0):
            # elastic fallback: re-solve with l1-penalized rows.  The soft
            # weight is local to this subproblem — escalating the merit
            # weight here poisons both the line search and later subproblem
            # conditioning.
            w = max(10.0, mu)
            best_qs, best_v = qs0, _lin_viol(np.clip(qs0.x, qp.lb, qp.ub))
            for _ in range(3):
                qs_soft = qp_solve(qp, opts.qp_opts, x0=x_ws, y0=y_ws, soft=w)
                v_soft = _lin_viol(np.clip(qs_soft.x, qp.lb, qp.ub))
                if v_soft < best_v:
                    best_qs, best_v = qs_soft, v_soft
                if v_soft <= max(0.9 * viol1, opts.tol_feas):
                    break
                w *= 10.0
            return best_qs

        def _step_model(qs_):
            # an unconverged subproblem can step outside its own box
            d = np.clip(qs_.x, qp.lb, qp.ub)
            v_pred = _lin_viol(d)
            quad = float(ev.grad @ d + 0.5 * d @ B @ d)
            # an unconverged subproblem leaves noise-level linearized
            # infeasibility in its direction; treating it as a real
            # degradation makes the mu-weighted prediction reject pure
            # cost-descent steps
            v_used = viol1 if viol1 < v_pred < viol1 + 1e-3 else v_pred
            return d, v_pred, quad, -quad + mu * (viol1 - v_used)

        near_infeasible = (
            qs.status == "max_iter"
            and _lin_viol(np.clip(qs.x, qp.lb, qp.ub)) > viol1 + max(
                0.5 * viol1, 1e-3))
        if qs.status == "infeasible" or near_infeasible:
            qs = _soft_resolve(qs)
        elif qs.status == "optimal":
            # exactness of the l1 merit needs mu above the multiplier norm;
            # unconverged subproblems give unreliable multiplier estimates
            y_inf = max(_inf_norm(qs.y_eq), _inf_norm(qs.y_ineq))
            if mu < 1.1 * y_inf:
                mu = min(1.1 * y_inf, mu_max)
        d, v_pred, quad, pred_red = _step_model(qs)
        merit0 = ev.f + mu * viol1
        if pred_red <= 0.0 and qs.status == "max_iter" and not near_infeasible:
            # the subproblem ran out of iterations and its direction does not
            # even reduce the merit model; a softened re-solve usually
            # converges where the hard one could not
            qs = _soft_resolve(qs)
            d, v_pred, quad, pred_red = _step_model(qs)
        qp_warm = (qs.x.copy(), qs.y.copy())
        lam_eq_new = qs.y_eq.copy()
        lam_ineq_new = qs.y_ineq.copy()
        y_box_new = qs.y_box.copy() if len(qs.y_box) == n else np.zeros(n)

        def _stalled() -> str:
            # adopt the multipliers and re-test optimality before giving up
            nonlocal lam_eq, lam_ineq, y_box, kkt
            lam_eq, lam_ineq, y_box = lam_eq_new, lam_ineq_new, y_box_new
            grad_L = ev.lagrangian_grad(lam_eq, lam_ineq) + y_box
            kkt = float(np.max(np.abs(grad_L)))
            if kkt < opts.tol_kkt and ev.violation < opts.tol_feas:
                return "converged"
            return "line_search_failed"

        if pred_red <= 1e-16 * (1.0 + abs(merit0)):
            if opts.verbose:
                print(f"sqp it {it}: STALL qp={qs.status}/{qs.iterations} "
                      f"|d|={np.max(np.abs(d)):.2e} mu={mu:.1e} "
                      f"pred_red={pred_red:.3e} viol1={viol1:.3e} "
                      f"v_pred={v_pred:.3e} quad={quad:.3e}")
            status = _stalled()
            if status == "converged" or restarts >= opts.max_restarts:
                break
            restarts += 1
            B = B0.copy()
            first_update = prob.cost_hess is None
            mu = min(10.0 * mu, mu_max)
            qp_warm = None
            continue

        alpha = 1.0
        accepted = False
        soc = False
        while alpha >= 1e-12:
            x_try = np.clip(x + alpha * d, lb, ub)
            ev_try = _Eval(prob, x_try, opts.fd_step)
            merit_try = ev_try.f + mu * ev_try.viol_l1
            if merit_try <= merit0 - 1e-4 * alpha * pred_red:
                accepted = True
                break
            if alpha >= 0.0625 and (len(ev.cE) or len(ev.cI)):
                # second-order correction: retract the constraint drift of the
                # trial step with the current Jacobians (Maratos remedy).  The
                # drift is quadratic in the step, so without the correction
                # the merit forces vanishing step sizes whenever the
                # subproblem direction is large
                ds = _soc_step(ev, ev_try)
                if ds is not None:
                    x_soc = np.clip(x + alpha * d + ds, lb, ub)
                    ev_soc = _Eval(prob, x_soc, opts.fd_step)
                    merit_soc = ev_soc.f + mu * ev_soc.viol_l1
                    if merit_soc <= merit0 - 1e-4 * alpha * pred_red:
                        x_try, ev_try = x_soc, ev_soc
                        accepted = True
                        soc = True
                        break
            alpha *= 0.5
        if not accepted:
            if opts.verbose:
                print(f"sqp it {it}: LS FAIL qp={qs.status}/{qs.iterations} "
                      f"|d|={np.max(np.abs(d)):.2e} mu={mu:.1e} "
                      f"pred_red={pred_red:.3e} viol1={viol1:.3e} "
                      f"v_pred={v_pred:.3e} merit0={merit0:.4f}")
            status = _stalled()
            if status == "converged" or restarts >= opts.max_restarts:
                break
            restarts += 1
            B = B0.copy()
            first_update = prob.cost_hess is None
            mu = min(10.0 * mu, mu_max)
            tr = max(0.25 * tr, opts.tr_min)
            qp_warm = None
            continue

        at_bound = float(np.max(np.abs(d))) >= 0.999 * tr
        if alpha == 1.0:
            tr = min(2.0 * tr, opts.tr_max)
            bound_streak = 0
        elif alpha >= 0.5 and at_bound:
            # repeated accepted steps pinned at the trust region mean the
            # region is too small to make progress; reopen it gradually
            bound_streak += 1
            if bound_streak >= 3:
                tr = min(2.0 * tr, opts.tr_max)
                bound_streak = 0
        elif alpha <= 0.25:
            tr = max(0.5 * tr, opts.tr_min)
            bound_streak = 0
        else:
            bound_streak = 0

        if opts.verbose:
            print(f"sqp it {it}: qp={qs.status}/{qs.iterations} "
                  f"|d|={np.max(np.abs(d)):.2e} alpha={alpha:.1e}"
                  f"{' soc' if soc else ''} mu={mu:.1e} "
                  f"viol={ev.violation:.2e} f={ev.f:.4f} kkt={kkt:.2e}")

        merit_history.append(merit0)
        s = x_try - x
        gL_old = ev.lagrangian_grad(lam_eq_new, lam_ineq_new)
        gL_new = ev_try.lagrangian_grad(lam_eq_new, lam_ineq_new)
        yv = gL_new - gL_old

        sy = float(s @ yv)
        if np.linalg.norm(s) < 1e-14:
            pass  # clipped step collapsed; keep the current Hessian estimate
        elif sy < 1e-10 * np.linalg.norm(s) * np.linalg.norm(yv):
            B = B0.copy()
            first_update = prob.cost_hess is None
        else:
            if first_update:
                B = (sy / float(yv @ yv)) ** -1 * np.eye(n) if yv @ yv > 0 else np.eye(n)
                first_update = False
            Bs = B @ s
            sBs = float(s @ Bs)
            # Powell damping keeps B positive definite
            if sy < 0.2 * sBs:
                theta = 0.8 * sBs / (sBs - sy)
                yv = theta * yv + (1 - theta) * Bs
                sy = float(s @ yv)
            B = B - np.outer(Bs, Bs) / sBs + np.outer(yv, yv) / sy

        x, ev = x_try, ev_try
        lam_eq, lam_ineq, y_box = lam_eq_new, lam_ineq_new, y_box_new
        iterations = it + 1

        score = (max(ev.violation - opts.tol_feas, 0.0), ev.f)
        if score < best[:2]:
            best = (score[0], score[1], x.copy(), ev)

    else:
        status = "max_iter"

    if status != "converged":
        # report the best iterate seen
        if (max(ev.violation - opts.tol_feas, 0.0), ev.f) > best[:2]:
            x, ev = best[2], best[3]

    return NlpSolution(
        x=x, status=status, kkt=kkt, violation=ev.violation,
        iterations=iterations, cost=ev.f, merit_history=merit_history,
        lam_eq=lam_eq, lam_ineq=lam_ineq,
    )


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v))) if len(v) else 0.0
