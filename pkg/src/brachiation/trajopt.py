"""Direct-collocation swing planning: transcription, seeding, solving, densification.

The decision vector stacks [q_k, qd_k, tau_k] for every mesh point; the
terminal torque is eliminated (fixed to zero). Dynamics consistency between
adjacent points uses a Taylor step of the forward dynamics; the boundary
conditions pin the initial state and require the EE to reach the target with
zero velocity. Obstacle and self-collision clearances are inequality rows at
every mesh point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicHermiteSpline

from . import collision as col
from .collision import Obstacle
from .model import (NQ, NU, RobotParams, ee_jacobian, fk_ee, forward_dynamics,
                    point_jacobian)
from .qpsolve import QpOptions
from .sqp import NlpProblem, NlpSolution, SqpOptions, sqp_solve

_PT = NQ + NQ + NU  # decision variables per interior mesh point


class PlanningError(RuntimeError):
    """Planner failure; carries the best iterate found."""

    def __init__(self, msg, best=None, solution=None):
        super().__init__(msg)
        self.best = best
        self.solution = solution


class IkError(RuntimeError):
    """Damped least-squares IK did not reach the target."""

    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


@dataclass
class CollocConfig:
    """Settings of one swing-planning instance."""

    T: float
    x_start: np.ndarray
    ee_target: np.ndarray
    N: Optional[int] = None  # defaults to a 10 ms mesh
    Q1: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(NQ))
    R1: np.ndarray = field(default_factory=lambda: np.eye(NU))
    obstacles: Sequence[Obstacle] = ()
    d_min_self: float = col.DEFAULT_SELF_CLEARANCE
    capsule_radius: float = col.DEFAULT_CAPSULE_RADIUS
    obstacle_margin: float = col.DEFAULT_OBSTACLE_MARGIN
    self_collision: bool = True
    paper_literal_deft: bool = False

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("swing time must be positive")
        self.x_start = np.asarray(self.x_start, dtype=float)
        self.ee_target = np.asarray(self.ee_target, dtype=float)
        if self.N is None:
            self.N = max(10, round(self.T / 0.01))
        if self.N < 10:
            raise ValueError("need at least 10 mesh segments")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def n_dec(self) -> int:
        return _PT * (self.N + 1) - NU


@dataclass
class Trajectory:
    """Mesh-point trajectory: times, joints, velocities, actuated torques."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    tau: np.ndarray
    info: dict = field(default_factory=dict)


@dataclass
class DenseTrajectory:
    """Fine-grid trajectory plus EE references, backed by Hermite splines."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    tau: np.ndarray
    ee: np.ndarray
    _q_spline: CubicHermiteSpline = None
    _qd_spline: object = None
    _mesh: Trajectory = None
    _params: RobotParams = None

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def state_at(self, t: float) -> np.ndarray:
        tc = min(max(float(t), self.t[0]), self._mesh.t[-1])
        return np.concatenate([self._q_spline(tc), self._qd_spline(tc)])

    def ee_at(self, t: float) -> np.ndarray:
        return fk_ee(self.state_at(t)[:NQ], self._params)

    def tau_at(self, t: float) -> np.ndarray:
        tc = min(max(float(t), self._mesh.t[0]), self._mesh.t[-1])
        out = np.empty(NU)
        for j in range(NU):
            out[j] = np.interp(tc, self._mesh.t, self._mesh.tau[:, j])
        return out


# -- decision vector layout -------------------------------------------------

def _idx_q(k: int) -> slice:
    return slice(_PT * k, _PT * k + NQ)


def _idx_qd(k: int) -> slice:
    return slice(_PT * k + NQ, _PT * k + 2 * NQ)


def _idx_tau(k: int) -> slice:
    return slice(_PT * k + 2 * NQ, _PT * k + _PT)


def pack(traj: Trajectory) -> np.ndarray:
    N = len(traj.t) - 1
    x = np.zeros(_PT * (N + 1) - NU)
    for k in range(N + 1):
        x[_idx_q(k)] = traj.q[k]
        x[_idx_qd(k)] = traj.qd[k]
        if k < N:
            x[_idx_tau(k)] = traj.tau[k]
    return x


def unpack(x: np.ndarray, cfg: CollocConfig) -> Trajectory:
    N = cfg.N
    q = np.zeros((N + 1, NQ))
    qd = np.zeros((N + 1, NQ))
    tau = np.zeros((N + 1, NU))
    for k in range(N + 1):
        q[k] = x[_idx_q(k)]
        qd[k] = x[_idx_qd(k)]
        if k < N:
            tau[k] = x[_idx_tau(k)]
    t = np.arange(N + 1) * cfg.dt
    return Trajectory(t=t, q=q, qd=qd, tau=tau)


# -- transcription ----------------------------------------------------------

def _qdd_jacobian(q, qd, tau, p: RobotParams) -> np.ndarray:
    """4x11 derivative of the forward dynamics wrt (q, qd, tau) by complex step."""
    h = 1e-20
    x = np.concatenate([q, qd]).astype(complex)
    u = np.asarray(tau, dtype=complex)
    J = np.zeros((NQ, _PT))
    for i in range(2 * NQ):
        xc = x.copy()
        xc[i] += 1j * h
        J[:, i] = forward_dynamics(xc, u, p).imag / h
    for i in range(NU):
        uc = u.copy()
        uc[i] += 1j * h
        J[:, 2 * NQ + i] = forward_dynamics(x, uc, p).imag / h
    return J


def _ee_vel_q_jacobian(q, qd, p: RobotParams) -> np.ndarray:
    """2x4 derivative of J(q) qd with respect to q, by complex step."""
    h = 1e-20
    J = np.zeros((2, NQ))
    for i in range(NQ):
        qc = np.asarray(q, dtype=complex).copy()
        qc[i] += 1j * h
        J[:, i] = (ee_jacobian(qc, p) @ qd).imag / h
    return J


def _unit_normal(v) -> np.ndarray:
    n = np.array([-v[1], v[0]])
    nn = np.linalg.norm(n)
    return n / nn if nn > 1e-12 else np.array([0.0, 1.0])


def _clearance_pairs(cfg: CollocConfig):
    """(kind, payload) descriptors of the per-mesh-point clearance rows."""
    pairs = []
    for i in range(1, NQ + 1):
        for obs in cfg.obstacles:
            thr = obs.r + cfg.capsule_radius + cfg.obstacle_margin
            pairs.append(("obstacle", i, obs, thr))
    if cfg.self_collision:
        for i, j in col.SELF_PAIRS:
            pairs.append(("self", i, j, cfg.d_min_self))
    return pairs


def transcribe(cfg: CollocConfig, p: RobotParams) -> NlpProblem:
    """Build the collocation NLP with analytic (complex-step) Jacobians."""
    target = cfg.ee_target
    if np.linalg.norm(target) > p.total_length():
        raise ValueError("EE target lies outside the reachable workspace")
    N, dt = cfg.N, cfg.dt
    n = cfg.n_dec
    q_star, qd_star = cfg.x_start[:NQ], cfg.x_start[NQ:]
    pairs = _clearance_pairs(cfg)
    literal = cfg.paper_literal_deft

    def cost(x):
        c = 0.0
        for k in range(N + 1):
            qd = x[_idx_qd(k)]
            c += qd @ cfg.Q1 @ qd
            if k < N:
                tau = x[_idx_tau(k)]
                c += tau @ cfg.R1 @ tau
        return c

    def cost_grad(x):
        g = np.zeros(n)
        for k in range(N + 1):
            g[_idx_qd(k)] = 2 * cfg.Q1 @ x[_idx_qd(k)]
            if k < N:
                g[_idx_tau(k)] = 2 * cfg.R1 @ x[_idx_tau(k)]
        return g

    def _qdd_all(x):
        return [forward_dynamics(np.concatenate([x[_idx_q(k)], x[_idx_qd(k)]]),
                                 x[_idx_tau(k)], p) for k in range(N)]

    def ceq(x):
        # defect rows are scaled by 1/dt so their multipliers stay O(1)
        out = np.zeros(8 * N + 12)
        qdd = _qdd_all(x)
        for k in range(N):
            qk, qdk = x[_idx_q(k)], x[_idx_qd(k)]
            q1, qd1 = x[_idx_q(k + 1)], x[_idx_qd(k + 1)]
            drift = 0.0 if literal else dt * qdk
            out[8 * k : 8 * k + 4] = (q1 - qk - drift - 0.5 * dt**2 * qdd[k]) / dt
            out[8 * k + 4 : 8 * k + 8] = (qd1 - qdk - dt * qdd[k]) / dt
        base = 8 * N
        out[base : base + 4] = x[_idx_q(0)] - q_star
        out[base + 4 : base + 8] = x[_idx_qd(0)] - qd_star
        qN, qdN = x[_idx_q(N)], x[_idx_qd(N)]
        out[base + 8 : base + 10] = fk_ee(qN, p) - target
        out[base + 10 : base + 12] = ee_jacobian(qN, p) @ qdN
        return out

    def ceq_jac(x):
        J = sp.lil_matrix((8 * N + 12, n))
        I4 = np.eye(NQ)
        for k in range(N):
            qk, qdk, tk = x[_idx_q(k)], x[_idx_qd(k)], x[_idx_tau(k)]
            Dq = _qdd_jacobian(qk, qdk, tk, p)  # 4 x 11
            r_q = slice(8 * k, 8 * k + 4)
            r_qd = slice(8 * k + 4, 8 * k + 8)
            blk = slice(_PT * k, _PT * k + _PT)
            Jq = np.zeros((NQ, _PT))
            Jq[:, :NQ] = -I4
            if not literal:
                Jq[:, NQ : 2 * NQ] = -dt * I4
            Jq -= 0.5 * dt**2 * Dq
            J[r_q, blk] = Jq / dt
            J[r_q, _idx_q(k + 1)] = I4 / dt
            Jqd = np.zeros((NQ, _PT))
            Jqd[:, NQ : 2 * NQ] = -I4
            Jqd -= dt * Dq
            J[r_qd, blk] = Jqd / dt
            J[r_qd, _idx_qd(k + 1)] = I4 / dt
        base = 8 * N
        J[base : base + 4, _idx_q(0)] = I4
        J[base + 4 : base + 8, _idx_qd(0)] = I4
        qN, qdN = x[_idx_q(N)], x[_idx_qd(N)]
        Jee = ee_jacobian(qN, p)
        J[base + 8 : base + 10, _idx_q(N)] = Jee
        J[base + 10 : base + 12, _idx_q(N)] = _ee_vel_q_jacobian(qN, qdN, p)
        J[base + 10 : base + 12, _idx_qd(N)] = Jee
        return J.tocsr()

    if pairs:
        def cineq(x):
            out = np.zeros(len(pairs) * (N + 1))
            for k in range(N + 1):
                q = x[_idx_q(k)]
                caps = {i: col.link_capsule(q, i, p) for i in range(1, NQ + 1)}
                for r, pr in enumerate(pairs):
                    if pr[0] == "obstacle":
                        _, i, obs, thr = pr
                        d = col.point_segment_distance(obs.c, caps[i])
                    else:
                        # signed distance keeps the row informative when the
                        # iterate has the two links crossing
                        _, i, j, thr = pr
                        d = col.segment_segment_signed(caps[i], caps[j])[0]
                    out[len(pairs) * k + r] = d - thr
            return out

        def cineq_jac(x):
            J = sp.lil_matrix((len(pairs) * (N + 1), n))
            for k in range(N + 1):
                q = x[_idx_q(k)]
                caps = {i: col.link_capsule(q, i, p) for i in range(1, NQ + 1)}
                for r, pr in enumerate(pairs):
                    if pr[0] == "obstacle":
                        _, i, obs, thr = pr
                        d, t_star = col.point_segment_closest(obs.c, caps[i])
                        if d < 1e-9:
                            # center exactly on the axis: any transverse push
                            # grows the distance, use the segment normal
                            nrm = _unit_normal(caps[i].v)
                        else:
                            nrm = (caps[i].at(t_star) - obs.c) / d
                        grad = nrm @ point_jacobian(q, p, i, t_star)
                    else:
                        _, i, j, thr = pr
                        d, s_star, t_star = col.segment_segment_signed(caps[i], caps[j])
                        if abs(d) < 1e-9:
                            # touching segments: distance grows either way off
                            # the kink, take the normal of the witness segment
                            axis = caps[j].v if 0.0 < t_star < 1.0 else caps[i].v
                            nrm = _unit_normal(axis)
                        else:
                            nrm = (caps[i].at(s_star) - caps[j].at(t_star)) / d
                        grad = nrm @ (point_jacobian(q, p, i, s_star)
                                      - point_jacobian(q, p, j, t_star))
                    J[len(pairs) * k + r, _idx_q(k)] = grad
            return J.tocsr()
    else:
        cineq = cineq_jac = None

    lb = np.zeros(n)
    ub = np.zeros(n)
    for k in range(N + 1):
        lb[_idx_q(k)], ub[_idx_q(k)] = p.q_min, p.q_max
        lb[_idx_qd(k)], ub[_idx_qd(k)] = p.qd_min, p.qd_max
        if k < N:
            lb[_idx_tau(k)], ub[_idx_tau(k)] = p.tau_min, p.tau_max

    hess = np.zeros((n, n))
    for k in range(N + 1):
        hess[_idx_qd(k), _idx_qd(k)] = 2.0 * cfg.Q1
        if k < N:
            hess[_idx_tau(k), _idx_tau(k)] = 2.0 * cfg.R1

    return NlpProblem(n=n, cost=cost, cost_grad=cost_grad,
                      ceq=ceq, ceq_jac=ceq_jac,
                      cineq=cineq, cineq_jac=cineq_jac, lb=lb, ub=ub,
                      cost_hess=hess)


# -- seeding ----------------------------------------------------------------

def ik_solve(p: RobotParams, q0, target, damping: float = 1e-2,
             max_iter: int = 200, tol: float = 1e-3) -> np.ndarray:
    """Damped least-squares IK for the EE position; raises IkError on failure."""
    q = np.asarray(q0, dtype=float).copy()
    target = np.asarray(target, dtype=float)
    residual = np.inf
    for _ in range(max_iter):
        err = target - fk_ee(q, p)
        residual = float(np.linalg.norm(err))
        if residual < 1e-10:
            break
        J = ee_jacobian(q, p)
        q += J.T @ np.linalg.solve(J @ J.T + damping * np.eye(2), err)
    residual = float(np.linalg.norm(target - fk_ee(q, p)))
    if residual > tol:
        raise IkError(f"IK residual {residual:.3e} above {tol:.1e}", residual)
    return q


def _ik_branches(p: RobotParams, q_start, target) -> list[np.ndarray]:
    """Candidate IK goal poses: one per seed configuration that converges.

    Damped least squares lands on whatever branch the seed is closest to, so
    besides the start pose we try smooth arch shapes (links fanned through the
    vertical on either side) that tend to avoid folded, self-crossing goals.
    """
    arch = np.array([1.2, -0.5, -1.4, -0.5])
    goals = []
    for guess in (q_start, -arch, arch, np.array([-0.9, 0.6, 0.6, 0.6])):
        try:
            goals.append(ik_solve(p, guess, target))
        except IkError:
            continue
    if not goals:
        raise IkError("no IK branch reached the target", np.inf)
    return goals


def _path_margin(q_start, q_goal, cfg: CollocConfig, p: RobotParams) -> float:
    """Worst clearance margin along the straight joint-space path."""
    worst = np.inf
    for s in np.linspace(0.0, 1.0, 41):
        q = (1 - s) * q_start + s * q_goal
        reports = col.clearance_all(q, p, cfg.obstacles, cfg.d_min_self,
                                    cfg.capsule_radius, cfg.obstacle_margin)
        if not cfg.self_collision:
            reports = [r for r in reports if "obstacle" in r.pair]
        if reports:
            worst = min(worst, min(r.margin for r in reports))
    return worst


def seed_trajectory(cfg: CollocConfig, p: RobotParams) -> np.ndarray:
    """Initial guess: joint-space interpolation from the start pose to an IK pose.

    Several IK branches are scored by the worst clearance margin along the
    interpolated path; the best-clearing branch (closest to the start on ties)
    becomes the goal pose.
    """
    N, dt = cfg.N, cfg.dt
    q_start = cfg.x_start[:NQ]
    q_goal = min(_ik_branches(p, q_start, cfg.ee_target),
                 key=lambda qg: (-round(_path_margin(q_start, qg, cfg, p), 6),
                                 float(np.linalg.norm(qg - q_start))))
    s = np.linspace(0.0, 1.0, N + 1)[:, None]
    q = (1 - s) * q_start[None, :] + s * q_goal[None, :]
    qd = np.gradient(q, dt, axis=0)
    q = np.clip(q, p.q_min, p.q_max)
    qd = np.clip(qd, p.qd_min, p.qd_max)
    traj = Trajectory(t=np.arange(N + 1) * dt, q=q, qd=qd,
                      tau=np.zeros((N + 1, NU)))
    return pack(traj)


# -- solving ----------------------------------------------------------------

def verify(traj: Trajectory, cfg: CollocConfig, p: RobotParams) -> dict:
    """Re-check every constraint family; returns max violations per family."""
    N, dt = cfg.N, cfg.dt
    deft = 0.0
    for k in range(N):
        qdd = forward_dynamics(np.concatenate([traj.q[k], traj.qd[k]]),
                               traj.tau[k], p)
        drift = 0.0 if cfg.paper_literal_deft else dt * traj.qd[k]
        r_q = traj.q[k + 1] - traj.q[k] - drift - 0.5 * dt**2 * qdd
        r_qd = traj.qd[k + 1] - traj.qd[k] - dt * qdd
        deft = max(deft, float(np.max(np.abs(r_q))), float(np.max(np.abs(r_qd))))
    box = max(
        float(np.max(np.maximum(p.q_min - traj.q, 0))),
        float(np.max(np.maximum(traj.q - p.q_max, 0))),
        float(np.max(np.maximum(p.qd_min - traj.qd, 0))),
        float(np.max(np.maximum(traj.qd - p.qd_max, 0))),
        float(np.max(np.maximum(p.tau_min - traj.tau, 0))),
        float(np.max(np.maximum(traj.tau - p.tau_max, 0))),
    )
    clearance = np.inf
    pairs = _clearance_pairs(cfg)
    if pairs:
        for k in range(N + 1):
            reports = col.clearance_all(
                traj.q[k], p, cfg.obstacles, cfg.d_min_self,
                cfg.capsule_radius, cfg.obstacle_margin)
            if not cfg.self_collision:
                reports = [r for r in reports if "obstacle" in r.pair]
            clearance = min(clearance, min(r.margin for r in reports))
    ee_err = float(np.max(np.abs(fk_ee(traj.q[-1], p) - cfg.ee_target)))
    ee_speed = float(np.linalg.norm(ee_jacobian(traj.q[-1], p) @ traj.qd[-1]))
    init_err = float(np.max(np.abs(
        np.concatenate([traj.q[0], traj.qd[0]]) - cfg.x_start)))
    return {
        "deft": deft,
        "box": box,
        "min_clearance_margin": clearance,
        "terminal_ee_error": ee_err,
        "terminal_ee_speed": ee_speed,
        "initial_state_error": init_err,
    }


_COARSE_N = 20


def _resample(traj: Trajectory, N: int, dt: float) -> np.ndarray:
    """Interpolate a mesh trajectory onto an N-segment mesh of spacing dt."""
    spl = CubicHermiteSpline(traj.t, traj.q, traj.qd, axis=0)
    t = np.arange(N + 1) * dt
    tc = np.minimum(t, traj.t[-1])
    tau = np.stack([np.interp(t, traj.t, traj.tau[:, j]) for j in range(NU)],
                   axis=1)
    return pack(Trajectory(t=t, q=spl(tc), qd=spl.derivative()(tc), tau=tau))


def plan(cfg: CollocConfig, p: RobotParams,
         sqp_opts: Optional[SqpOptions] = None,
         warm_start: Optional[Trajectory] = None) -> Trajectory:
    """Plan one swing; raises PlanningError (with best iterate) on failure.

    Fine meshes are solved by continuation: a coarse-mesh solve (cheap, with
    tight subproblem tolerances) seeds the full mesh, which cuts the fine-mesh
    iteration count by an order of magnitude.  A warm-start trajectory (for
    instance a plan for a relaxed variant of the same problem) replaces the
    whole coarse stage: resampling a fine solution onto the coarse mesh would
    reintroduce large defects the coarse mesh cannot represent.
    """
    prob = transcribe(cfg, p)
    if warm_start is not None:
        x0 = _resample(warm_start, cfg.N, cfg.dt)
        opts = sqp_opts or SqpOptions()
    elif cfg.N > 2 * _COARSE_N:
        coarse = CollocConfig(
            T=cfg.T, x_start=cfg.x_start, ee_target=cfg.ee_target,
            N=_COARSE_N, Q1=cfg.Q1, R1=cfg.R1, obstacles=cfg.obstacles,
            d_min_self=cfg.d_min_self, capsule_radius=cfg.capsule_radius,
            obstacle_margin=cfg.obstacle_margin,
            self_collision=cfg.self_collision,
            paper_literal_deft=cfg.paper_literal_deft)
        # even a non-converged coarse stage usually leaves a usable seed
        sol_c = sqp_solve(transcribe(coarse, p), seed_trajectory(coarse, p),
                          SqpOptions())
        x0 = _resample(unpack(sol_c.x, coarse), cfg.N, cfg.dt)
        opts = sqp_opts or SqpOptions(qp_opts=QpOptions(
            eps_abs=1e-7, eps_rel=1e-7, max_iter=5000, polish=True))
    else:
        x0 = seed_trajectory(cfg, p)
        opts = sqp_opts or SqpOptions()
    sol = sqp_solve(prob, x0, opts)
    traj = unpack(sol.x, cfg)
    traj.info = {
        "status": sol.status,
        "iterations": sol.iterations,
        "cost": sol.cost,
        "kkt": sol.kkt,
        "violation": sol.violation,
        "energy": trajectory_energy(traj),
    }
    traj.info.update(verify(traj, cfg, p))
    if sol.status != "converged":
        raise PlanningError(f"planner did not converge: {sol.status}",
                            best=traj, solution=sol)
    return traj


# -- post-processing --------------------------------------------------------

def densify(traj: Trajectory, p: RobotParams, dt_fine: float = 1e-3) -> DenseTrajectory:
    """Cubic Hermite interpolation of the mesh to a fine uniform grid."""
    q_spl = CubicHermiteSpline(traj.t, traj.q, traj.qd, axis=0)
    qd_spl = q_spl.derivative()
    T = traj.t[-1]
    M = int(np.ceil(T / dt_fine - 1e-9))
    t = np.arange(M + 1) * dt_fine
    t_eval = np.minimum(t, T)
    q = q_spl(t_eval)
    qd = qd_spl(t_eval)
    tau = np.stack([np.interp(t_eval, traj.t, traj.tau[:, j]) for j in range(NU)], axis=1)
    ee = np.stack([fk_ee(qk, p) for qk in q])
    return DenseTrajectory(t=t, q=q, qd=qd, tau=tau, ee=ee,
                           _q_spline=q_spl, _qd_spline=qd_spl,
                           _mesh=traj, _params=p)


def trajectory_energy(traj) -> float:
    """Actuation energy: trapezoidal integral of sum_i qd_i tau_i over time."""
    t = np.asarray(traj.t, dtype=float)
    qd = np.asarray(traj.qd, dtype=float)
    tau = np.asarray(traj.tau, dtype=float)
    power = np.sum(qd[:, 1:] * tau, axis=1)
    trapz = getattr(np, "trapezoid", np.trapz)
    return float(trapz(power, t))


def swing_time(start, target, grip=(0.0, 0.0), g: float = 9.81) -> float:
    """Heuristic swing duration: twice the free-fall time to the arc bottom."""
    start = np.asarray(start, dtype=float)
    grip = np.asarray(grip, dtype=float)
    radius = float(np.linalg.norm(start - grip))
    if radius < 1e-12:
        raise ValueError("start point coincides with the grip point")
    h = start[1] - grip[1] + radius  # drop to the lowest point of the swing arc
    if h <= 1e-12:
        raise ValueError("start point already at the bottom of the swing arc")
    return 2.0 * float(np.sqrt(2.0 * h / g))
