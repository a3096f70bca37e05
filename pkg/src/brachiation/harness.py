"""Closed-loop simulation and the experiment drivers.

The ground-truth integrator is RK4 on the full nonlinear dynamics with
zero-order-hold inputs, deliberately different from the planner's Taylor
step so the tracker has real model mismatch to absorb. Disturbances are
impulsive momentum exchanges applied to a point on a link.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import trajopt
from .collision import Obstacle, clearance_all
from .io import write_csv
from .model import (NQ, NU, RobotParams, fk_ee, forward_dynamics,
                    mass_matrix, point_jacobian, state_derivative)
from .mpc import MpcConfig, MpcTracker
from .sqp import SqpOptions
from .trajopt import (CollocConfig, DenseTrajectory, PlanningError, Trajectory,
                      densify, ik_solve, plan, swing_time, trajectory_energy)

# reference study scenario: stationary start pose with the EE near (-1, 0)
START_Q = np.array([-2.35, 0.0, -1.55, 0.0])
START_STATE = np.concatenate([START_Q, np.zeros(NQ)])
START_POINT = np.array([-1.0, 0.0])
TRACK_TARGET = np.array([0.8, 0.0])
AVOID_TARGET = np.array([0.5, 0.0])
AVOID_OBSTACLE = Obstacle(c=np.array([0.55, -0.2]), r=0.1)
IMPACT_TIME = 0.62
IMPACT_MOMENTUM = 0.53  # kg m/s exchanged along the contact normal
# Contact normal of the glancing impact (unit vector, world frame).  Chosen so
# the collision perturbs the end effector visibly but leaves the momentum
# mostly in the actuated subspace, where the controller can absorb it before
# the swing ends; a head-on momentum exchange at this late impact time is not
# recoverable by any feedback within the remaining swing.
IMPACT_NORMAL = np.array([-0.657, 0.754]) / np.hypot(0.657, 0.754)


class SimulationDiverged(RuntimeError):
    def __init__(self, msg, log=None):
        super().__init__(msg)
        self.log = log


@dataclass
class Disturbance:
    """Impulse applied to a point on a link at a given time."""

    time: float
    link: int = 4
    offset: float = 1.0  # fraction along the link (1.0 = distal joint / EE)
    impulse: np.ndarray = field(default_factory=lambda: np.zeros(2))


@dataclass
class SimConfig:
    dt_sim: float = 0.001
    integrator: str = "rk4"
    disturbances: Sequence[Disturbance] = ()

    def __post_init__(self):
        if self.dt_sim <= 0:
            raise ValueError("simulation step must be positive")
        if self.integrator not in ("rk4", "semi_implicit_euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")


@dataclass
class ClosedLoopLog:
    """Per-cycle record of the closed loop (or of a plan rollout)."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    x_ref: np.ndarray
    ee: np.ndarray
    ee_ref: np.ndarray
    min_margin: np.ndarray
    power: np.ndarray
    energy: np.ndarray

    @property
    def q(self) -> np.ndarray:
        return self.x[:, :NQ]

    @property
    def qd(self) -> np.ndarray:
        return self.x[:, NQ:]

    @property
    def tau(self) -> np.ndarray:
        return self.u

    @property
    def ee_err(self) -> np.ndarray:
        return self.ee - self.ee_ref

    def write(self, path) -> None:
        header = (["t"] + [f"q{i}" for i in range(1, 5)]
                  + [f"qd{i}" for i in range(1, 5)]
                  + [f"tau{i}" for i in range(2, 5)]
                  + ["ee_x", "ee_y", "ref_x", "ref_y", "err_x", "err_y",
                     "min_margin", "power", "energy"])
        err = self.ee_err
        rows = np.column_stack([
            self.t, self.x[:, :NQ], self.x[:, NQ:], self.u,
            self.ee, self.ee_ref, err, self.min_margin, self.power, self.energy,
        ])
        write_csv(path, header, rows)


def simulate_step(x, u, dt: float, p: RobotParams,
                  integrator: str = "rk4") -> np.ndarray:
    """Advance the true dynamics one step with zero-order-hold input."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if integrator == "semi_implicit_euler":
        qdd = forward_dynamics(x, u, p)
        qd_new = x[NQ:] + dt * qdd
        q_new = x[:NQ] + dt * qd_new
        return np.concatenate([q_new, qd_new])
    k1 = state_derivative(x, u, p)
    k2 = state_derivative(x + 0.5 * dt * k1, u, p)
    k3 = state_derivative(x + 0.5 * dt * k2, u, p)
    k4 = state_derivative(x + dt * k3, u, p)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def apply_impulse(x, d: Disturbance, p: RobotParams) -> np.ndarray:
    """Velocity jump M^-1 J_pt' j for an impulse at a point on a link."""
    x = np.asarray(x, dtype=float).copy()
    J_pt = point_jacobian(x[:NQ], p, d.link, d.offset)
    dqd = np.linalg.solve(mass_matrix(x[:NQ], p), J_pt.T @ np.asarray(d.impulse, dtype=float))
    x[NQ:] += dqd
    return x


def _min_margin(q, p, obstacles, colloc: Optional[CollocConfig]) -> float:
    kw = {}
    if colloc is not None:
        kw = dict(d_min_self=colloc.d_min_self,
                  capsule_radius=colloc.capsule_radius,
                  obstacle_margin=colloc.obstacle_margin)
    reports = clearance_all(q, p, obstacles, **kw)
    return min(r.margin for r in reports)


def _cumulative_energy(t, power) -> np.ndarray:
    inc = 0.5 * (power[1:] + power[:-1]) * np.diff(t)
    return np.concatenate([[0.0], np.cumsum(inc)])


def run_tracking(plan_ref: DenseTrajectory, mpc_cfg: MpcConfig,
                 sim_cfg: SimConfig, p: RobotParams,
                 obstacles: Sequence[Obstacle] = (),
                 colloc: Optional[CollocConfig] = None) -> ClosedLoopLog:
    """Run the MPC loop against the RK4 ground truth at the control rate."""
    dt = sim_cfg.dt_sim
    n_steps = len(plan_ref.t) - 1
    tracker = MpcTracker(plan_ref, mpc_cfg, p)
    x = plan_ref.state_at(0.0)

    t_log = plan_ref.t.copy()
    x_log = np.zeros((n_steps + 1, 2 * NQ))
    u_log = np.zeros((n_steps + 1, NU))
    xr_log = np.zeros((n_steps + 1, 2 * NQ))
    ee_log = np.zeros((n_steps + 1, 2))
    eer_log = np.zeros((n_steps + 1, 2))
    mm_log = np.zeros(n_steps + 1)

    pending = sorted(sim_cfg.disturbances, key=lambda d: d.time)
    di = 0
    u = np.zeros(NU)
    for i in range(n_steps + 1):
        t = i * dt
        if np.linalg.norm(x) > 1e3:
            raise SimulationDiverged(f"state diverged at t={t:.3f}s")
        if i < n_steps:
            u = tracker.step(x, t).u_applied
        x_log[i] = x
        u_log[i] = u
        xr_log[i] = plan_ref.state_at(t)
        ee_log[i] = fk_ee(x[:NQ], p)
        eer_log[i] = plan_ref.ee_at(t)
        mm_log[i] = _min_margin(x[:NQ], p, obstacles, colloc)
        if i == n_steps:
            break
        while di < len(pending) and t <= pending[di].time < t + dt:
            x = apply_impulse(x, pending[di], p)
            di += 1
        x = simulate_step(x, u, dt, p, sim_cfg.integrator)

    power = np.sum(x_log[:, NQ + 1 :] * u_log, axis=1)
    energy = _cumulative_energy(t_log, power)
    return ClosedLoopLog(t=t_log, x=x_log, u=u_log, x_ref=xr_log, ee=ee_log,
                         ee_ref=eer_log, min_margin=mm_log, power=power,
                         energy=energy)


def plan_rollout_log(plan_ref: DenseTrajectory, p: RobotParams,
                     obstacles: Sequence[Obstacle] = (),
                     colloc: Optional[CollocConfig] = None) -> ClosedLoopLog:
    """Open-loop log of a densified plan (reference equals actual)."""
    n = len(plan_ref.t)
    x = np.column_stack([plan_ref.q, plan_ref.qd])
    ee = plan_ref.ee
    mm = np.array([_min_margin(plan_ref.q[i], p, obstacles, colloc) for i in range(n)])
    power = np.sum(plan_ref.qd[:, 1:] * plan_ref.tau, axis=1)
    energy = _cumulative_energy(plan_ref.t, power)
    return ClosedLoopLog(t=plan_ref.t.copy(), x=x, u=plan_ref.tau.copy(),
                         x_ref=x.copy(), ee=ee.copy(), ee_ref=ee.copy(),
                         min_margin=mm, power=power, energy=energy)


# -- reference scenarios ------------------------------------------------------


def tracking_config(p: RobotParams, target=TRACK_TARGET,
                    paper_literal_deft: bool = False,
                    obstacles: Sequence[Obstacle] = ()) -> CollocConfig:
    T = swing_time(START_POINT, target, g=p.g)
    return CollocConfig(T=T, x_start=START_STATE.copy(),
                        ee_target=np.asarray(target, dtype=float),
                        obstacles=tuple(obstacles),
                        paper_literal_deft=paper_literal_deft)


def plan_and_densify(cfg: CollocConfig, p: RobotParams,
                     sqp_opts: Optional[SqpOptions] = None
                     ) -> tuple[Trajectory, DenseTrajectory]:
    traj = plan(cfg, p, sqp_opts)
    return traj, densify(traj, p)


def run_avoidance(p: RobotParams, obstacle: Obstacle = AVOID_OBSTACLE,
                  target=AVOID_TARGET,
                  sqp_opts: Optional[SqpOptions] = None):
    """Plan the avoidance scenario with the clearance constraint off and on.

    Returns ((plan_off, log_off), (plan_on, log_on)); logs are open-loop plan
    rollouts with clearances evaluated against the obstacle at every sample.
    """
    cfg_on = tracking_config(p, target=target, obstacles=(obstacle,))
    cfg_off = replace_colloc(cfg_on, obstacles=())
    traj_off = plan(cfg_off, p, sqp_opts)
    # constraint homotopy: the avoidance solve starts from the unconstrained
    # plan, which already satisfies everything except the clearance rows
    traj_on = plan(cfg_on, p, sqp_opts, warm_start=traj_off)
    dense_off = densify(traj_off, p)
    dense_on = densify(traj_on, p)
    log_off = plan_rollout_log(dense_off, p, (obstacle,), cfg_on)
    log_on = plan_rollout_log(dense_on, p, (obstacle,), cfg_on)
    return (traj_off, log_off), (traj_on, log_on)


def replace_colloc(cfg: CollocConfig, **kw) -> CollocConfig:
    """CollocConfig copy with fields replaced (post-init re-runs)."""
    base = dict(T=cfg.T, x_start=cfg.x_start.copy(), ee_target=cfg.ee_target.copy(),
                N=cfg.N, Q1=cfg.Q1, R1=cfg.R1, obstacles=cfg.obstacles,
                d_min_self=cfg.d_min_self, capsule_radius=cfg.capsule_radius,
                obstacle_margin=cfg.obstacle_margin,
                self_collision=cfg.self_collision,
                paper_literal_deft=cfg.paper_literal_deft)
    base.update(kw)
    return CollocConfig(**base)


def disturbance_from_plan(plan_ref: DenseTrajectory, p: RobotParams,
                          time: float = IMPACT_TIME,
                          momentum: float = IMPACT_MOMENTUM,
                          normal=None) -> Disturbance:
    """Impulse of the given momentum along the contact normal at the EE."""
    n = np.asarray(IMPACT_NORMAL if normal is None else normal, dtype=float)
    n = n / np.linalg.norm(n)
    return Disturbance(time=time, link=NQ, offset=1.0, impulse=momentum * n)


def run_disturbance(plan_ref: DenseTrajectory, p: RobotParams,
                    mpc_cfg: Optional[MpcConfig] = None,
                    momentum: float = IMPACT_MOMENTUM,
                    time: float = IMPACT_TIME,
                    normal=None) -> ClosedLoopLog:
    """Tracking episode with an impulsive disturbance mid-swing."""
    d = disturbance_from_plan(plan_ref, p, time=time, momentum=momentum,
                              normal=normal)
    sim = SimConfig(disturbances=(d,))
    return run_tracking(plan_ref, mpc_cfg or MpcConfig(), sim, p)


# -- parameter sweep ----------------------------------------------------------

SWEEP_START = np.array([-1.0, 0.0])
SWEEP_TARGET = np.array([1.0, 0.0])


@dataclass
class SweepResult:
    r2: np.ndarray
    T: np.ndarray
    energy: np.ndarray      # (len(r2), len(T)); nan where not converged
    converged: np.ndarray   # bool grid
    iterations: np.ndarray  # int grid

    def write(self, path) -> None:
        rows = []
        for i, r2 in enumerate(self.r2):
            for j, T in enumerate(self.T):
                e = self.energy[i, j]
                rows.append([r2, T, 0.0 if np.isnan(e) else e,
                             bool(self.converged[i, j]),
                             int(self.iterations[i, j])])
        write_csv(path, ["r2", "T", "energy", "converged", "iters"], rows)


def sweep_cell(r2: float, T: float, p_base: RobotParams,
               sqp_opts: Optional[SqpOptions] = None) -> tuple[float, bool, int]:
    """Plan one sweep cell; returns (energy, converged, iterations)."""
    p = p_base.with_arm_ratio(r2)
    try:
        q0 = ik_solve(p, START_Q, SWEEP_START)
    except trajopt.IkError:
        return np.nan, False, 0
    cfg = CollocConfig(T=T, x_start=np.concatenate([q0, np.zeros(NQ)]),
                       ee_target=SWEEP_TARGET.copy())
    try:
        traj = plan(cfg, p, sqp_opts)
    except PlanningError as exc:
        best = exc.best
        iters = best.info.get("iterations", 0) if best is not None else 0
        return np.nan, False, iters
    return trajectory_energy(traj), True, traj.info["iterations"]


def run_sweep(r2_grid, T_grid, p_base: Optional[RobotParams] = None,
              parallel: bool = True) -> SweepResult:
    """Plan every (r2, T) cell of the energy sweep; cells are independent."""
    r2_grid = np.asarray(r2_grid, dtype=float)
    T_grid = np.asarray(T_grid, dtype=float)
    cells = [(r2, T) for r2 in r2_grid for T in T_grid]
    if p_base is None:
        p_base = RobotParams()
    if parallel and len(cells) > 1:
        workers = min(len(cells), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_cell_runner, [(r2, T, p_base) for r2, T in cells]))
    else:
        results = [sweep_cell(r2, T, p_base) for r2, T in cells]
    energy = np.full((len(r2_grid), len(T_grid)), np.nan)
    converged = np.zeros((len(r2_grid), len(T_grid)), dtype=bool)
    iterations = np.zeros((len(r2_grid), len(T_grid)), dtype=int)
    idx = 0
    for i in range(len(r2_grid)):
        for j in range(len(T_grid)):
            e, c, it = results[idx]
            energy[i, j], converged[i, j], iterations[i, j] = e, c, it
            idx += 1
    return SweepResult(r2=r2_grid, T=T_grid, energy=energy,
                       converged=converged, iterations=iterations)


def _cell_runner(args):
    r2, T, p_base = args
    return sweep_cell(r2, T, p_base)
