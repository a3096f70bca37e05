"""Linear MPC tracker with per-cycle relinearization and a condensed box QP.

Each control cycle: relinearize the dynamics at the measured state, roll the
affine model over the horizon, stack joint-space and Cartesian references,
condense to a QP in the input sequence only and apply the first input block.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import NQ, NU, NX, LinearizedPlant, RobotParams, linearize
from .qpsolve import QpOptions, QpProblem, qp_solve
from .trajopt import DenseTrajectory


@dataclass
class MpcConfig:
    N_h: int = 60
    dt_pred: float = 0.001
    Q2: np.ndarray = field(default_factory=lambda: np.diag([400.0] * NQ + [5.0] * NQ))
    W: np.ndarray = field(default_factory=lambda: np.diag([200.0, 200.0]))
    R2: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(NU))
    qp_opts: QpOptions = field(default_factory=lambda: QpOptions(
        eps_abs=1e-7, eps_rel=1e-7, max_iter=1000, polish=True))

    def __post_init__(self):
        if self.N_h < 2:
            raise ValueError("prediction horizon must be at least 2 steps")


@dataclass
class ReferenceWindow:
    """Stacked desired states and EE points over the horizon."""

    Xd: np.ndarray  # (N_h * 8,)
    Yd: np.ndarray  # (N_h * 2,)


@dataclass
class Prediction:
    """Affine horizon maps: X = Sx x0 + Su U + Sf, Y = Cbar X + fbar."""

    Sx: np.ndarray
    Su: np.ndarray
    Sf: np.ndarray
    Cbar: np.ndarray
    fbar: np.ndarray


@dataclass
class MpcStepResult:
    u_applied: np.ndarray
    predicted_states: np.ndarray
    predicted_outputs: np.ndarray
    qp_status: str
    qp_iterations: int
    solve_time: float
    fallback: bool = False


def build_prediction(lin: LinearizedPlant, N_h: int) -> Prediction:
    """Stack the discrete affine model over the horizon."""
    Sx = np.zeros((N_h * NX, NX))
    Su = np.zeros((N_h * NX, N_h * NU))
    Sf = np.zeros(N_h * NX)
    Apow = np.eye(NX)
    f_acc = np.zeros(NX)
    for k in range(N_h):
        f_acc = lin.Abar @ f_acc + lin.Fbar
        Apow = lin.Abar @ Apow
        Sx[k * NX : (k + 1) * NX] = Apow
        Sf[k * NX : (k + 1) * NX] = f_acc
        blk = lin.Bbar
        for j in range(k, -1, -1):
            Su[k * NX : (k + 1) * NX, j * NU : (j + 1) * NU] = blk
            if j > 0:
                blk = lin.Abar @ blk
    Cbar = np.kron(np.eye(N_h), lin.Cout)
    fbar = np.tile(lin.fout, N_h)
    return Prediction(Sx=Sx, Su=Su, Sf=Sf, Cbar=Cbar, fbar=fbar)


def slice_references(plan: DenseTrajectory, t_now: float, cfg: MpcConfig) -> ReferenceWindow:
    """Desired states/EE points at dt_pred spacing, holding the terminal point."""
    Xd = np.zeros(cfg.N_h * NX)
    Yd = np.zeros(cfg.N_h * 2)
    for k in range(cfg.N_h):
        t_k = t_now + (k + 1) * cfg.dt_pred
        Xd[k * NX : (k + 1) * NX] = plan.state_at(t_k)
        Yd[k * 2 : (k + 1) * 2] = plan.ee_at(t_k)
    return ReferenceWindow(Xd=Xd, Yd=Yd)


def condense(pred: Prediction, refs: ReferenceWindow, cfg: MpcConfig,
             x0: np.ndarray, tau_min: np.ndarray, tau_max: np.ndarray) -> QpProblem:
    """Eliminate the predicted states; QP over the stacked input sequence."""
    N_h = cfg.N_h
    Q2bar = np.kron(np.eye(N_h), cfg.Q2)
    Wbar = np.kron(np.eye(N_h), cfg.W)
    R2bar = np.kron(np.eye(N_h), cfg.R2)
    X_free = pred.Sx @ x0 + pred.Sf  # horizon rollout with U = 0
    Y_free = pred.Cbar @ X_free + pred.fbar
    CS = pred.Cbar @ pred.Su
    H = pred.Su.T @ Q2bar @ pred.Su + CS.T @ Wbar @ CS + R2bar
    g = pred.Su.T @ (Q2bar @ (X_free - refs.Xd)) + CS.T @ (Wbar @ (Y_free - refs.Yd))
    H = 0.5 * (H + H.T)
    return QpProblem(H=H, g=g, lb=np.tile(tau_min, N_h), ub=np.tile(tau_max, N_h))


class MpcTracker:
    """Receding-horizon controller owning its warm-start state."""

    def __init__(self, plan: DenseTrajectory, cfg: MpcConfig, params: RobotParams):
        self.plan = plan
        self.cfg = cfg
        self.p = params
        self.u_prev = np.zeros(NU)
        self._warm_x: Optional[np.ndarray] = None
        self._warm_y: Optional[np.ndarray] = None

    def step(self, x_meas: np.ndarray, t_now: float) -> MpcStepResult:
        """One control cycle; applies only the first input block."""
        t0 = time.perf_counter()
        cfg = self.cfg
        lin = linearize(x_meas, self.u_prev, self.p, cfg.dt_pred)
        pred = build_prediction(lin, cfg.N_h)
        refs = slice_references(self.plan, t_now, cfg)
        qp = condense(pred, refs, cfg, np.asarray(x_meas, dtype=float),
                      self.p.tau_min, self.p.tau_max)
        sol = qp_solve(qp, cfg.qp_opts, x0=self._warm_x, y0=self._warm_y)
        fallback = sol.status not in ("optimal", "max_iter")
        if fallback:
            u = np.clip(self.plan.tau_at(t_now), self.p.tau_min, self.p.tau_max)
            U = np.tile(u, cfg.N_h)
        else:
            U = np.clip(sol.x, np.tile(self.p.tau_min, cfg.N_h),
                        np.tile(self.p.tau_max, cfg.N_h))
            u = U[:NU].copy()
            # shift one block for the next cycle's warm start
            self._warm_x = np.concatenate([sol.x[NU:], sol.x[-NU:]])
            self._warm_y = sol.y.copy()
        X = pred.Sx @ np.asarray(x_meas, dtype=float) + pred.Su @ U + pred.Sf
        Y = pred.Cbar @ X + pred.fbar
        self.u_prev = u
        return MpcStepResult(
            u_applied=u,
            predicted_states=X.reshape(cfg.N_h, NX),
            predicted_outputs=Y.reshape(cfg.N_h, 2),
            qp_status=sol.status,
            qp_iterations=sol.iterations,
            solve_time=time.perf_counter() - t0,
            fallback=fallback,
        )
