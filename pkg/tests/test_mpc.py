import numpy as np
import pytest
from dataclasses import replace

from brachiation import MpcConfig, MpcTracker, QpProblem, qp_solve
from brachiation.model import NQ, NU, NX, LinearizedPlant, linearize
from brachiation.mpc import ReferenceWindow, build_prediction, condense, slice_references


def random_lin(rng, dt=0.01):
    A = 0.1 * rng.standard_normal((NX, NX))
    B = rng.standard_normal((NX, NU))
    F = rng.standard_normal(NX)
    Cout = np.zeros((2, NX))
    Cout[:, :NQ] = rng.standard_normal((2, NQ))
    fout = rng.standard_normal(2)
    return LinearizedPlant(A=A, B=B, F=F, Abar=np.eye(NX) + dt * A,
                           Bbar=dt * B, Fbar=dt * F, Cout=Cout, fout=fout, dt=dt)


def rollout(lin, x0, U, N_h):
    xs = []
    x = x0.copy()
    for k in range(N_h):
        x = lin.Abar @ x + lin.Bbar @ U[k * NU:(k + 1) * NU] + lin.Fbar
        xs.append(x.copy())
    return np.concatenate(xs)


def test_prediction_single_step(rng):
    lin = random_lin(rng)
    pred = build_prediction(lin, 1)
    x0 = rng.standard_normal(NX)
    u0 = rng.standard_normal(NU)
    X = pred.Sx @ x0 + pred.Su @ u0 + pred.Sf
    assert np.allclose(X, lin.Abar @ x0 + lin.Bbar @ u0 + lin.Fbar, atol=1e-12)


def test_prediction_frozen_dynamics(rng):
    lin = random_lin(rng)
    frozen = LinearizedPlant(A=lin.A, B=lin.B, F=lin.F, Abar=np.eye(NX),
                             Bbar=np.zeros((NX, NU)), Fbar=np.zeros(NX),
                             Cout=lin.Cout, fout=lin.fout, dt=lin.dt)
    pred = build_prediction(frozen, 4)
    x0 = rng.standard_normal(NX)
    X = pred.Sx @ x0 + pred.Sf
    assert np.allclose(X.reshape(4, NX), np.tile(x0, (4, 1)), atol=1e-12)


def test_prediction_matches_recursion(rng):
    lin = random_lin(rng)
    N_h = 5
    pred = build_prediction(lin, N_h)
    x0 = rng.standard_normal(NX)
    U = rng.standard_normal(N_h * NU)
    X = pred.Sx @ x0 + pred.Su @ U + pred.Sf
    assert np.max(np.abs(X - rollout(lin, x0, U, N_h))) < 1e-12
    Y = pred.Cbar @ X + pred.fbar
    for k in range(N_h):
        xk = X[k * NX:(k + 1) * NX]
        assert np.allclose(Y[k * 2:(k + 1) * 2], lin.Cout @ xk + lin.fout)


def test_condense_pure_input_penalty(rng, params):
    cfg = MpcConfig(N_h=4, Q2=np.zeros((NX, NX)), W=np.zeros((2, 2)))
    lin = random_lin(rng, dt=cfg.dt_pred)
    pred = build_prediction(lin, cfg.N_h)
    refs = ReferenceWindow(Xd=np.zeros(cfg.N_h * NX), Yd=np.zeros(cfg.N_h * 2))
    qp = condense(pred, refs, cfg, rng.standard_normal(NX),
                  params.tau_min, params.tau_max)
    sol = qp_solve(qp, cfg.qp_opts)
    assert np.max(np.abs(sol.x)) < 1e-6


def test_condense_hessian_symmetric_psd(rng, params):
    cfg = MpcConfig(N_h=3)
    lin = random_lin(rng, dt=cfg.dt_pred)
    pred = build_prediction(lin, cfg.N_h)
    refs = ReferenceWindow(Xd=np.zeros(cfg.N_h * NX), Yd=np.zeros(cfg.N_h * 2))
    qp = condense(pred, refs, cfg, np.zeros(NX), params.tau_min, params.tau_max)
    assert np.max(np.abs(qp.H - qp.H.T)) < 1e-10
    assert np.linalg.eigvalsh(qp.H)[0] > -1e-10


def test_condense_exact_tracking_of_reachable_reference(rng, params):
    # references generated by a rollout within bounds: with a vanishing input
    # penalty the optimum reproduces that input sequence
    cfg = MpcConfig(N_h=3, R2=1e-10 * np.eye(NU))
    lin = random_lin(rng, dt=cfg.dt_pred)
    pred = build_prediction(lin, cfg.N_h)
    x0 = rng.standard_normal(NX)
    U_true = rng.uniform(-1.0, 1.0, cfg.N_h * NU)
    Xd = rollout(lin, x0, U_true, cfg.N_h)
    Yd = pred.Cbar @ Xd + pred.fbar
    qp = condense(pred, ReferenceWindow(Xd=Xd, Yd=Yd), cfg, x0,
                  params.tau_min, params.tau_max)
    sol = qp_solve(qp, cfg.qp_opts)
    assert sol.status == "optimal"
    assert np.max(np.abs(sol.x - U_true)) < 1e-4


def sparse_formulation(pred, refs, cfg, x0, lin, tau_min, tau_max):
    """MPC QP with explicit states and dynamics equalities (oracle)."""
    N_h = cfg.N_h
    n = N_h * (NU + NX)

    def u_idx(k):
        return slice(k * NU, (k + 1) * NU)

    def x_idx(k):
        return slice(N_h * NU + k * NX, N_h * NU + (k + 1) * NX)

    H = np.zeros((n, n))
    g = np.zeros(n)
    CWC = lin.Cout.T @ cfg.W @ lin.Cout
    for k in range(N_h):
        H[u_idx(k), u_idx(k)] = cfg.R2
        H[x_idx(k), x_idx(k)] = cfg.Q2 + CWC
        xd = refs.Xd[k * NX:(k + 1) * NX]
        yd = refs.Yd[k * 2:(k + 1) * 2]
        g[x_idx(k)] = -cfg.Q2 @ xd + lin.Cout.T @ cfg.W @ (lin.fout - yd)
    H = 2 * H
    Aeq = np.zeros((N_h * NX, n))
    beq = np.zeros(N_h * NX)
    for k in range(N_h):
        rows = slice(k * NX, (k + 1) * NX)
        Aeq[rows, x_idx(k)] = np.eye(NX)
        Aeq[rows, u_idx(k)] = -lin.Bbar
        if k == 0:
            beq[rows] = lin.Abar @ x0 + lin.Fbar
        else:
            Aeq[rows, x_idx(k - 1)] = -lin.Abar
            beq[rows] = lin.Fbar
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[: N_h * NU] = np.tile(tau_min, N_h)
    ub[: N_h * NU] = np.tile(tau_max, N_h)
    return QpProblem(H=H, g=g, Aeq=Aeq, beq=beq, lb=lb, ub=ub)


def objective_of(refs, cfg, lin, x0, U):
    """Tracking objective of an input sequence under the affine model."""
    cost = 0.0
    x = x0.copy()
    for k in range(cfg.N_h):
        u = U[k * NU:(k + 1) * NU]
        x = lin.Abar @ x + lin.Bbar @ u + lin.Fbar
        ex = x - refs.Xd[k * NX:(k + 1) * NX]
        ey = lin.Cout @ x + lin.fout - refs.Yd[k * 2:(k + 1) * 2]
        cost += ex @ cfg.Q2 @ ex + ey @ cfg.W @ ey + u @ cfg.R2 @ u
    return float(cost)


def test_condensation_equivalence(rng, params):
    for _ in range(10):
        cfg = MpcConfig(N_h=int(rng.integers(2, 6)))
        lin = random_lin(rng, dt=cfg.dt_pred)
        pred = build_prediction(lin, cfg.N_h)
        x0 = rng.standard_normal(NX)
        refs = ReferenceWindow(Xd=rng.standard_normal(cfg.N_h * NX),
                               Yd=rng.standard_normal(cfg.N_h * 2))
        qp_c = condense(pred, refs, cfg, x0, params.tau_min, params.tau_max)
        sol_c = qp_solve(qp_c, cfg.qp_opts)
        qp_s = sparse_formulation(pred, refs, cfg, x0, lin,
                                  params.tau_min, params.tau_max)
        sol_s = qp_solve(qp_s, cfg.qp_opts)
        assert sol_c.status == "optimal" and sol_s.status == "optimal"
        obj_c = objective_of(refs, cfg, lin, x0, sol_c.x)
        obj_s = objective_of(refs, cfg, lin, x0, sol_s.x[: cfg.N_h * NU])
        assert abs(obj_c - obj_s) < 1e-6


def test_reference_window_holds_terminal_point(params, vb_dense):
    cfg = MpcConfig(N_h=10, dt_pred=0.01)
    refs = slice_references(vb_dense, vb_dense.duration, cfg)
    terminal = vb_dense.state_at(vb_dense.duration)
    for k in range(cfg.N_h):
        assert np.allclose(refs.Xd[k * NX:(k + 1) * NX], terminal, atol=1e-12)


def test_tracker_consistent_on_plan(params, vb_dense):
    # on the plan with plan references, the command stays near the
    # feedforward torque away from t=0
    tracker = MpcTracker(vb_dense, MpcConfig(), params)
    t = 0.45
    res = tracker.step(vb_dense.state_at(t), t)
    assert not res.fallback
    assert np.max(np.abs(res.u_applied - vb_dense.tau_at(t))) < 0.1
    assert np.all(res.u_applied >= params.tau_min - 1e-12)
    assert np.all(res.u_applied <= params.tau_max + 1e-12)


def test_tracker_degenerate_torque_box(params, vb_dense):
    tiny = replace(params, tau_min=np.full(3, -1e-9), tau_max=np.full(3, 1e-9))
    tracker = MpcTracker(vb_dense, MpcConfig(), tiny)
    res = tracker.step(vb_dense.state_at(0.3), 0.3)
    assert np.max(np.abs(res.u_applied)) <= 1e-9
