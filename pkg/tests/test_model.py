import numpy as np
import pytest

from brachiation import RobotParams, fk_ee, fk_points, forward_dynamics, linearize
from brachiation.model import (NQ, coriolis_matrix, dyn_terms, ee_jacobian,
                               gravity_vector, mass_matrix, mass_matrix_deriv,
                               mechanical_energy, state_derivative)
from brachiation.harness import simulate_step

from conftest import random_joint_states

HANG = np.array([-np.pi / 2, 0.0, 0.0, 0.0])
START_Q = np.array([-2.35, 0.0, -1.55, 0.0])


def test_mass_matrix_symmetric(params, rng):
    q_s, _ = random_joint_states(rng, params, 200)
    for q in q_s:
        M = mass_matrix(q, params)
        assert np.max(np.abs(M - M.T)) < 1e-12


def test_mass_matrix_positive_definite(params, rng):
    q_s, _ = random_joint_states(rng, params, 1000)
    for q in q_s:
        assert np.linalg.eigvalsh(mass_matrix(q, params))[0] > 1e-6


def test_coriolis_vanishes_at_rest(params, rng):
    q_s, _ = random_joint_states(rng, params, 20)
    for q in q_s:
        assert np.allclose(dyn_terms(q, np.zeros(NQ), params).Cqd, 0.0)


def test_single_pendulum_reduction():
    # with only link 1 carrying mass, M[0,0] is the hand-derived pendulum value
    p = RobotParams(mass=[0.35, 1e-12, 1e-12, 1e-12],
                    inertia=[0.015, 0.0, 0.0, 0.0])
    M = mass_matrix(np.array([0.3, -0.4, 0.7, 0.1]), p)
    assert M[0, 0] == pytest.approx(0.015 + 0.35 * p.lc[0] ** 2, abs=1e-9)


def test_mass_matrix_deriv_matches_fd(params, rng):
    q_s, _ = random_joint_states(rng, params, 10)
    h = 1e-6
    for q in q_s:
        dM = mass_matrix_deriv(q, params)
        for m in range(NQ):
            e = np.zeros(NQ)
            e[m] = h
            fd = (mass_matrix(q + e, params) - mass_matrix(q - e, params)) / (2 * h)
            assert np.max(np.abs(dM[m] - fd)) < 1e-7


def test_mdot_minus_2c_skew(params, rng):
    q_s, qd_s = random_joint_states(rng, params, 100)
    for q, qd in zip(q_s, qd_s):
        dM = mass_matrix_deriv(q, params)
        Mdot = np.tensordot(qd, dM, axes=(0, 0))
        S = Mdot - 2 * coriolis_matrix(q, qd, params)
        v = rng.standard_normal(NQ)
        assert abs(v @ S @ v) < 1e-8


def test_gravity_matches_potential_gradient(params, rng):
    q_s, _ = random_joint_states(rng, params, 10)
    h = 1e-6

    def potential(q):
        return mechanical_energy(np.concatenate([q, np.zeros(NQ)]), params)

    for q in q_s:
        G = gravity_vector(q, params)
        for i in range(NQ):
            e = np.zeros(NQ)
            e[i] = h
            fd = (potential(q + e) - potential(q - e)) / (2 * h)
            assert G[i] == pytest.approx(fd, abs=1e-6)


def test_equilibrium_hanging(params):
    x = np.concatenate([HANG, np.zeros(NQ)])
    assert np.max(np.abs(forward_dynamics(x, np.zeros(3), params))) < 1e-10


def test_forward_dynamics_matches_manipulator_equation(params, rng):
    q_s, qd_s = random_joint_states(rng, params, 20)
    for q, qd in zip(q_s, qd_s):
        u = rng.uniform(params.tau_min, params.tau_max)
        x = np.concatenate([q, qd])
        qdd = forward_dynamics(x, u, params)
        t = dyn_terms(q, qd, params)
        res = t.M @ qdd + t.Cqd + t.G
        res[1:] -= u
        assert np.max(np.abs(res)) < 1e-9


def test_fk_examples(params):
    assert np.allclose(fk_ee(HANG, params), [0.0, -1.42], atol=1e-12)
    assert np.allclose(fk_ee(np.zeros(NQ), params), [1.42, 0.0], atol=1e-12)
    ee = fk_ee(START_Q, params)
    assert np.linalg.norm(ee - np.array([-1.0, 0.0])) < 0.03


def test_fk_chain_lengths(params, rng):
    q_s, _ = random_joint_states(rng, params, 50)
    for q in q_s:
        pts = fk_points(q, params)
        assert np.allclose(np.linalg.norm(np.diff(pts, axis=0), axis=1),
                           params.L, atol=1e-12)
        assert np.allclose(pts[0], 0.0)


def test_ee_jacobian_matches_fd(params, rng):
    q_s, _ = random_joint_states(rng, params, 30)
    h = 1e-6
    for q in q_s:
        J = ee_jacobian(q, params)
        for i in range(NQ):
            e = np.zeros(NQ)
            e[i] = h
            fd = (fk_ee(q + e, params) - fk_ee(q - e, params)) / (2 * h)
            assert np.max(np.abs(J[:, i] - fd)) < 1e-6


def test_ee_jacobian_hanging_column(params):
    J = ee_jacobian(HANG, params)
    assert np.allclose(J[:, 0], [1.42, 0.0], atol=1e-12)


def test_linearize_exact_at_expansion_point(params, rng):
    q_s, qd_s = random_joint_states(rng, params, 5)
    for q, qd in zip(q_s, qd_s):
        x = np.concatenate([q, qd])
        u = rng.uniform(params.tau_min, params.tau_max)
        lin = linearize(x, u, params, dt=0.001)
        f = state_derivative(x, u, params)
        assert np.max(np.abs(lin.A @ x + lin.B @ u + lin.F - f)) < 1e-12
        assert np.max(np.abs(lin.Cout @ x + lin.fout - fk_ee(q, params))) < 1e-12
        assert np.allclose(lin.Abar, np.eye(8) + lin.dt * lin.A)
        assert np.allclose(lin.Bbar, lin.dt * lin.B)
        assert np.allclose(lin.Fbar, lin.dt * lin.F)
        assert np.all(lin.Cout[:, NQ:] == 0.0)


def test_linearize_matches_finite_differences(params, rng):
    h = 1e-6
    for _ in range(100):
        q = rng.uniform(params.q_min, params.q_max)
        qd = rng.uniform(-2.0, 2.0, NQ)
        x = np.concatenate([q, qd])
        u = rng.uniform(params.tau_min, params.tau_max)
        lin = linearize(x, u, params, dt=0.001)
        for i in range(8):
            e = np.zeros(8)
            e[i] = h
            fd = (state_derivative(x + e, u, params)
                  - state_derivative(x - e, u, params)) / (2 * h)
            assert np.max(np.abs(lin.A[:, i] - fd)) < 1e-5
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (state_derivative(x, u + e, params)
                  - state_derivative(x, u - e, params)) / (2 * h)
            assert np.max(np.abs(lin.B[:, i] - fd)) < 1e-5


def test_mechanical_energy_hanging_closed_form(params):
    x = np.concatenate([HANG, np.zeros(NQ)])
    depth = np.cumsum(np.concatenate([[0.0], params.L[:-1]])) + params.lc
    expected = -params.g * np.sum(params.mass * depth)
    assert mechanical_energy(x, params) == pytest.approx(expected, abs=1e-12)


def test_unforced_energy_conservation(params):
    x = np.concatenate([START_Q, np.zeros(NQ)])
    e0 = mechanical_energy(x, params)
    dt = 1e-4
    drift = 0.0
    for _ in range(10000):  # 1 s
        x = simulate_step(x, np.zeros(3), dt, params)
        drift = max(drift, abs(mechanical_energy(x, params) - e0))
    assert drift < 1e-4
