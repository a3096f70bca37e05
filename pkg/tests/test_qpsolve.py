from itertools import combinations

import numpy as np
import pytest

from brachiation import QpOptions, QpProblem, qp_solve


def active_set_oracle(H, g, G, h):
    """Global minimum of 1/2 x'Hx + g'x s.t. Gx <= h by enumerating active sets."""
    n = len(g)
    m = len(h)
    best = None

    def try_active(rows):
        k = len(rows)
        KKT = np.zeros((n + k, n + k))
        KKT[:n, :n] = H
        if k:
            A = G[list(rows)]
            KKT[:n, n:] = A.T
            KKT[n:, :n] = A
        rhs = np.concatenate([-g, h[list(rows)]])
        try:
            sol = np.linalg.solve(KKT, rhs)
        except np.linalg.LinAlgError:
            return None
        x = sol[:n]
        if np.any(G @ x > h + 1e-9):
            return None
        return x

    for k in range(m + 1):
        for rows in combinations(range(m), k):
            x = try_active(rows)
            if x is None:
                continue
            obj = 0.5 * x @ H @ x + g @ x
            if best is None or obj < best[0]:
                best = (obj, x)
    return best


def random_qp(rng, n, mi):
    A = rng.standard_normal((n, n))
    H = A @ A.T + n * np.eye(n)  # strictly convex
    g = rng.standard_normal(n)
    G = rng.standard_normal((mi, n))
    # keep the origin strictly feasible so the problem is never empty
    h = rng.uniform(0.1, 1.0, mi)
    return H, g, G, h


def test_unconstrained_minimum():
    sol = qp_solve(QpProblem(H=np.eye(2), g=np.array([-1.0, -1.0])))
    assert sol.status == "optimal"
    assert np.allclose(sol.x, [1.0, 1.0], atol=1e-6)


def test_active_box_bound():
    sol = qp_solve(QpProblem(H=np.eye(1), g=np.array([-10.0]),
                             lb=np.zeros(1), ub=np.ones(1)))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)


def test_equality_projection():
    sol = qp_solve(QpProblem(H=2 * np.eye(2), g=np.zeros(2),
                             Aeq=np.array([[1.0, 1.0]]), beq=np.array([1.0])))
    assert sol.status == "optimal"
    assert np.allclose(sol.x, [0.5, 0.5], atol=1e-6)


def test_random_qps_match_active_set_oracle(rng):
    for trial in range(100):
        n = int(rng.integers(2, 11))
        mi = int(rng.integers(1, 11))
        H, g, G, h = random_qp(rng, n, mi)
        sol = qp_solve(QpProblem(H=H, g=g, Aineq=-G, lo=-h, hi=np.full(len(h), np.inf)))
        assert sol.status == "optimal", f"trial {trial}: {sol.status}"
        obj_oracle, _ = active_set_oracle(H, g, G, h)
        assert sol.obj <= obj_oracle + 1e-5
        assert np.all(G @ sol.x <= h + 1e-5)


def test_optimality_conditions(rng):
    for _ in range(20):
        H, g, G, h = random_qp(rng, 5, 6)
        prob = QpProblem(H=H, g=g, Aineq=-G, lo=-h, hi=np.full(6, np.inf))
        sol = qp_solve(prob)
        assert sol.status == "optimal"
        # stationarity: Hx + g + A'y = 0 with the solver's row convention
        grad = H @ sol.x + g + (-G).T @ sol.y_ineq
        assert np.max(np.abs(grad)) < 1e-5
        # complementary slackness per row
        slack = (-G) @ sol.x - (-h)
        assert np.max(np.abs(slack * sol.y_ineq)) < 1e-5


def test_scaling_invariance(rng):
    H, g, G, h = random_qp(rng, 4, 5)
    kw = dict(Aineq=-G, lo=-h, hi=np.full(5, np.inf))
    x1 = qp_solve(QpProblem(H=H, g=g, **kw)).x
    x2 = qp_solve(QpProblem(H=7.3 * H, g=7.3 * g, **kw)).x
    assert np.max(np.abs(x1 - x2)) < 1e-6


def test_warm_start_speedup(rng):
    ratios = []
    for _ in range(50):
        H, g, G, h = random_qp(rng, 6, 6)
        prob = QpProblem(H=H, g=g, Aineq=-G, lo=-h, hi=np.full(6, np.inf))
        cold = qp_solve(prob)
        prob2 = QpProblem(H=H, g=g + rng.uniform(-1e-3, 1e-3, 6),
                          Aineq=-G, lo=-h, hi=np.full(6, np.inf))
        warm = qp_solve(prob2, x0=cold.x, y0=cold.y)
        assert warm.status == "optimal"
        ratios.append(warm.iterations / max(cold.iterations, 1))
    assert np.median(ratios) <= 0.25


def test_infeasible_detection():
    # x >= 1 and x <= 0 simultaneously
    prob = QpProblem(H=np.eye(1), g=np.zeros(1),
                     Aineq=np.array([[1.0]]), lo=np.array([1.0]),
                     hi=np.array([np.inf]), lb=np.array([-10.0]),
                     ub=np.array([0.0]))
    sol = qp_solve(prob)
    assert sol.status == "infeasible"


def test_soft_rows_absorb_infeasibility():
    # same empty hard set, but the general row is l1-penalized
    prob = QpProblem(H=np.eye(1), g=np.zeros(1),
                     Aineq=np.array([[1.0]]), lo=np.array([1.0]),
                     hi=np.array([np.inf]), lb=np.array([-10.0]),
                     ub=np.array([0.0]))
    sol = qp_solve(prob, soft=np.array([10.0]))
    assert sol.status == "optimal"
    # the box is hard, the soft row is violated at the bound
    assert sol.x[0] == pytest.approx(0.0, abs=1e-6)


def test_determinism(rng):
    H, g, G, h = random_qp(rng, 5, 5)
    prob = QpProblem(H=H, g=g, Aineq=-G, lo=-h, hi=np.full(5, np.inf))
    a = qp_solve(prob)
    b = qp_solve(prob)
    assert np.array_equal(a.x, b.x)
    assert a.iterations == b.iterations
