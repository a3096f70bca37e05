import numpy as np
import pytest

from brachiation import Obstacle, RobotParams, clearance_all
from brachiation.collision import (SELF_PAIRS, Segment, link_capsule,
                                   point_segment_distance,
                                   segment_segment_distance,
                                   segment_segment_signed)


def brute_point_segment(pt, s, n=10**6):
    t = np.linspace(0.0, 1.0, n)
    pts = s.p[None, :] + t[:, None] * s.v[None, :]
    return float(np.min(np.linalg.norm(pts - pt, axis=1)))


def brute_segment_segment(a, b, n=1000):
    t = np.linspace(0.0, 1.0, n)
    pa = a.p[None, :] + t[:, None] * a.v[None, :]
    pb = b.p[None, :] + t[:, None] * b.v[None, :]
    diff = pa[:, None, :] - pb[None, :, :]
    return float(np.min(np.sqrt(np.sum(diff**2, axis=2))))


def random_segment(rng):
    return Segment(p=rng.uniform(-2, 2, 2), v=rng.uniform(-2, 2, 2))


def test_point_segment_trivial():
    s = Segment(p=[-1.0, 0.0], v=[2.0, 0.0])
    assert point_segment_distance([0.0, 1.0], s) == pytest.approx(1.0)
    assert point_segment_distance([2.0, 0.0], s) == pytest.approx(1.0)


def test_point_segment_brute_force(rng):
    for _ in range(50):
        s = random_segment(rng)
        pt = rng.uniform(-2, 2, 2)
        d = point_segment_distance(pt, s)
        assert abs(d - brute_point_segment(pt, s)) < 1e-3


def test_segment_segment_trivial():
    a = Segment(p=[0.0, 0.0], v=[1.0, 0.0])
    b = Segment(p=[0.0, 1.0], v=[1.0, 0.0])
    assert segment_segment_distance(a, b) == pytest.approx(1.0)
    # crossing segments
    c = Segment(p=[0.0, -1.0], v=[0.0, 2.0])
    d = Segment(p=[-1.0, 0.0], v=[2.0, 0.0])
    assert segment_segment_distance(c, d) == pytest.approx(0.0, abs=1e-12)


def test_segment_segment_brute_force(rng):
    for _ in range(100):
        a, b = random_segment(rng), random_segment(rng)
        d = segment_segment_distance(a, b)
        bf = brute_segment_segment(a, b)
        assert d <= bf + 1e-12
        assert d >= bf - 1e-3


def test_segment_segment_symmetry(rng):
    for _ in range(100):
        a, b = random_segment(rng), random_segment(rng)
        assert abs(segment_segment_distance(a, b)
                   - segment_segment_distance(b, a)) < 1e-12


def test_rigid_invariance(rng):
    for _ in range(50):
        a, b = random_segment(rng), random_segment(rng)
        phi = rng.uniform(0, 2 * np.pi)
        R = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
        t = rng.uniform(-5, 5, 2)
        a2 = Segment(p=R @ a.p + t, v=R @ a.v)
        b2 = Segment(p=R @ b.p + t, v=R @ b.v)
        assert abs(segment_segment_distance(a, b)
                   - segment_segment_distance(a2, b2)) < 1e-10


def test_signed_distance_penetration(rng):
    # crossing segments: signed distance is minus the least separating push
    a = Segment(p=[-1.0, 0.0], v=[2.0, 0.0])
    b = Segment(p=[0.0, -0.3], v=[0.0, 1.0])
    d, s_star, t_star = segment_segment_signed(a, b)
    assert d == pytest.approx(-0.3)
    # witness points are |d| apart
    assert np.linalg.norm(a.at(s_star) - b.at(t_star)) == pytest.approx(abs(d))
    # disjoint case agrees with the plain distance
    c = Segment(p=[0.0, 1.0], v=[1.0, 0.0])
    assert segment_segment_signed(a, c)[0] == pytest.approx(
        segment_segment_distance(a, c))


def test_link_capsule_examples(params):
    s = link_capsule(np.zeros(4), 1, params)
    assert np.allclose(s.p, [0, 0]) and np.allclose(s.v, [0.355, 0])
    hang = np.array([-np.pi / 2, 0, 0, 0])
    s4 = link_capsule(hang, 4, params)
    assert np.allclose(s4.p, [0, -1.065], atol=1e-12)
    assert np.allclose(s4.v, [0, -0.355], atol=1e-12)
    with pytest.raises(ValueError):
        link_capsule(np.zeros(4), 5, params)


def test_capsule_length_invariant(params, rng):
    for _ in range(20):
        q = rng.uniform(params.q_min, params.q_max)
        for i in range(1, 5):
            s = link_capsule(q, i, params)
            assert np.linalg.norm(s.v) == pytest.approx(params.L[i - 1])


def test_clearance_all_structure(params):
    obstacles = [Obstacle(c=[0.5, 0.5], r=0.1), Obstacle(c=[-1, -1], r=0.2)]
    reports = clearance_all(np.zeros(4), params, obstacles)
    assert len(reports) == 4 * 2 + len(SELF_PAIRS)
    for r in reports:
        assert r.margin == pytest.approx(r.distance - r.threshold)


def test_clearance_collinear_chain(params):
    # straight chain: links 1 and 3 are separated by exactly one link length
    reports = {r.pair: r for r in clearance_all(np.zeros(4), params, [])}
    assert reports["link1-link3"].distance == pytest.approx(0.355)


def test_clearance_obstacle_at_ee(params):
    q = np.zeros(4)
    obs = Obstacle(c=[1.42, 0.0], r=0.1)
    reports = {r.pair: r for r in clearance_all(q, params, [obs])}
    rep = reports["link4-obstacle0"]
    assert rep.distance == pytest.approx(0.0, abs=1e-12)
    assert rep.margin < 0


def test_clearance_far_obstacle(params):
    obs = Obstacle(c=[100.0, 0.0], r=0.1)
    for r in clearance_all(np.zeros(4), params, [obs]):
        if "obstacle" in r.pair:
            assert r.margin > 98
