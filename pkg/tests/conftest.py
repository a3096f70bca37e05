import numpy as np
import pytest

from brachiation import RobotParams, densify
from brachiation.harness import tracking_config
from brachiation.trajopt import plan


@pytest.fixture(scope="session")
def params():
    return RobotParams()


@pytest.fixture(scope="session")
def vb_plan(params):
    """The reference tracking-scenario plan (start at rest, target (0.8, 0))."""
    cfg = tracking_config(params)
    return cfg, plan(cfg, params)


@pytest.fixture(scope="session")
def vb_dense(params, vb_plan):
    _, traj = vb_plan
    return densify(traj, params)


@pytest.fixture()
def rng():
    return np.random.default_rng(42)


def random_joint_states(rng, p, n):
    """Uniform samples of (q, qd) within the parameter limits."""
    q = rng.uniform(p.q_min, p.q_max, size=(n, 4))
    qd = rng.uniform(p.qd_min, p.qd_max, size=(n, 4))
    return q, qd
