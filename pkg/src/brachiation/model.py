"""Planar four-link rigid-body dynamics for a brachiation robot pinned at the grip.

Conventions: q1 is the absolute angle of link 1 measured from the +x axis
(CCW positive), q2..q4 are relative joint angles. Joint 1 is passive; torques
act on joints 2-4. Gravity points along -y. The grip point is the origin of
the body frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

NQ = 4  # joints
NU = 3  # actuated joints (2..4)
NX = 2 * NQ

# theta = LOWER @ q maps joint angles to absolute link angles
_LOWER = np.tril(np.ones((NQ, NQ)))

# selection matrix: tau acts on joints 2..4
SEL = np.zeros((NQ, NU))
SEL[1:, :] = np.eye(NU)


class DynamicsError(RuntimeError):
    """Raised when the mass matrix factorization fails (corrupted parameters)."""


def _as_float_array(v, n) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (n,):
        raise ValueError(f"expected shape ({n},), got {a.shape}")
    return a


@dataclass(frozen=True)
class RobotParams:
    """Physical and limit parameters of the four-link robot.

    Defaults are the simulated robot's values: equal 0.355 m links, the
    planar (I_yy) inertias, grip-side COM offsets and +-5 Nm torque limits.
    Joint/velocity limits are planner bounds, not physical stops.
    """

    L: np.ndarray = field(default_factory=lambda: np.array([0.355, 0.355, 0.355, 0.355]))
    mass: np.ndarray = field(default_factory=lambda: np.array([0.35, 0.56, 0.56, 0.35]))
    inertia: np.ndarray = field(default_factory=lambda: np.array([0.015, 0.024, 0.024, 0.015]))
    lc: np.ndarray = field(default_factory=lambda: np.array([0.2059, 0.1832, 0.1718, 0.1491]))
    tau_min: np.ndarray = field(default_factory=lambda: np.array([-5.0, -5.0, -5.0]))
    tau_max: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0, 5.0]))
    q_min: np.ndarray = field(default_factory=lambda: np.array([-2 * np.pi, -2.8, -2.8, -2.8]))
    q_max: np.ndarray = field(default_factory=lambda: np.array([2 * np.pi, 2.8, 2.8, 2.8]))
    qd_min: np.ndarray = field(default_factory=lambda: np.full(4, -10.0))
    qd_max: np.ndarray = field(default_factory=lambda: np.full(4, 10.0))
    g: float = 9.81

    def __post_init__(self):
        for name, n in (("L", 4), ("mass", 4), ("inertia", 4), ("lc", 4),
                        ("tau_min", 3), ("tau_max", 3), ("q_min", 4),
                        ("q_max", 4), ("qd_min", 4), ("qd_max", 4)):
            object.__setattr__(self, name, _as_float_array(getattr(self, name), n))
        if not np.all(self.L > 0):
            raise ValueError("link lengths must be positive")
        if not (np.all(self.lc > 0) and np.all(self.lc <= self.L)):
            raise ValueError("COM offsets must lie in (0, L]")
        if not np.all(self.mass > 0):
            raise ValueError("masses must be positive")
        if not np.all(self.inertia >= 0):
            raise ValueError("inertias must be non-negative")
        for lo, hi in ((self.tau_min, self.tau_max), (self.q_min, self.q_max),
                       (self.qd_min, self.qd_max)):
            if not np.all(lo < hi):
                raise ValueError("lower limits must be strictly below upper limits")

    def total_length(self) -> float:
        return float(np.sum(self.L))

    def with_arm_ratio(self, r2: float, total: float = 0.71) -> "RobotParams":
        """Rescale link lengths to a lower-to-total arm ratio while keeping masses.

        Links 1 and 4 are the lower (gripper-side) arms, links 2 and 3 the
        upper arms; each pair sums to `total`. COM offsets scale with length
        and inertias with length squared.
        """
        if not 0.0 < r2 < 1.0:
            raise ValueError("arm ratio must lie in (0, 1)")
        L_new = np.array([r2 * total, (1 - r2) * total, (1 - r2) * total, r2 * total])
        scale = L_new / self.L
        return replace(
            self,
            L=L_new,
            lc=self.lc * scale,
            inertia=self.inertia * scale**2,
        )


@dataclass(frozen=True)
class DynTerms:
    """Manipulator-equation terms: M qdd + Cqd + G = SEL tau."""

    M: np.ndarray
    Cqd: np.ndarray
    G: np.ndarray


@dataclass(frozen=True)
class LinearizedPlant:
    """Affine continuous/discrete dynamics and affine EE output at a point."""

    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    Abar: np.ndarray
    Bbar: np.ndarray
    Fbar: np.ndarray
    Cout: np.ndarray
    fout: np.ndarray
    dt: float


def _chain_coeffs(p: RobotParams) -> np.ndarray:
    """a[k, i]: lever of absolute angle i on the COM of link k (zero for i > k)."""
    a = np.zeros((NQ, NQ))
    for k in range(NQ):
        a[k, :k] = p.L[:k]
        a[k, k] = p.lc[k]
    return a


def mass_matrix(q, p: RobotParams) -> np.ndarray:
    """Joint-space mass matrix M(q); supports complex q for complex-step use."""
    q = np.asarray(q)
    theta = _LOWER @ q
    a = _chain_coeffs(p)
    K = (a * p.mass[:, None]).T @ a
    dth = theta[:, None] - theta[None, :]
    M_abs = np.diag(p.inertia.astype(dth.dtype)) + K * np.cos(dth)
    return _LOWER.T @ M_abs @ _LOWER


def mass_matrix_deriv(q, p: RobotParams) -> np.ndarray:
    """dM/dq as an array of shape (4, 4, 4): out[m] = dM/dq_m."""
    q = np.asarray(q)
    theta = _LOWER @ q
    a = _chain_coeffs(p)
    K = (a * p.mass[:, None]).T @ a
    dth = theta[:, None] - theta[None, :]
    S = K * np.sin(dth)  # antisymmetric
    out = np.zeros((NQ, NQ, NQ), dtype=S.dtype)
    for ell in range(NQ):
        d_abs = np.zeros((NQ, NQ), dtype=S.dtype)
        d_abs[ell, :] -= S[ell, :]
        d_abs[:, ell] += S[:, ell]
        d_q = _LOWER.T @ d_abs @ _LOWER
        # theta_ell depends on q_m for all m <= ell
        for m in range(ell + 1):
            out[m] += d_q
    return out


def coriolis_matrix(q, qd, p: RobotParams) -> np.ndarray:
    """C(q, qd) from Christoffel symbols of the analytic mass matrix."""
    qd = np.asarray(qd)
    dM = mass_matrix_deriv(q, p)
    C = np.zeros((NQ, NQ), dtype=np.result_type(dM.dtype, qd.dtype))
    for k in range(NQ):
        for j in range(NQ):
            # c_{ijk} qd_i summed over i
            C[k, j] = 0.5 * np.sum((dM[:, k, j] + dM[j, k, :] - dM[k, :, j]) * qd)
    return C


def gravity_vector(q, p: RobotParams) -> np.ndarray:
    """Generalized gravity forces G(q) with gravity along -y."""
    q = np.asarray(q)
    theta = _LOWER @ q
    # dV/dtheta_l = g cos(theta_l) (m_l lc_l + L_l sum_{k>l} m_k)
    tail = np.concatenate([np.cumsum(p.mass[::-1])[::-1][1:], [0.0]])
    w = p.mass * p.lc + p.L * tail
    return _LOWER.T @ (p.g * w * np.cos(theta))


def dyn_terms(q, qd, p: RobotParams) -> DynTerms:
    """Mass matrix, Coriolis/centrifugal force vector and gravity vector."""
    M = mass_matrix(q, p)
    Cqd = coriolis_matrix(q, qd, p) @ np.asarray(qd)
    G = gravity_vector(q, p)
    return DynTerms(M=M, Cqd=Cqd, G=G)


def forward_dynamics(x, u, p: RobotParams) -> np.ndarray:
    """Joint accelerations qdd = M^-1 (SEL u - G - C qd).

    Solves the 4x4 SPD system by Cholesky; complex inputs (for complex-step
    differentiation) fall back to an LU solve.
    """
    x = np.asarray(x)
    u = np.asarray(u)
    q, qd = x[:NQ], x[NQ:]
    terms = dyn_terms(q, qd, p)
    rhs = SEL @ u - terms.G - terms.Cqd
    if np.iscomplexobj(x) or np.iscomplexobj(u):
        return np.linalg.solve(terms.M, rhs)
    try:
        c, low = cho_factor(terms.M)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - corrupted params
        raise DynamicsError("mass matrix is not positive definite") from exc
    return cho_solve((c, low), rhs)


def state_derivative(x, u, p: RobotParams) -> np.ndarray:
    """State-space right-hand side xdot = [qd; forward_dynamics]."""
    x = np.asarray(x)
    return np.concatenate([x[NQ:], forward_dynamics(x, u, p)])


def fk_points(q, p: RobotParams) -> np.ndarray:
    """Planar positions of grip, joints 2-4 and the EE; shape (5, 2)."""
    q = np.asarray(q)
    theta = _LOWER @ q
    steps = np.stack([p.L * np.cos(theta), p.L * np.sin(theta)], axis=1)
    pts = np.zeros((NQ + 1, 2), dtype=steps.dtype)
    pts[1:] = np.cumsum(steps, axis=0)
    return pts


def fk_ee(q, p: RobotParams) -> np.ndarray:
    """End-effector position (last chain point)."""
    return fk_points(q, p)[-1]


def point_jacobian(q, p: RobotParams, link: int, t: float) -> np.ndarray:
    """2x4 translational Jacobian of the point at fraction t along link (1-based)."""
    q = np.asarray(q)
    theta = _LOWER @ q
    lever = np.zeros(NQ, dtype=theta.dtype)
    lever[: link - 1] = p.L[: link - 1]
    lever[link - 1] = t * p.L[link - 1]
    J_theta = np.stack([-lever * np.sin(theta), lever * np.cos(theta)])
    return J_theta @ _LOWER


def ee_jacobian(q, p: RobotParams) -> np.ndarray:
    """2x4 Jacobian of the EE position with respect to q."""
    return point_jacobian(q, p, NQ, 1.0)


def linearize(x_op, u_op, p: RobotParams, dt: float) -> LinearizedPlant:
    """Affine expansion of the dynamics and EE output around (x_op, u_op).

    Jacobians are computed by complex-step differentiation (machine-precision,
    independent of any finite-difference check). The discrete model is the
    forward-Euler step: Abar = I + dt A, Bbar = dt B, Fbar = dt F.
    """
    x_op = np.asarray(x_op, dtype=float)
    u_op = np.asarray(u_op, dtype=float)
    h = 1e-20
    A = np.zeros((NX, NX))
    for i in range(NX):
        xc = x_op.astype(complex)
        xc[i] += 1j * h
        A[:, i] = state_derivative(xc, u_op, p).imag / h
    B = np.zeros((NX, NU))
    for i in range(NU):
        uc = u_op.astype(complex)
        uc[i] += 1j * h
        B[:, i] = state_derivative(x_op, uc, p).imag / h
    f0 = state_derivative(x_op, u_op, p)
    F = f0 - A @ x_op - B @ u_op
    J = ee_jacobian(x_op[:NQ], p)
    Cout = np.zeros((2, NX))
    Cout[:, :NQ] = J
    fout = fk_ee(x_op[:NQ], p) - J @ x_op[:NQ]
    return LinearizedPlant(
        A=A, B=B, F=F,
        Abar=np.eye(NX) + dt * A, Bbar=dt * B, Fbar=dt * F,
        Cout=Cout, fout=fout, dt=dt,
    )


def mechanical_energy(x, p: RobotParams) -> float:
    """Kinetic plus gravitational potential energy; potential zero at grip height."""
    x = np.asarray(x, dtype=float)
    q, qd = x[:NQ], x[NQ:]
    M = mass_matrix(q, p)
    kinetic = 0.5 * qd @ M @ qd
    theta = _LOWER @ q
    pts = fk_points(q, p)
    y_com = pts[:-1, 1] + p.lc * np.sin(theta)
    return float(kinetic + p.g * np.sum(p.mass * y_com))
