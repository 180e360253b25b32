"""Planar serial chains: forward kinematics, hybrid Jacobians and their
joint derivatives, and the joint-space inertia matrix.

Jacobians use the hybrid 6 x n layout: rows 0-2 hold the angular part ``w``
and rows 3-5 the linear part ``v`` of each column. The functions
:func:`jacobian_derivative` and :func:`jacobian_second_derivative` work on
any such hybrid Jacobian of a revolute serial chain, not only planar ones.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ShapeError
from .tensor import mode_product


@dataclass(frozen=True)
class PlanarChain:
    """An n-joint planar revolute chain made of uniform thin rods.

    Each link has its center of mass at mid-length and a rotational inertia
    of ``m l^2 / 12`` about it. ``qdot_max`` and ``tau_max`` are the diagonals
    of the joint velocity and torque limit matrices.
    """

    lengths: np.ndarray
    masses: np.ndarray = None
    qdot_max: np.ndarray = None
    tau_max: np.ndarray = None
    name: str = field(default="chain", compare=False)

    def __post_init__(self):
        lengths = np.atleast_1d(np.asarray(self.lengths, dtype=float))
        n = len(lengths)
        if n < 1:
            raise ValueError("a chain needs at least one link")
        object.__setattr__(self, "lengths", lengths)
        for attr in ("masses", "qdot_max", "tau_max"):
            val = getattr(self, attr)
            val = np.ones(n) if val is None else np.atleast_1d(np.asarray(val, dtype=float))
            if val.shape != (n,):
                raise ShapeError(f"{attr} must have {n} entries, got {val.shape}")
            object.__setattr__(self, attr, val)
        for attr in ("lengths", "masses", "qdot_max", "tau_max"):
            val = getattr(self, attr)
            if not np.all(np.isfinite(val)) or np.any(val <= 0):
                raise ValueError(f"{attr} must be strictly positive")

    @property
    def n(self):
        return len(self.lengths)

    @property
    def rod_inertia(self):
        return self.masses * self.lengths**2 / 12.0


def _q(chain, q):
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n,):
        raise ShapeError(f"expected {chain.n} joint angles, got shape {q.shape}")
    return q


def joint_positions(chain, q):
    """Positions of every joint and of the tip, shape ``(n + 1, 2)``."""
    q = _q(chain, q)
    th = np.cumsum(q)
    seg = chain.lengths[:, None] * np.column_stack([np.cos(th), np.sin(th)])
    return np.vstack([np.zeros(2), np.cumsum(seg, axis=0)])


def fk(chain, q):
    """Tip pose ``(x1, x2, phi)``."""
    q = _q(chain, q)
    x = joint_positions(chain, q)[-1]
    return np.array([x[0], x[1], np.sum(q)])


def _hybrid_columns(joints, point):
    """Hybrid Jacobian columns of planar revolute joints for a given point."""
    n = len(joints)
    J = np.zeros((6, n))
    J[2] = 1.0
    d = point - joints
    J[3] = -d[:, 1]
    J[4] = d[:, 0]
    return J


def jacobian(chain, q):
    """Hybrid 6 x n Jacobian of the tip."""
    P = joint_positions(chain, q)
    return _hybrid_columns(P[:-1], P[-1])


def planar_jacobian(chain, q):
    """The two in-plane translational rows of :func:`jacobian`."""
    return jacobian(chain, q)[3:5]


def com_jacobians(chain, q):
    """Hybrid Jacobians of each link's center of mass, shape ``(n, 6, n)``."""
    q = _q(chain, q)
    P = joint_positions(chain, q)
    com = 0.5 * (P[:-1] + P[1:])
    out = np.zeros((chain.n, 6, chain.n))
    for i in range(chain.n):
        out[i, :, : i + 1] = _hybrid_columns(P[: i + 1], com[i])
    return out


def _cross(a, b):
    # np.cross has noticeable per-call overhead on small stacks
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def jacobian_derivative(J):
    """Joint derivative of a hybrid Jacobian, shape ``(6, n, n)``.

    Entry ``[:, i, j]`` is ``dJ^i/dq^j``: ``(w_j x w_i, w_j x v_i)`` for
    ``j <= i`` and ``(0, w_i x v_j)`` otherwise.
    """
    J = np.asarray(J, dtype=float)
    n = J.shape[1]
    w, v = J[:3].T, J[3:].T
    wi, vi = w[:, None, :], v[:, None, :]
    wj, vj = w[None, :, :], v[None, :, :]
    lower = (np.arange(n)[None, :] <= np.arange(n)[:, None])[..., None]
    dw = np.where(lower, _cross(wj, wi), 0.0)
    dv = np.where(lower, _cross(wj, vi), _cross(wi, vj))
    return np.moveaxis(np.concatenate([dw, dv], axis=-1), -1, 0)


def jacobian_second_derivative(J):
    """Second joint derivative of a hybrid Jacobian, shape ``(6, n, n, n)``.

    Entry ``[:, i, j, k]`` is ``d^2 J^i / dq^k dq^j``. It is obtained by
    differentiating the first-order rule with respect to ``q^k``, which
    reproduces the six index-ordering cases of the closed form.
    """
    J = np.asarray(J, dtype=float)
    n = J.shape[1]
    D1 = np.moveaxis(jacobian_derivative(J), 0, -1)  # (i, j, 6)
    cols = J.T  # (n, 6)

    # P(x) y = (x_w x y_w, x_w x y_v);  M(x) y = (0, x_v x y_w)
    def P(x, y):
        return np.concatenate([_cross(x[..., :3], y[..., :3]), _cross(x[..., :3], y[..., 3:])], -1)

    def M(x, y):
        return np.concatenate([np.zeros(np.broadcast_shapes(x.shape, y.shape)[:-1] + (3,)),
                               _cross(x[..., 3:], y[..., :3])], -1)

    Ji = cols[:, None, None, :]
    Jj = cols[None, :, None, :]
    dJj_k = D1[None, :, :, :]  # dJ^j/dq^k  indexed (., j, k)
    dJi_k = D1[:, None, :, :]  # dJ^i/dq^k  indexed (i, ., k)
    lower = P(dJj_k, Ji) + P(Jj, dJi_k)
    upper = -M(dJj_k, Ji) - M(Jj, dJi_k)
    mask = (np.arange(n)[None, :] <= np.arange(n)[:, None])[:, :, None, None]
    return np.moveaxis(np.where(mask, lower, upper), -1, 0)


def jacobian_dq(chain, q):
    return jacobian_derivative(jacobian(chain, q))


def jacobian_dq2(chain, q):
    return jacobian_second_derivative(jacobian(chain, q))


def jacobian_dt(chain, q, qdot):
    """Time derivative ``sum_j dJ/dq^j qdot_j`` of the hybrid Jacobian."""
    return jacobian_dq(chain, q) @ np.asarray(qdot, dtype=float)


def _link_inertias(chain):
    M = np.zeros((chain.n, 6, 6))
    M[:, 2, 2] = chain.rod_inertia
    M[:, 3, 3] = M[:, 4, 4] = M[:, 5, 5] = chain.masses
    return M


def inertia(chain, q):
    """Joint-space inertia matrix ``sum_i J_i^T diag(I_i, m_i I) J_i``."""
    Jc = com_jacobians(chain, q)
    Mi = _link_inertias(chain)
    L = np.einsum("iap,iab,ibq->pq", Jc, Mi, Jc)
    return 0.5 * (L + L.T)


def inertia_dq(chain, q):
    """Joint derivative of the inertia matrix, shape ``(n, n, n)``.

    Entry ``[r, c, k]`` is ``d Lambda_rc / dq^k``.
    """
    q = _q(chain, q)
    n = chain.n
    Jc = com_jacobians(chain, q)
    Mi = _link_inertias(chain)
    out = np.zeros((n, n, n))
    for i in range(n):
        dJ = np.zeros((6, n, n))
        dJ[:, : i + 1, : i + 1] = jacobian_derivative(Jc[i, :, : i + 1])
        JtM = Jc[i].T @ Mi[i]
        out += mode_product(dJ.transpose(1, 0, 2), JtM, 2) + mode_product(dJ, JtM, 1)
    return out


def inverse_kinematics(chain, x_target, q0, tol=1e-10, max_iter=500, damping=1e-4):
    """Damped least-squares position IK from ``q0``.

    Raises
    ------
    ConvergenceError
        If the tip does not reach ``x_target`` within ``tol``.
    """
    q = np.array(q0, dtype=float)
    x_target = np.asarray(x_target, dtype=float)
    err = np.inf
    for _ in range(max_iter):
        e = x_target - fk(chain, q)[:2]
        err = np.linalg.norm(e)
        if err < tol:
            return q
        J = planar_jacobian(chain, q)
        step = J.T @ np.linalg.solve(J @ J.T + damping**2 * np.eye(2), e)
        scale = min(1.0, 0.5 / max(np.abs(step).max(), 1e-300))
        q = q + scale * step
    raise ConvergenceError(
        f"IK did not reach {x_target.tolist()} (residual {err:.3e} m)", residual=err
    )
