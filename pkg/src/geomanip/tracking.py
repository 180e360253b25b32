"""Manipulability tracking controllers and the baselines they are compared to.

Every controller is a pure function of the current state and the targets and
returns a :class:`TrackingCommand`. Symmetric errors are vectorized in Mandel
form, so the mode-3 unfolding of a manipulability Jacobian is ``n x Dt``.
Integration lives in :mod:`geomanip.sim.scenario`.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from .errors import NotSPDError, ShapeError
from .manipulability import manipulability, manipulability_jacobian, manipulability_jacobian_dt
from .spd import check_spd, distance, log_map
from .tensor import mandel_dim, mandel_matricize, mandel_unfold4, mandel_vec

PINV_RTOL = 1e-8


def damped_pinv(A, rel_tol=PINV_RTOL, damping=0.0):
    """SVD pseudoinverse with optional Tikhonov damping.

    Singular values below ``rel_tol * s_max`` are dropped; the rest are
    inverted as ``s / (s^2 + damping^2)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.T.shape)
    keep = s > rel_tol * s[0]
    inv = np.zeros_like(s)
    inv[keep] = s[keep] / (s[keep] ** 2 + damping**2)
    return (Vt.T * inv) @ U.T


def _rank(A, rel_tol=PINV_RTOL):
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > rel_tol * s[0])) if s.size and s[0] > 0 else 0


def gain_matrix(K, dim):
    """Expand a scalar, diagonal or full gain into a ``dim x dim`` matrix."""
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        if K < 0:
            raise ValueError("scalar gains must be nonnegative")
        return float(K) * np.eye(dim)
    if K.ndim == 1:
        if K.shape != (dim,) or np.any(K < 0):
            raise ValueError(f"diagonal gain needs {dim} nonnegative entries")
        return np.diag(K)
    if K.shape != (dim, dim):
        raise ShapeError(f"gain matrix must be {dim} x {dim}, got {K.shape}")
    if np.abs(K - K.T).max() > 1e-12 * max(1.0, np.abs(K).max()) or np.linalg.eigvalsh(K).min() < -1e-12:
        raise ValueError("gain matrix must be symmetric positive semidefinite")
    return 0.5 * (K + K.T)


@dataclass
class Gains:
    """Controller gains.

    ``K_M``, ``K_p`` and ``K_d`` act on Mandel vectors and may be scalars,
    diagonals or full PSD matrices. ``K_x`` is the positional gain in 1/s.
    """

    K_M: object = 1.0
    K_x: float = 1.0
    K_p: object = 25.0
    K_d: object = 10.0

    def __post_init__(self):
        if np.any(np.asarray(self.K_x) < 0):
            raise ValueError("K_x must be nonnegative")
        for name in ("K_M", "K_p", "K_d"):
            val = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(val)):
                raise ValueError(f"{name} must be finite")


@dataclass
class TrackingCommand:
    """Controller output plus per-step diagnostics.

    ``residuals`` holds projector identity residuals for controllers that use
    a nullspace projector.
    """

    qdot: np.ndarray = None
    qddot: np.ndarray = None
    distance: float = 0.0
    error_norm: float = 0.0
    rank: int = 0
    residuals: dict = field(default_factory=dict)


def _ellipsoid_state(chain, q, kind, weighted):
    M = manipulability(chain, q, kind, weighted)
    JM = manipulability_jacobian(chain, q, kind, weighted)
    return M, JM, mandel_matricize(JM)


def _task_terms(chain, q, x_target, K_x, xdot_target=None):
    # the projector needs the undamped inverse to be exact
    J = kin.planar_jacobian(chain, q)
    Jp = damped_pinv(J)
    N = np.eye(chain.n) - Jp @ J
    x = kin.fk(chain, q)[:2]
    v = float(K_x) * (np.asarray(x_target, dtype=float) - x)
    if xdot_target is not None:
        v = v + np.asarray(xdot_target, dtype=float)
    return Jp @ v, N, np.abs(J @ N).max()


def projector_residuals(chain, q, kind="velocity", weighted=False):
    """Largest entries of ``J (I - pinv(J) J)`` and ``Jm^T (I - pinv(Jm^T) Jm^T)``.

    Both vanish up to rounding wherever the pseudoinverses keep every
    nonzero singular value.
    """
    J = kin.planar_jacobian(chain, q)
    A = mandel_matricize(manipulability_jacobian(chain, q, kind, weighted))
    n = chain.n
    return {
        "task_projector": float(np.abs(J @ (np.eye(n) - damped_pinv(J) @ J)).max()),
        "manipulability_projector": float(np.abs(A.T @ (np.eye(n) - damped_pinv(A.T) @ A.T)).max()),
    }


def velocity_track_main(chain, q, target, gains, kind="velocity", weighted=False, damping=0.0):
    """Geometry-aware velocity control of the ellipsoid as the main task.

    ``qdot = pinv(Jm^T) K_M vec(Log_M(target))`` with ``Jm`` the Mandel
    unfolding of the manipulability Jacobian.
    """
    target = check_spd(target, "target")
    M, _, A = _ellipsoid_state(chain, q, kind, weighted)
    err = mandel_vec(log_map(M, target))
    K = gain_matrix(gains.K_M, len(err))
    qdot = damped_pinv(A.T, damping=damping) @ (K @ err)
    return TrackingCommand(qdot=qdot, distance=distance(M, target), error_norm=float(np.linalg.norm(err)), rank=_rank(A))


def velocity_track_redundant(chain, q, x_target, target, gains, kind="velocity", weighted=False, damping=0.0,
                             prioritized=True, xdot_target=None):
    """Position tracking with the ellipsoid tracked in the task nullspace.

    ``qdot = pinv(J) (xdot_target + K_x (x_target - x)) + N qdot_M`` with
    ``N = I - pinv(J) J``. By default ``qdot_M = pinv(Jm^T N) K_M e``, the
    least-squares ellipsoid correction restricted to the nullspace, whose
    only equilibria are stationary points of the projected error. With
    ``prioritized=False`` it is the main-task command ``pinv(Jm^T) K_M e``
    projected afterwards, which can stall where that command lies in the row
    space of J.
    """
    target = check_spd(target, "target")
    M, _, A = _ellipsoid_state(chain, q, kind, weighted)
    err = mandel_vec(log_map(M, target))
    Ke = gain_matrix(gains.K_M, len(err)) @ err
    primary, N, res = _task_terms(chain, q, x_target, gains.K_x, xdot_target)
    if prioritized:
        secondary = N @ damped_pinv(A.T @ N, damping=damping) @ Ke
    else:
        secondary = N @ damped_pinv(A.T, damping=damping) @ Ke
    return TrackingCommand(
        qdot=primary + secondary,
        distance=distance(M, target),
        error_norm=float(np.linalg.norm(err)),
        rank=_rank(A),
        residuals={"task_projector": res},
    )


def nullspace_secondary(chain, q, target, gains, qdot_N, kind="velocity", weighted=False, damping=0.0):
    """Main-task tracking plus ``qdot_N`` projected into the nullspace of the
    manipulability Jacobian, where it leaves the ellipsoid unchanged to first
    order."""
    main = velocity_track_main(chain, q, target, gains, kind, weighted, damping)
    A = mandel_matricize(manipulability_jacobian(chain, q, kind, weighted))
    N = np.eye(chain.n) - damped_pinv(A.T) @ A.T
    main.qdot = main.qdot + N @ np.asarray(qdot_N, dtype=float)
    main.residuals["manipulability_projector"] = np.abs(A.T @ N).max()
    return main


def accel_track(chain, q, qdot, target, target_rate, gains, kind="velocity", weighted=False, damping=0.0, qddot_N=None):
    """Acceleration-level tracking with a PD reference on the manifold.

    ``qddot = pinv(Jm^T) (K_p vec(Log_M(target)) + K_d vec(target_rate - Mdot)
    - Jmdot^T qdot)``. An optional ``qddot_N`` is projected into the nullspace
    of ``Jm^T``.
    """
    target = check_spd(target, "target")
    qdot = np.asarray(qdot, dtype=float)
    M, JM, A = _ellipsoid_state(chain, q, kind, weighted)
    Mdot = JM @ qdot
    Ad = mandel_matricize(manipulability_jacobian_dt(chain, q, qdot, kind, weighted))
    e = mandel_vec(log_map(M, target))
    de = mandel_vec(np.asarray(target_rate, dtype=float) - Mdot)
    Dt = len(e)
    ref = gain_matrix(gains.K_p, Dt) @ e + gain_matrix(gains.K_d, Dt) @ de
    P = damped_pinv(A.T, damping=damping)
    qddot = P @ (ref - Ad.T @ qdot)
    cmd = TrackingCommand(qddot=qddot, distance=distance(M, target), error_norm=float(np.linalg.norm(e)), rank=_rank(A))
    if qddot_N is not None:
        N = np.eye(chain.n) - damped_pinv(A.T) @ A.T
        cmd.qddot = qddot + N @ np.asarray(qddot_N, dtype=float)
        cmd.residuals["manipulability_projector"] = np.abs(A.T @ N).max()
    return cmd


def gain_from_precision(S, kappa=1.0, mode="full", eps=1e-10, reference_trace=None):
    """Gain matrix from the precision of a covariance tensor.

    The Mandel unfolding of ``S`` is regularized by ``eps`` times its mean
    diagonal, inverted and scaled so that its trace is ``kappa * Dt``. If
    ``reference_trace`` is given the precision is divided by it instead of by
    its own trace, which keeps the overall gain level time-varying along a
    trajectory.

    Parameters
    ----------
    S : ndarray, shape (D, D, D, D)
    kappa : float
    mode : {"full", "diagonal"}
    eps : float
    reference_trace : float, optional

    Returns
    -------
    ndarray, shape (Dt, Dt)
    """
    if mode not in ("full", "diagonal"):
        raise ValueError(f"mode must be 'full' or 'diagonal', got {mode!r}")
    U = mandel_unfold4(S)
    U = 0.5 * (U + U.T)
    Dt = U.shape[0]
    w = np.linalg.eigvalsh(U)
    if w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise NotSPDError("covariance unfolding is not PSD")
    U = U + eps * max(np.trace(U) / Dt, np.finfo(float).tiny) * np.eye(Dt)
    if np.linalg.cond(U) > 1e12:
        raise NotSPDError("precision is singular after regularization")
    P = np.linalg.inv(U)
    P = 0.5 * (P + P.T)
    if mode == "diagonal":
        P = np.diag(np.diag(P))
    scale = np.trace(P) if reference_trace is None else float(reference_trace)
    return kappa * Dt * P / scale


def precision_trace(S, eps=1e-10):
    """Trace of the regularized precision used by :func:`gain_from_precision`."""
    U = mandel_unfold4(S)
    Dt = U.shape[0]
    U = 0.5 * (U + U.T) + eps * max(np.trace(U) / Dt, np.finfo(float).tiny) * np.eye(Dt)
    return float(np.trace(np.linalg.inv(U)))


def cholesky_derivative(L, dM):
    """Forward-mode derivative of the Cholesky factor.

    For ``M = L L^T`` and a symmetric perturbation ``dM`` returns
    ``dL = L Phi(L^-1 dM L^-T)``, where ``Phi`` keeps the lower triangle and
    halves the diagonal. This is what differentiating the Cholesky
    recurrence entry by entry produces.
    """
    X = np.linalg.solve(L, np.linalg.solve(L, dM).T).T
    Phi = np.tril(X)
    Phi[np.diag_indices_from(Phi)] *= 0.5
    return L @ Phi


def cholesky_jacobian(L, JM):
    """Cholesky manipulability Jacobian ``dL/dq``, shape ``(D, D, n)``."""
    return np.stack([cholesky_derivative(L, JM[:, :, k]) for k in range(JM.shape[2])], axis=-1)


def _tril_vec(X):
    r, c = np.tril_indices(X.shape[-1])
    return X[..., r, c]


def stein_cost(M, target):
    """``log det((target + M) / 2) - log det(target M) / 2``."""
    return float(np.linalg.slogdet(0.5 * (target + M))[1] - 0.5 * (np.linalg.slogdet(target)[1] + np.linalg.slogdet(M)[1]))


def stein_gradient(chain, q, target, kind="velocity", weighted=False):
    """Joint-space gradient of :func:`stein_cost`."""
    M, JM, _ = _ellipsoid_state(chain, q, kind, weighted)
    if np.array_equal(M, target):
        return np.zeros(chain.n)
    A = np.linalg.inv(0.5 * (target + M)) - np.linalg.inv(M)
    return 0.5 * np.einsum("ij,jik->k", A, JM)


BASELINES = ("euclidean", "cholesky", "cholesky_jacobian", "stein_gradient")


def baseline_track(method, chain, q, target, gains, alpha=1.0, kind="velocity", weighted=False, x_target=None, damping=0.0):
    """Comparison controllers that ignore the SPD geometry.

    ``euclidean`` uses ``vec(target - M)``, ``cholesky`` uses
    ``vec(dL dL^T)`` with ``dL = chol(target) - chol(M)``,
    ``cholesky_jacobian`` inverts the Cholesky manipulability Jacobian on
    ``vech(dL)``, and ``stein_gradient`` returns ``-alpha * grad g``.

    With ``x_target`` the command is placed in the nullspace of a position
    tracking task, as in :func:`velocity_track_redundant`.
    """
    if method not in BASELINES:
        raise ValueError(f"unknown baseline {method!r}; expected one of {BASELINES}")
    target = check_spd(target, "target")
    M, JM, A = _ellipsoid_state(chain, q, kind, weighted)
    Dt = mandel_dim(M.shape[0])
    if method == "stein_gradient":
        qdot = -alpha * stein_gradient(chain, q, target, kind, weighted)
        err_norm = abs(stein_cost(M, target))
    elif method == "cholesky_jacobian":
        L, Lh = np.linalg.cholesky(M), np.linalg.cholesky(target)
        Jc = _tril_vec(np.moveaxis(cholesky_jacobian(L, JM), 2, 0))  # n x Dt
        e = _tril_vec(Lh - L)
        qdot = damped_pinv(Jc.T, damping=damping) @ (gain_matrix(gains.K_M, Dt) @ e)
        err_norm = float(np.linalg.norm(e))
    else:
        if method == "euclidean":
            E = target - M
        else:
            dL = np.linalg.cholesky(target) - np.linalg.cholesky(M)
            E = dL @ dL.T
        e = mandel_vec(E)
        qdot = damped_pinv(A.T, damping=damping) @ (gain_matrix(gains.K_M, Dt) @ e)
        err_norm = float(np.linalg.norm(e))
    cmd = TrackingCommand(qdot=qdot, distance=distance(M, target), error_norm=err_norm, rank=_rank(A))
    if x_target is not None:
        primary, N, res = _task_terms(chain, q, x_target, gains.K_x)
        cmd.qdot = primary + N @ qdot
        cmd.residuals["task_projector"] = res
    return cmd


def manipulability_index(method, chain, q, u=None, kind="velocity"):
    """Volume ``sqrt(det M)`` or compatibility ``(u^T M^-1 u)^-1``."""
    M = manipulability(chain, q, kind)
    if method == "volume":
        return float(np.sqrt(np.linalg.det(M)))
    if method == "compatibility":
        u = _unit(u)
        return float(1.0 / (u @ np.linalg.solve(M, u)))
    raise ValueError(f"unknown index {method!r}")


def _unit(u):
    if u is None:
        raise ValueError("the compatibility index needs a direction")
    u = np.asarray(u, dtype=float)
    return u / np.linalg.norm(u)


def index_gradient(method, chain, q, u=None, kind="velocity"):
    """Joint-space gradient of a manipulability index.

    Volume: ``w/2 tr(M^-1 dM/dq_k)``. Compatibility along the unit direction
    ``u``: ``c^2 u^T M^-1 dM/dq_k M^-1 u``.
    """
    M = manipulability(chain, q, kind)
    JM = manipulability_jacobian(chain, q, kind)
    Mi = np.linalg.inv(M)
    if method == "volume":
        w = np.sqrt(np.linalg.det(M))
        return 0.5 * w * np.einsum("ij,jik->k", Mi, JM)
    if method == "compatibility":
        u = _unit(u)
        a = Mi @ u
        c = 1.0 / (u @ a)
        return c**2 * np.einsum("i,ijk,j->k", a, JM, a)
    raise ValueError(f"unknown index {method!r}")
