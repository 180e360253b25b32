"""Velocity, force and dynamic manipulability ellipsoids of planar chains and
their manipulability Jacobians.

Ellipsoids are 2 x 2 SPD matrices built from the two in-plane translational
rows of the hybrid Jacobian. A manipulability Jacobian is a ``2 x 2 x n``
tensor whose k-th frontal slice is ``dM/dq_k``. With ``weighted=True`` the
joint velocity limits (velocity kind) or torque limits (force and dynamic
kinds) of the chain are folded in.
"""

import numpy as np

from . import kinematics as kin
from .errors import NotSPDError, SingularConfigurationError
from .spd import check_spd, sym

KINDS = ("velocity", "force", "dynamic")
SINGULAR_RTOL = 1e-8
FD_STEP = 1e-6


def _check_kind(kind):
    if kind not in KINDS:
        raise ValueError(f"unknown manipulability kind {kind!r}; expected one of {KINDS}")


def _check_regular(J):
    s = np.linalg.svd(J, compute_uv=False)
    if s[-1] < SINGULAR_RTOL * s[0] or J.shape[1] < J.shape[0]:
        raise SingularConfigurationError(
            f"Jacobian is singular (singular values {s})"
        )


def _as_ellipsoid(M, kind):
    try:
        return check_spd(M, f"{kind} manipulability")
    except NotSPDError as exc:
        raise SingularConfigurationError(str(exc)) from exc


def _planar(chain, q):
    J = kin.jacobian(chain, q)
    return J[3:5], kin.jacobian_derivative(J)[3:5]


def _joint_weight(chain, kind, weighted):
    """Diagonal of the joint-space metric sandwiched between J and J^T."""
    if not weighted:
        return np.ones(chain.n)
    if kind == "velocity":
        return chain.qdot_max**2
    if kind == "force":
        return 1.0 / chain.tau_max**2
    return chain.tau_max**2


def _sandwich_jacobian(A, dA, w):
    """Frontal slices ``dA_k diag(w) A^T + A diag(w) dA_k^T``."""
    T = np.einsum("ajk,j,bj->abk", dA, w, A)
    return T + T.transpose(1, 0, 2)


def _dynamic_parts(chain, q, J, dJ):
    L = kin.inertia(chain, q)
    Li = np.linalg.inv(L)
    U = J @ Li
    dL = kin.inertia_dq(chain, q)
    dU = np.einsum("ajk,jb->abk", dJ, Li) - np.einsum("aj,jmk,mb->abk", U, dL, Li)
    return U, dU


def manipulability(chain, q, kind="velocity", weighted=False):
    """Manipulability ellipsoid of ``chain`` at ``q``.

    Parameters
    ----------
    chain : PlanarChain
    q : array_like, shape (n,)
    kind : {"velocity", "force", "dynamic"}
    weighted : bool
        Include the actuator limits of the chain.

    Returns
    -------
    ndarray, shape (2, 2)
        SPD ellipsoid matrix.

    Raises
    ------
    SingularConfigurationError
        If the ellipsoid is not SPD at ``q`` or, for the force and dynamic
        kinds, if the smallest singular value of J is below ``1e-8`` times
        the largest.
    """
    _check_kind(kind)
    J = kin.planar_jacobian(chain, q)
    w = _joint_weight(chain, kind, weighted)
    if kind == "velocity":
        return _as_ellipsoid((J * w) @ J.T, kind)
    _check_regular(J)
    if kind == "force":
        return _as_ellipsoid(np.linalg.inv((J * w) @ J.T), kind)
    U = J @ np.linalg.inv(kin.inertia(chain, q))
    return _as_ellipsoid((U * w) @ U.T, kind)


def manipulability_jacobian(chain, q, kind="velocity", weighted=False):
    """Manipulability Jacobian ``dM/dq``, shape ``(2, 2, n)``.

    The velocity kind needs no inverse and is defined at every
    configuration. The force kind is ``-J^v x_1 M^F x_2 M^F`` and the dynamic
    kind differentiates ``Upsilon = J Lambda^-1`` through the inertia
    derivative.
    """
    _check_kind(kind)
    J, dJ = _planar(chain, q)
    w = _joint_weight(chain, kind, weighted)
    if kind == "velocity":
        return _sandwich_jacobian(J, dJ, w)
    _check_regular(J)
    if kind == "force":
        MF = np.linalg.inv((J * w) @ J.T)
        Jv = _sandwich_jacobian(J, dJ, w)
        return -np.einsum("ai,ijk,jb->abk", MF, Jv, MF)
    U, dU = _dynamic_parts(chain, q, J, dJ)
    return _sandwich_jacobian(U, dU, w)


def manipulability_rate(chain, q, qdot, kind="velocity", weighted=False):
    """Ellipsoid rate ``Mdot = J_M x_3 qdot^T``."""
    return sym(manipulability_jacobian(chain, q, kind, weighted) @ np.asarray(qdot, dtype=float))


def manipulability_jacobian_dt(chain, q, qdot, kind="velocity", weighted=False):
    """Time derivative of the manipulability Jacobian along ``qdot``.

    Analytic for the velocity kind. The force and dynamic kinds use a
    central difference of :func:`manipulability_jacobian` along ``qdot``
    with step ``1e-6``.
    """
    _check_kind(kind)
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    if kind != "velocity":
        f = lambda x: manipulability_jacobian(chain, x, kind, weighted)
        return (f(q + FD_STEP * qdot) - f(q - FD_STEP * qdot)) / (2 * FD_STEP)
    Jh = kin.jacobian(chain, q)
    J = Jh[3:5]
    dJ = kin.jacobian_derivative(Jh)[3:5]
    d2J = kin.jacobian_second_derivative(Jh)[3:5]
    w = _joint_weight(chain, kind, weighted)
    Jdot = dJ @ qdot
    dJdot = d2J @ qdot  # d/dt (dJ/dq_k), slices along the third axis
    T = np.einsum("ajk,j,bj->abk", dJdot, w, J) + np.einsum("ajk,j,bj->abk", dJ, w, Jdot)
    return T + T.transpose(1, 0, 2)
