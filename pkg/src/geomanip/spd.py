"""Affine-invariant Riemannian geometry of SPD matrices.

Points are symmetric positive definite ``ndarray``s and tangent vectors are
symmetric ``ndarray``s. All matrix functions go through a symmetric
eigendecomposition and every returned matrix is re-symmetrized.
"""

import numpy as np

from .errors import ConvergenceError, NotSPDError, NotSymmetricError, ShapeError
from .tensor import mandel_dim, mandel_fold, mandel_fold4, mandel_unfold4, mandel_vec

SPD_RTOL = 1e-12
SYM_RTOL = 1e-12


def sym(X):
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def check_sym(X, name="matrix"):
    """Return ``X`` as a symmetrized float array, or raise NotSymmetricError."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NotSymmetricError(f"{name} has non-finite entries")
    scale = max(1.0, np.abs(X).max(initial=0.0))
    if np.abs(X - X.T).max(initial=0.0) > SYM_RTOL * scale:
        raise NotSymmetricError(f"{name} is not symmetric")
    return sym(X)


def check_spd(X, name="matrix"):
    """Validate an SPD matrix.

    Rejects matrices whose smallest eigenvalue is not above ``1e-12`` times
    the largest one.
    """
    try:
        X = check_sym(X, name)
    except NotSymmetricError as exc:
        raise NotSPDError(str(exc)) from exc
    w = np.linalg.eigvalsh(X)
    if w[-1] <= 0 or w[0] <= SPD_RTOL * w[-1]:
        raise NotSPDError(f"{name} is not positive definite (eigenvalues {w})")
    return X


def nearest_spd(X):
    """Clamp the eigenvalues of ``sym(X)`` to the SPD acceptance floor."""
    X = sym(np.asarray(X, dtype=float))
    w, V = np.linalg.eigh(X)
    top = max(w[-1], np.finfo(float).tiny)
    w = np.maximum(w, 2 * SPD_RTOL * top)
    return sym((V * w) @ V.T)


def _eigfun(X, fn):
    w, V = np.linalg.eigh(X)
    return sym((V * fn(w)) @ V.T)


def sqrtm(X):
    return _eigfun(X, np.sqrt)


def invsqrtm(X):
    return _eigfun(X, lambda w: 1.0 / np.sqrt(w))


def logm(X):
    return _eigfun(X, np.log)


def expm(X):
    return _eigfun(X, np.exp)


def powm(X, p):
    return _eigfun(X, lambda w: w**p)


def _same_dim(*mats):
    if len({m.shape for m in mats}) != 1:
        raise ShapeError(f"dimension mismatch: {[m.shape for m in mats]}")


def exp_map(base, L):
    """Exponential map ``Exp_base(L)``."""
    base = check_spd(base, "base")
    L = check_sym(L, "tangent vector")
    _same_dim(base, L)
    s, si = sqrtm(base), invsqrtm(base)
    return sym(s @ expm(sym(si @ L @ si)) @ s)


def log_map(base, target):
    """Logarithmic map ``Log_base(target)``."""
    base = check_spd(base, "base")
    target = check_spd(target, "target")
    _same_dim(base, target)
    if np.array_equal(base, target):
        return np.zeros_like(base)
    s, si = sqrtm(base), invsqrtm(base)
    return sym(s @ logm(sym(si @ target @ si)) @ s)


def log_map_many(base, targets):
    """Log maps of a stack of SPD matrices at a common base.

    ``targets`` are trusted to be SPD; validate them once on ingest.
    """
    base = check_spd(base, "base")
    P = np.asarray(targets, dtype=float)
    s, si = sqrtm(base), invsqrtm(base)
    w, V = np.linalg.eigh(sym(si @ P @ si))
    inner = (V * np.log(w)[..., None, :]) @ np.swapaxes(V, -1, -2)
    return sym(s @ inner @ s)


def distance(A, B):
    """Affine-invariant distance ``||log(B^-1/2 A B^-1/2)||_F``."""
    A = check_spd(A, "A")
    B = check_spd(B, "B")
    _same_dim(A, B)
    if np.array_equal(A, B):
        return 0.0
    si = invsqrtm(B)
    w = np.linalg.eigvalsh(sym(si @ A @ si))
    return float(np.sqrt(np.sum(np.log(w) ** 2)))


def inner_product(base, T1, T2):
    """Riemannian inner product ``tr(S^-1/2 T1 S^-1 T2 S^-1/2)``."""
    base = check_spd(base, "base")
    T1 = check_sym(T1, "T1")
    T2 = check_sym(T2, "T2")
    _same_dim(base, T1, T2)
    si = invsqrtm(base)
    return float(np.sum((si @ T1 @ si) * (si @ T2 @ si)))


def norm(base, T):
    return np.sqrt(max(inner_product(base, T, T), 0.0))


def geodesic(A, B, t):
    """Point at parameter ``t`` on the geodesic with ``A`` at 0 and ``B`` at 1."""
    return exp_map(A, t * log_map(A, B))


def transport_operator(source, dest, along_geodesic=True):
    """Matrix ``A`` such that transport is ``T -> A T A^T``.

    With ``along_geodesic`` (the default) this is the Levi-Civita transport
    along the geodesic, ``S^1/2 (S^-1/2 L S^-1/2)^1/2 S^-1/2``. Otherwise it is
    the congruence ``L^1/2 S^-1/2``. Both are isometries between the two
    tangent spaces and they coincide when ``source`` and ``dest`` commute.
    """
    source = check_spd(source, "source")
    dest = check_spd(dest, "dest")
    _same_dim(source, dest)
    si = invsqrtm(source)
    if along_geodesic:
        return sqrtm(source) @ sqrtm(sym(si @ dest @ si)) @ si
    return sqrtm(dest) @ si


def transport_sym(source, dest, T, along_geodesic=True):
    """Parallel transport of a symmetric matrix from ``T_source`` to ``T_dest``."""
    T = check_sym(T, "tangent vector")
    A = transport_operator(source, dest, along_geodesic)
    _same_dim(A, T)
    return sym(A @ T @ A.T)


def _mandel_transport_matrix(A):
    """Matrix of ``T -> A T A^T`` acting on Mandel vectors."""
    D = A.shape[0]
    Dt = mandel_dim(D)
    basis = mandel_fold(np.eye(Dt))
    return mandel_vec(A @ basis @ A.T).T


def _check_psd(C, tol=1e-10):
    w = np.linalg.eigvalsh(C)
    if w[0] < -tol * max(1.0, abs(w[-1])):
        raise NotSPDError(f"covariance unfolding is not PSD (min eigenvalue {w[0]:.3e})")


def transport_block_cov(source, dest, C, d_in=0, along_geodesic=True):
    """Transport a joint covariance over (Euclidean input, Mandel output).

    ``C`` is ``(d_in + Dt) x (d_in + Dt)``. It is eigendecomposed; each
    eigenvector keeps its input part and has its output part folded into a
    symmetric matrix and transported. The covariance is rebuilt as
    ``sum_k lambda_k v~_k v~_k^T``.
    """
    C = np.asarray(C, dtype=float)
    C = 0.5 * (C + C.T)
    _check_psd(C)
    A = transport_operator(source, dest, along_geodesic)
    lam, V = np.linalg.eigh(C)
    Vt = V.copy()
    Vt[d_in:] = mandel_vec(A @ mandel_fold(V[d_in:].T) @ A.T).T
    out = (Vt * lam) @ Vt.T
    return 0.5 * (out + out.T)


def transport_cov4(source, dest, S, along_geodesic=True):
    """Transport a 4th-order covariance tensor through its eigentensors."""
    S = np.asarray(S, dtype=float)
    U = mandel_unfold4(S)
    return mandel_fold4(transport_block_cov(source, dest, U, 0, along_geodesic))


def metric_spectrum(base, S):
    """Eigenvalues of a covariance tensor measured in the metric at ``base``.

    Transport between tangent spaces preserves this spectrum.
    """
    W = _mandel_transport_matrix(invsqrtm(check_spd(base, "base")))
    U = mandel_unfold4(S)
    return np.linalg.eigvalsh(sym(W @ U @ W.T))


def karcher_mean(points, weights=None, tol=1e-8, max_iter=100, init=None):
    """Weighted Karcher (Frechet) mean by unit-step fixed-point iteration.

    Stops when the Frobenius norm of the weighted mean of log maps drops
    below ``tol``.

    Raises
    ------
    ConvergenceError
        If ``max_iter`` iterations do not reach ``tol``.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 2:
        P = P[None]
    if len(P) == 0:
        raise ValueError("karcher_mean needs at least one point")
    if weights is None:
        w = np.full(len(P), 1.0 / len(P))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(P),) or np.any(w < 0):
            raise ValueError("weights must be nonnegative, one per point")
        w = w / w.sum()
    mu = check_spd(P[int(np.argmax(w))] if init is None else init)
    if np.all(P == P[0]):
        return check_spd(P[0])
    res = np.inf
    for _ in range(max_iter):
        g = np.einsum("n,nij->ij", w, log_map_many(mu, P))
        res = np.linalg.norm(g)
        if res < tol:
            return mu
        mu = exp_map(mu, g)
    raise ConvergenceError(
        f"Karcher mean did not converge in {max_iter} iterations (residual {res:.3e})",
        residual=res,
    )
