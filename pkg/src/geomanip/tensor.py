"""Dense multilinear algebra on small tensors.

Tensors are plain ``numpy`` arrays. Modes are numbered from 1, as in the
usual ``X x_n A`` notation, so ``mode_product(T, A, 2)`` multiplies along the
second axis.

Symmetric matrices are vectorized with the orthonormal Mandel convention:
diagonal entries first, then the strict upper triangle in row-major order
scaled by ``sqrt(2)``. For a 2x2 matrix ``[[a, b], [b, c]]`` this gives
``(a, c, sqrt(2) b)``, and ``mandel_vec(X) @ mandel_vec(Y)`` equals the
Frobenius inner product of ``X`` and ``Y``.
"""

from functools import lru_cache

import numpy as np

from .errors import InsufficientDataError, ShapeError

SQRT2 = np.sqrt(2.0)


def _check_mode(ndim, mode):
    if not 1 <= mode <= ndim:
        raise ShapeError(f"mode {mode} out of range for a tensor of order {ndim}")


def mode_product(T, A, mode):
    """n-mode product ``T x_mode A``.

    Parameters
    ----------
    T : ndarray, shape (I_1, ..., I_N)
    A : ndarray, shape (J, I_mode)
    mode : int
        1-based mode index.

    Returns
    -------
    ndarray
        Same shape as ``T`` with axis ``mode`` replaced by ``J``.
    """
    T = np.asarray(T, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    _check_mode(T.ndim, mode)
    ax = mode - 1
    if A.shape[1] != T.shape[ax]:
        raise ShapeError(
            f"cannot take mode-{mode} product: matrix has {A.shape[1]} columns, "
            f"tensor has {T.shape[ax]} entries along that mode"
        )
    out = np.tensordot(A, T, axes=(1, ax))
    return np.moveaxis(out, 0, ax)


def matricize(T, mode):
    """Mode-n unfolding ``X_(n)`` of shape ``I_n x prod(I_m, m != n)``.

    Columns follow the column-major ordering of the remaining indices, so that
    ``matricize(mode_product(T, A, n), n) == A @ matricize(T, n)``.
    """
    T = np.asarray(T, dtype=float)
    _check_mode(T.ndim, mode)
    ax = mode - 1
    return np.reshape(np.moveaxis(T, ax, 0), (T.shape[ax], -1), order="F")


def fold(M, mode, shape):
    """Inverse of :func:`matricize`."""
    shape = tuple(shape)
    _check_mode(len(shape), mode)
    ax = mode - 1
    moved = (shape[ax],) + shape[:ax] + shape[ax + 1:]
    return np.moveaxis(np.reshape(np.asarray(M, dtype=float), moved, order="F"), 0, ax)


def mandel_dim(D):
    return D * (D + 1) // 2


def sym_dim(Dt):
    """Matrix size D for a Mandel vector of length ``Dt``."""
    D = int(round((np.sqrt(8 * Dt + 1) - 1) / 2))
    if mandel_dim(D) != Dt:
        raise ShapeError(f"{Dt} is not a valid Mandel vector length")
    return D


@lru_cache(maxsize=None)
def mandel_index(D):
    """Row/column index pairs and weights of the Mandel ordering for size D."""
    rows = list(range(D))
    cols = list(range(D))
    for i in range(D):
        for j in range(i + 1, D):
            rows.append(i)
            cols.append(j)
    weights = np.where(np.array(rows) == np.array(cols), 1.0, SQRT2)
    return np.array(rows), np.array(cols), weights


def mandel_vec(X):
    """Mandel vector of a symmetric matrix (or a stack of them)."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != X.shape[-2]:
        raise ShapeError(f"expected square matrices, got shape {X.shape}")
    r, c, w = mandel_index(X.shape[-1])
    return X[..., r, c] * w


def mandel_fold(v):
    """Symmetric matrix (or stack) from Mandel vector(s)."""
    v = np.asarray(v, dtype=float)
    D = sym_dim(v.shape[-1])
    r, c, w = mandel_index(D)
    X = np.zeros(v.shape[:-1] + (D, D))
    vals = v / w
    X[..., r, c] = vals
    X[..., c, r] = vals
    return X


def mandel_matricize(T):
    """Mode-3 Mandel unfolding of a ``D x D x K`` tensor with symmetric slices.

    Returns a ``K x Dt`` matrix whose k-th row is ``mandel_vec(T[:, :, k])``.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 3 or T.shape[0] != T.shape[1]:
        raise ShapeError(f"expected a D x D x K tensor, got shape {T.shape}")
    return mandel_vec(np.moveaxis(T, 2, 0))


def mandel_unfold4(S):
    """``Dt x Dt`` matrix of a ``D x D x D x D`` tensor with minor symmetries.

    For ``S = X (x) Y`` this returns ``outer(mandel_vec(X), mandel_vec(Y))``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 4 or len(set(S.shape)) != 1:
        raise ShapeError(f"expected a D x D x D x D tensor, got shape {S.shape}")
    r, c, w = mandel_index(S.shape[0])
    return S[r[:, None], c[:, None], r[None, :], c[None, :]] * np.outer(w, w)


def mandel_fold4(U):
    """Inverse of :func:`mandel_unfold4` for tensors with minor symmetries."""
    U = np.asarray(U, dtype=float)
    D = sym_dim(U.shape[0])
    r, c, w = mandel_index(D)
    vals = U / np.outer(w, w)
    S = np.zeros((D, D, D, D))
    a, b = r[:, None], c[:, None]
    S[a, b, r, c] = S[b, a, r, c] = S[a, b, c, r] = S[b, a, c, r] = vals
    return S


def outer(X, Y):
    """Tensor product ``(X (x) Y)_{i..j..} = X_{i..} Y_{j..}``."""
    return np.multiply.outer(np.asarray(X, dtype=float), np.asarray(Y, dtype=float))


def contract4_2(S, X):
    """Double contraction ``(S X)_ij = sum_kl S_ijkl X_kl``."""
    S = np.asarray(S, dtype=float)
    X = np.asarray(X, dtype=float)
    if S.ndim != 4 or S.shape[2:] != X.shape:
        raise ShapeError(f"cannot contract tensor {S.shape} with matrix {X.shape}")
    return np.einsum("ijkl,kl->ij", S, X)


def covariance_tensor(samples, center):
    """Sample covariance tensor ``1/(N-1) sum (X_n - C) (x) (X_n - C)``."""
    X = np.asarray(samples, dtype=float)
    if X.ndim != 3 or X.shape[0] < 2:
        raise InsufficientDataError("a covariance tensor needs at least 2 samples")
    E = X - np.asarray(center, dtype=float)
    return np.einsum("nij,nkl->ijkl", E, E) / (X.shape[0] - 1)


def is_covariance_tensor(S, tol=1e-10):
    """Pair-exchange symmetry and a PSD Mandel unfolding, within ``tol``."""
    S = np.asarray(S, dtype=float)
    scale = max(1.0, np.abs(S).max(initial=0.0))
    if np.abs(S - S.transpose(2, 3, 0, 1)).max() > tol * scale:
        return False
    U = mandel_unfold4(S)
    return np.linalg.eigvalsh((U + U.T) / 2).min() >= -tol * scale
