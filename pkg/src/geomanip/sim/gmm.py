"""Plain Euclidean GMM/GMR over time-driven vectors, used for tip paths."""

from dataclasses import dataclass

import numpy as np

from ..errors import ExtrapolationError, InsufficientDataError, SchemaError

LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class EuclideanGmm:
    priors: np.ndarray
    means: np.ndarray  # (K, d_in + d_out)
    covs: np.ndarray  # (K, d, d)
    d_in: int
    log_likelihood: tuple = ()

    @property
    def K(self):
        return len(self.priors)


def _log_gauss(X, mu, C):
    L = np.linalg.cholesky(C)
    Z = np.linalg.solve(L, (X - mu).T)
    return -0.5 * np.sum(Z**2, 0) - np.sum(np.log(np.diag(L))) - 0.5 * len(mu) * LOG2PI


def _lse(A):
    m = A.max(1, keepdims=True)
    return m[:, 0] + np.log(np.exp(A - m).sum(1))


def fit_gmm(inputs, outputs, K, reg=1e-6, tol=1e-6, max_iter=200):
    """EM on the joint vectors ``[input, output]``, initialized from K
    contiguous bins of the inputs sorted by their first dimension."""
    X = np.asarray(inputs, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    Y = np.asarray(outputs, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    Z = np.hstack([X, Y])
    N, d = Z.shape
    if N < 2 * K:
        raise InsufficientDataError(f"need at least {2 * K} datapoints for K={K}, got {N}")
    R = np.zeros((N, K))
    for k, g in enumerate(np.array_split(np.argsort(X[:, 0], kind="stable"), K)):
        R[g, k] = 1.0
    history, prev = [], None
    for it in range(max_iter + 1):
        Nk = R.sum(0)
        priors = Nk / N
        means = (R.T @ Z) / Nk[:, None]
        covs = np.empty((K, d, d))
        for k in range(K):
            E = Z - means[k]
            covs[k] = (E * R[:, k, None]).T @ E / Nk[k] + reg * np.eye(d)
        logp = np.column_stack([np.log(priors[k]) + _log_gauss(Z, means[k], covs[k]) for k in range(K)])
        norm = _lse(logp)
        ll = float(norm.sum())
        # the covariance floor makes the M-step inexact; never accept a step that loses likelihood
        if prev is not None and ll < history[-1]:
            priors, means, covs = prev
            break
        history.append(ll)
        if it > 0 and history[-1] - history[-2] < tol:
            break
        prev = (priors, means, covs)
        R = np.exp(logp - norm[:, None])
    return EuclideanGmm(priors, means, covs, X.shape[1], tuple(history))


def gmr(model, t):
    """Conditional mean and covariance of the output given input ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    i = model.d_in
    logw = np.array([
        np.log(p) + _log_gauss(t[None], m[:i], C[:i, :i])[0]
        for p, m, C in zip(model.priors, model.means, model.covs)
    ])
    if np.all(logw < np.log(1e-300)):
        raise ExtrapolationError(f"input {t.tolist()} is too far from every component")
    h = np.exp(logw - logw.max())
    h /= h.sum()
    mean = np.zeros(model.means.shape[1] - i)
    second = np.zeros((len(mean), len(mean)))
    for hk, m, C in zip(h, model.means, model.covs):
        G = np.linalg.solve(C[:i, :i], C[:i, i:]).T
        mk = m[i:] + G @ (t - m[:i])
        mean += hk * mk
        second += hk * (C[i:, i:] - G @ C[:i, i:] + np.outer(mk, mk))
    return mean, second - np.outer(mean, mean)


def gmr_rate(model, t, h=1e-4):
    """Central-difference time derivative of the conditional mean."""
    return (gmr(model, t + h)[0] - gmr(model, t - h)[0]) / (2 * h)


def to_document(model):
    return {
        "type": "gmm_euclidean",
        "d_in": model.d_in,
        "priors": model.priors.tolist(),
        "means": model.means.tolist(),
        "covariances": model.covs.tolist(),
    }


def from_document(doc):
    try:
        m = EuclideanGmm(
            np.asarray(doc["priors"], dtype=float),
            np.asarray(doc["means"], dtype=float),
            np.asarray(doc["covariances"], dtype=float),
            int(doc["d_in"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed Euclidean GMM document: {exc}") from exc
    K, d = m.means.shape if m.means.ndim == 2 else (0, 0)
    if K < 1 or m.priors.shape != (K,) or m.covs.shape != (K, d, d):
        raise SchemaError("inconsistent Euclidean GMM shapes")
    return m
