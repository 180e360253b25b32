"""Gaussian mixture models over (Euclidean input, SPD output) pairs and
Gaussian mixture regression on the SPD manifold.

Each component stores its joint covariance as a ``(d_in + Dt)`` square
matrix: the input block first, then the Mandel block of the output tangent
space at the component mean. The 4th-order tensor form is produced only for
the GMR output covariance.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    ExtrapolationError,
    InsufficientDataError,
    NotSPDError,
    SchemaError,
    ShapeError,
)
from .spd import check_spd, exp_map, karcher_mean, log_map, log_map_many
from .tensor import mandel_dim, mandel_fold, mandel_fold4, mandel_vec

SCHEMA_VERSION = 1
REG = 1e-6
LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class SpdDatapoint:
    """One (input, SPD output) training pair."""

    input: np.ndarray
    output: np.ndarray


@dataclass(frozen=True)
class GmmSpdComponent:
    prior: float
    mean_in: np.ndarray
    mean_out: np.ndarray
    cov: np.ndarray

    @property
    def d_in(self):
        return len(self.mean_in)

    @property
    def cov_in(self):
        return self.cov[: self.d_in, : self.d_in]

    @property
    def cov_out_in(self):
        return self.cov[self.d_in:, : self.d_in]

    @property
    def cov_out(self):
        return self.cov[self.d_in:, self.d_in:]


@dataclass(frozen=True)
class GmmSpdModel:
    components: tuple
    D: int
    d_in: int
    log_likelihood: tuple = ()
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def K(self):
        return len(self.components)

    @property
    def priors(self):
        return np.array([c.prior for c in self.components])


def as_arrays(data):
    """Split a sequence of :class:`SpdDatapoint` into input and output arrays."""
    inputs = np.array([np.atleast_1d(np.asarray(p.input, dtype=float)) for p in data])
    outputs = np.array([np.asarray(p.output, dtype=float) for p in data])
    return inputs, outputs


def _inputs(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _logdet_solve(C, V):
    """``log|C|`` and the Mahalanobis terms ``v^T C^-1 v`` for rows of ``V``."""
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError("component covariance is singular") from exc
    Z = np.linalg.solve(L, np.atleast_2d(V).T)
    return 2.0 * np.sum(np.log(np.diag(L))), np.sum(Z**2, axis=0)


def _residuals(comp, inputs, outputs):
    E = log_map_many(comp.mean_out, outputs)
    return np.hstack([inputs - comp.mean_in, mandel_vec(E)])


def _log_pdf_many(comp, inputs, outputs):
    V = _residuals(comp, inputs, outputs)
    logdet, maha = _logdet_solve(comp.cov, V)
    return -0.5 * maha - 0.5 * (V.shape[1] * LOG2PI + logdet)


def log_pdf(point, comp):
    """Log density of ``point`` under one component.

    Parameters
    ----------
    point : SpdDatapoint
    comp : GmmSpdComponent

    Returns
    -------
    float
    """
    x = np.atleast_1d(np.asarray(point.input, dtype=float))
    X = check_spd(point.output, "output")
    if x.shape != comp.mean_in.shape or X.shape != comp.mean_out.shape:
        raise ShapeError("datapoint and component dimensions differ")
    return float(_log_pdf_many(comp, x[None], X[None])[0])


def _logsumexp(A, axis):
    m = np.max(A, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(A - m), axis=axis))


def _weighted_component(inputs, outputs, w, reg, mean_out=None, init_out=None):
    """M-step for one component with nonnegative weights ``w``.

    The output mean is the weighted Karcher mean unless ``mean_out`` is
    given. The covariance is the weighted residual covariance at that mean
    plus ``reg`` on the diagonal.
    """
    Nk = w.sum()
    mean_in = w @ inputs / Nk
    if mean_out is None:
        mean_out = karcher_mean(outputs, w, init=init_out, max_iter=200)
    V = np.hstack([inputs - mean_in, mandel_vec(log_map_many(mean_out, outputs))])
    cov = (V * w[:, None]).T @ V / Nk
    cov = 0.5 * (cov + cov.T) + reg * np.eye(len(cov))
    return mean_in, mean_out, cov


def _safeguarded_update(comp, inputs, outputs, w, reg):
    """Best of several M-step candidates by the expected log-likelihood.

    The Karcher mean does not maximize the weighted Mahalanobis objective of
    a full-covariance component, so the plain update can lower the
    likelihood. Candidates are the plain update, the update at the geodesic
    midpoint between old and new means, the covariance re-estimated at the
    old mean, and the unchanged component. Picking the one with the largest
    ``sum_i w_i log f(X_i)`` keeps the total log-likelihood non-decreasing.
    Returns the chosen (mean_in, mean_out, cov) and its candidate index.
    """
    q = lambda c: float(w @ _log_pdf_many(c, inputs, outputs))
    mi, mo, C = _weighted_component(inputs, outputs, w, reg, init_out=comp.mean_out)
    cands = [(mi, mo, C)]
    if not np.array_equal(mo, comp.mean_out):
        mid = exp_map(comp.mean_out, 0.5 * log_map(comp.mean_out, mo))
        cands.append(_weighted_component(inputs, outputs, w, reg, mean_out=mid))
    cands.append(_weighted_component(inputs, outputs, w, reg, mean_out=comp.mean_out))
    cands.append((comp.mean_in, comp.mean_out, comp.cov))
    scores = []
    for cand in cands:
        try:
            scores.append(q(GmmSpdComponent(comp.prior, *cand)))
        except NotSPDError:
            scores.append(-np.inf)
    best = int(np.argmax(scores))
    return cands[best], best


def em_fit(inputs, outputs, K, seed=0, reg=REG, tol=1e-6, max_iter=200, init="bins"):
    """Fit a GMM on (input, SPD output) data by expectation-maximization.

    Parameters
    ----------
    inputs : array_like, shape (N,) or (N, d_in)
    outputs : array_like, shape (N, D, D)
        SPD outputs.
    K : int
    seed : int
        Used only by ``init="random"``, which picks K distinct datapoints as
        initial means. The default ``init="bins"`` sorts the data by the first
        input dimension and splits it into K contiguous equal-count bins.
    reg : float
        Added to the diagonal of every covariance after each M-step.
    tol : float
        Stop when the log-likelihood gain drops below ``tol``.

    Returns
    -------
    GmmSpdModel
        ``log_likelihood`` holds the total log-likelihood after every E-step.
        ``diagnostics["reseeded"]`` lists ``(iteration, component)`` pairs
        that lost all their mass and were re-seeded, and
        ``diagnostics["safeguarded_steps"]`` counts component updates where
        the plain Karcher-mean update was replaced by a better candidate
        (see :func:`_safeguarded_update`).
    """
    X = _inputs(inputs)
    Y = np.asarray(outputs, dtype=float)
    N = len(X)
    if K < 1:
        raise ValueError("K must be at least 1")
    if N < 2 * K:
        raise InsufficientDataError(f"need at least {2 * K} datapoints for K={K}, got {N}")
    if Y.shape[0] != N or Y.ndim != 3:
        raise ShapeError(f"expected {N} output matrices, got shape {Y.shape}")
    for i, Yi in enumerate(Y):
        check_spd(Yi, f"output {i}")
    D, d_in = Y.shape[1], X.shape[1]

    if init == "bins":
        groups = np.array_split(np.argsort(X[:, 0], kind="stable"), K)
    elif init == "random":
        centers = np.random.default_rng(seed).choice(N, K, replace=False)
        d = np.array([[np.sum((X[i] - X[c]) ** 2) for c in centers] for i in range(N)])
        groups = [np.flatnonzero(d.argmin(1) == k) for k in range(K)]
        groups = [g if len(g) else np.array([c]) for g, c in zip(groups, centers)]
    else:
        raise ValueError(f"unknown init {init!r}")
    comps = []
    for g in groups:
        w = np.zeros(N)
        w[g] = 1.0
        mi, mo, C = _weighted_component(X, Y, w, reg)
        comps.append(GmmSpdComponent(len(g) / N, mi, mo, C))

    history, reseeded, safeguarded = [], [], 0
    converged = False
    for it in range(max_iter + 1):
        logp = np.column_stack([np.log(c.prior) + _log_pdf_many(c, X, Y) for c in comps])
        norm = _logsumexp(logp, 1)
        history.append(float(norm.sum()))
        if it > 0 and history[-1] - history[-2] < tol:
            converged = True
            break
        if it == max_iter:
            break
        R = np.exp(logp - norm[:, None])
        Nk = R.sum(0)
        new = []
        for k, c in enumerate(comps):
            if Nk[k] < 1e-9 * N:
                worst = int(np.argmin(norm))
                w = np.full(N, 1e-3)
                w[worst] = 1.0
                mi, _, C = _weighted_component(X, Y, w, reg)
                new.append(GmmSpdComponent(1.0 / N, X[worst].copy(), Y[worst].copy(), C))
                reseeded.append((it, k))
                continue
            (mi, mo, C), choice = _safeguarded_update(c, X, Y, R[:, k], reg)
            safeguarded += choice > 0
            new.append(GmmSpdComponent(Nk[k] / N, mi, mo, C))
        total = sum(c.prior for c in new)
        comps = [GmmSpdComponent(c.prior / total, c.mean_in, c.mean_out, c.cov) for c in new]
    diag = {"iterations": len(history) - 1, "converged": converged, "reseeded": reseeded,
            "safeguarded_steps": int(safeguarded)}
    return GmmSpdModel(tuple(comps), D, d_in, tuple(history), diag)


def responsibilities(model, inputs, outputs):
    """Posterior ``p(k | X_i)``, shape ``(N, K)``."""
    X = _inputs(inputs)
    Y = np.asarray(outputs, dtype=float)
    logp = np.column_stack([np.log(c.prior) + _log_pdf_many(c, X, Y) for c in model.components])
    return np.exp(logp - _logsumexp(logp, 1)[:, None])


def input_weights(model, t):
    """GMR weights ``h_k`` of the Euclidean input marginals at ``t``.

    Raises
    ------
    ExtrapolationError
        If every weighted density ``pi_k N(t | mu_k, S_II,k)`` is below 1e-300.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.shape != (model.d_in,):
        raise ShapeError(f"expected an input of length {model.d_in}, got {t.shape}")
    logw = np.empty(model.K)
    for k, c in enumerate(model.components):
        logdet, maha = _logdet_solve(c.cov_in, t - c.mean_in)
        logw[k] = np.log(c.prior) - 0.5 * (maha[0] + model.d_in * LOG2PI + logdet)
    if np.all(logw < np.log(1e-300)):
        raise ExtrapolationError(f"input {t.tolist()} is too far from every component")
    return np.exp(logw - _logsumexp(logw, 0))


def _eig_apply(X, fn):
    w, V = np.linalg.eigh(X)
    out = (V * fn(w)[..., None, :]) @ np.swapaxes(V, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _mandel_congruence(A):
    """Matrices of ``T -> A T A^T`` on Mandel vectors for a stack of ``A``."""
    D = A.shape[-1]
    basis = mandel_fold(np.eye(mandel_dim(D)))  # (Dt, D, D)
    At = np.swapaxes(A, -1, -2)
    img = A[..., None, :, :] @ basis @ At[..., None, :, :]  # (K, Dt, D, D)
    return np.swapaxes(mandel_vec(img), -1, -2)


class _Conditioner:
    """Stacked component parameters for repeated GMR queries.

    Transporting a covariance through its eigentensors (as
    :func:`~geomanip.spd.transport_block_cov` does) is the linear map
    ``C -> T C T^T`` with ``T = blockdiag(I, B)`` and ``B`` the Mandel matrix
    of the transport congruence, so it is applied in that form here.
    """

    def __init__(self, model):
        self.d = model.d_in
        self.means = np.array([c.mean_out for c in model.components])
        self.mu_in = np.array([c.mean_in for c in model.components])
        self.covs = np.array([c.cov for c in model.components])
        self.half = _eig_apply(self.means, np.sqrt)
        self.ihalf = _eig_apply(self.means, lambda w: 1.0 / np.sqrt(w))

    def terms(self, t, mean, active):
        d = self.d
        s = _eig_apply(mean, np.sqrt)
        si = _eig_apply(mean, lambda w: 1.0 / np.sqrt(w))
        logs = s @ _eig_apply(si @ self.means[active] @ si, np.log) @ s
        hi = self.ihalf[active]
        A = self.half[active] @ _eig_apply(hi @ mean @ hi, np.sqrt) @ hi
        B = _mandel_congruence(A)
        C = self.covs[active]
        C_OI = B @ C[:, d:, :d]
        C_OO = B @ C[:, d:, d:] @ np.swapaxes(B, -1, -2)
        gain = np.swapaxes(np.linalg.solve(C[:, :d, :d], np.swapaxes(C_OI, -1, -2)), -1, -2)
        deltas = mandel_vec(logs) + (gain @ (t - self.mu_in[active])[..., None])[..., 0]
        for k, idx in enumerate(np.flatnonzero(active)):
            if np.array_equal(self.means[idx], mean):
                deltas[k] = (gain[k] @ (t - self.mu_in[idx])[:, None])[:, 0]
        return deltas, C_OO - gain @ np.swapaxes(C_OI, -1, -2)


def gmr_condition(model, t, tol=1e-8, max_iter=100, subtract_mean_outer=False):
    """Condition the model on the input ``t``.

    The output mean is found by the fixed-point iteration
    ``M <- Exp_M(sum_k h_k Delta_k)``, starting at the output mean of the
    component with the largest ``h_k``, where
    ``Delta_k = Log_M(Xi_k) + S_OI S_II^-1 (t - mu_k)`` is computed with the
    component covariance transported to the tangent space at ``M``.
    Components with ``h_k < 1e-14`` are skipped.

    Parameters
    ----------
    model : GmmSpdModel
    t : float or array_like, shape (d_in,)
    tol : float
        Stop when the Frobenius norm of the update is below ``tol``.
    subtract_mean_outer : bool
        Also subtract ``mandel_vec(M) mandel_vec(M)^T`` from the output
        covariance. Off by default; at convergence the tangent-space mean is
        zero and nothing needs to be subtracted.

    Returns
    -------
    mean : ndarray, shape (D, D)
    cov : ndarray, shape (D, D, D, D)
        Output covariance in the tangent space at ``mean``, clamped to PSD.
    h : ndarray, shape (K,)

    Raises
    ------
    ExtrapolationError
    ConvergenceError
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    h = input_weights(model, t)
    cond = _Conditioner(model)
    active = h >= 1e-14
    ha = h[active]
    mean = model.components[int(np.argmax(h))].mean_out
    res = np.inf
    for _ in range(max_iter):
        deltas, _ = cond.terms(t, mean, active)
        u = ha @ deltas
        res = float(np.linalg.norm(u))
        if res < tol:
            break
        mean = exp_map(mean, mandel_fold(u))
    else:
        raise ConvergenceError(
            f"GMR mean did not converge in {max_iter} iterations (residual {res:.3e})", residual=res
        )
    deltas, covs = cond.terms(t, mean, active)
    S = np.einsum("k,kij->ij", ha, covs + deltas[:, :, None] * deltas[:, None, :])
    if subtract_mean_outer:
        m = mandel_vec(mean)
        S -= np.outer(m, m)
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    S = (V * np.maximum(w, 0.0)) @ V.T
    return mean, mandel_fold4(0.5 * (S + S.T)), h


# serialization


def to_document(model):
    """Plain JSON-compatible dict with a ``schema_version`` field."""
    return {
        "schema_version": SCHEMA_VERSION,
        "type": "gmm_spd",
        "K": model.K,
        "D": model.D,
        "d_in": model.d_in,
        "priors": [float(c.prior) for c in model.components],
        "means_in": [c.mean_in.tolist() for c in model.components],
        "means_out": [c.mean_out.tolist() for c in model.components],
        "covariances": [c.cov.tolist() for c in model.components],
        "log_likelihood": [float(v) for v in model.log_likelihood],
    }


def _field(doc, key):
    if key not in doc:
        raise SchemaError(f"model document is missing {key!r}")
    return doc[key]


def from_document(doc):
    """Rebuild and validate a model from :func:`to_document` output.

    Raises
    ------
    SchemaError
        On a version mismatch, missing or malformed fields, K < 1, priors
        that do not sum to one, non-SPD output means or non-PSD covariances.
    """
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a mapping")
    version = _field(doc, "schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported model schema_version {version!r}, expected {SCHEMA_VERSION}")
    if _field(doc, "type") != "gmm_spd":
        raise SchemaError(f"unexpected model type {doc['type']!r}")
    try:
        K, D, d_in = int(_field(doc, "K")), int(_field(doc, "D")), int(_field(doc, "d_in"))
        priors = np.asarray(_field(doc, "priors"), dtype=float)
        means_in = np.asarray(_field(doc, "means_in"), dtype=float)
        means_out = np.asarray(_field(doc, "means_out"), dtype=float)
        covs = np.asarray(_field(doc, "covariances"), dtype=float)
        ll = tuple(float(v) for v in doc.get("log_likelihood", []))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"malformed model document: {exc}") from exc
    if K < 1:
        raise SchemaError("model must have at least one component")
    P = d_in + mandel_dim(D)
    expected = {"priors": (K,), "means_in": (K, d_in), "means_out": (K, D, D), "covariances": (K, P, P)}
    for name, arr in zip(expected, (priors, means_in, means_out, covs)):
        if arr.shape != expected[name]:
            raise SchemaError(f"{name} has shape {arr.shape}, expected {expected[name]}")
    if np.any(priors <= 0) or abs(priors.sum() - 1.0) > 1e-10:
        raise SchemaError("priors must be positive and sum to 1")
    comps = []
    for k in range(K):
        try:
            mean_out = check_spd(means_out[k], f"means_out[{k}]")
            check_spd(covs[k], f"covariances[{k}]")
        except NotSPDError as exc:
            raise SchemaError(str(exc)) from exc
        comps.append(GmmSpdComponent(float(priors[k]), means_in[k], mean_out, covs[k]))
    return GmmSpdModel(tuple(comps), D, d_in, ll)


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(to_document(model), fh, indent=1)


def load_model(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not a valid JSON document ({exc})") from exc
    return from_document(doc)
