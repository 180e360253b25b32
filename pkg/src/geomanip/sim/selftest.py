"""Quick manifold and finite-difference checks for ``geomanip validate --self-test``."""

import numpy as np

from .. import kinematics as kin
from ..manipulability import KINDS, manipulability, manipulability_jacobian, manipulability_jacobian_dt
from ..spd import distance, exp_map, log_map, metric_spectrum, transport_cov4, transport_sym, inner_product
from ..tensor import covariance_tensor, is_covariance_tensor
from ..tracking import index_gradient, manipulability_index, stein_cost, stein_gradient


def _spd(rng, D=2):
    A = rng.normal(size=(D, D))
    return A @ A.T + 0.5 * np.eye(D)


def _sym(rng, D=2):
    A = rng.normal(size=(D, D))
    return 0.5 * (A + A.T)


def _fd(f, q, h=1e-6):
    cols = []
    for k in range(len(q)):
        e = np.zeros(len(q))
        e[k] = h
        cols.append((f(q + e) - f(q - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _regular_q(rng, chain):
    while True:
        q = rng.uniform(-np.pi, np.pi, chain.n)
        s = np.linalg.svd(kin.planar_jacobian(chain, q), compute_uv=False)
        if s[-1] > 0.1 * s[0]:
            return q


def manifold_checks(rng, cases=100):
    worst = {"exp_log": 0.0, "distance_symmetry": 0.0, "affine_invariance": 0.0, "transport_isometry": 0.0,
             "cov_transport": 0.0}
    for _ in range(cases):
        S, P, L = _spd(rng), _spd(rng), _sym(rng)
        worst["exp_log"] = max(worst["exp_log"], np.abs(log_map(S, exp_map(S, L)) - L).max())
        worst["distance_symmetry"] = max(worst["distance_symmetry"], abs(distance(S, P) - distance(P, S)))
        G = rng.normal(size=(2, 2)) + 2 * np.eye(2)
        worst["affine_invariance"] = max(worst["affine_invariance"],
                                         abs(distance(G @ S @ G.T, G @ P @ G.T) - distance(S, P)))
        L2 = _sym(rng)
        a = inner_product(S, L, L2)
        b = inner_product(P, transport_sym(S, P, L), transport_sym(S, P, L2))
        worst["transport_isometry"] = max(worst["transport_isometry"], abs(a - b) / max(1.0, abs(a)))
        X = np.array([exp_map(S, _sym(rng)) for _ in range(6)])
        C = covariance_tensor(np.array([log_map(S, x) for x in X]), np.zeros((2, 2)))
        Ct = transport_cov4(S, P, C)
        err = 0.0 if is_covariance_tensor(Ct) else np.inf
        err = max(err, np.abs(metric_spectrum(S, C) - metric_spectrum(P, Ct)).max() / max(1.0, np.abs(C).max()))
        worst["cov_transport"] = max(worst["cov_transport"], err)
    tol = {"exp_log": 1e-10, "distance_symmetry": 1e-12, "affine_invariance": 1e-10, "transport_isometry": 1e-10,
           "cov_transport": 1e-10}
    return [(f"manifold/{k}", v <= tol[k], v) for k, v in worst.items()]


def derivative_checks(rng, sizes=(2, 3, 4, 5), configs=5):
    out = []
    for n in sizes:
        chain = kin.PlanarChain(rng.uniform(0.5, 1.5, n), rng.uniform(0.5, 2.0, n))
        err = {"jacobian": 0.0, "jacobian_dq": 0.0, "jacobian_dq2": 0.0, "inertia_dq": 0.0, "manipulability_jacobian": 0.0,
               "jacobian_dt": 0.0, "index_gradients": 0.0}
        for _ in range(configs):
            q = _regular_q(rng, chain)
            # hybrid rows: angular (0..2) then linear (3..5); fk gives (x1, x2, phi)
            fd_x = _fd(lambda x: kin.fk(chain, x), q)
            err["jacobian"] = max(err["jacobian"], np.abs(kin.jacobian(chain, q)[[3, 4, 2]] - fd_x).max())
            err["jacobian_dq"] = max(err["jacobian_dq"], np.abs(kin.jacobian_dq(chain, q) - _fd(lambda x: kin.jacobian(chain, x), q)).max())
            err["jacobian_dq2"] = max(err["jacobian_dq2"], np.abs(kin.jacobian_dq2(chain, q) - _fd(lambda x: kin.jacobian_dq(chain, x), q)).max())
            err["inertia_dq"] = max(err["inertia_dq"], np.abs(kin.inertia_dq(chain, q) - _fd(lambda x: kin.inertia(chain, x), q)).max())
            for kind in KINDS:
                fd = _fd(lambda x: manipulability(chain, x, kind), q)
                rel = np.abs(manipulability_jacobian(chain, q, kind) - fd).max() / max(1.0, np.abs(fd).max())
                err["manipulability_jacobian"] = max(err["manipulability_jacobian"], rel)
            qd = rng.normal(size=n)
            h = 1e-6
            fd = (manipulability_jacobian(chain, q + h * qd) - manipulability_jacobian(chain, q - h * qd)) / (2 * h)
            err["jacobian_dt"] = max(err["jacobian_dt"], np.abs(manipulability_jacobian_dt(chain, q, qd) - fd).max())
            T, u = _spd(rng), rng.normal(size=2)
            g = [stein_gradient(chain, q, T), index_gradient("volume", chain, q), index_gradient("compatibility", chain, q, u)]
            f = [lambda x: np.array([stein_cost(manipulability(chain, x), T)]),
                 lambda x: np.array([manipulability_index("volume", chain, x)]),
                 lambda x: np.array([manipulability_index("compatibility", chain, x, u)])]
            for gi, fi in zip(g, f):
                err["index_gradients"] = max(err["index_gradients"], np.abs(gi - _fd(fi, q)[0]).max())
        tol = {"jacobian": 1e-6, "jacobian_dq": 1e-5, "jacobian_dq2": 1e-4, "inertia_dq": 1e-5, "manipulability_jacobian": 1e-5,
               "jacobian_dt": 1e-4, "index_gradients": 1e-6}
        out += [(f"derivatives/n={n}/{k}", v <= tol[k], v) for k, v in err.items()]
    return out


def run(seed=0, verbose=True, out=print):
    """Run all checks; returns True when every check passes."""
    rng = np.random.default_rng(seed)
    results = manifold_checks(rng) + derivative_checks(rng)
    for name, ok, err in results:
        if verbose or not ok:
            out(f"{'PASS' if ok else 'FAIL'} {name} (max error {err:.2e})")
    return all(ok for _, ok, _ in results)
