import numpy as np
import pytest
from numpy.testing import assert_allclose

from geomanip.errors import NotSPDError
from geomanip.kinematics import PlanarChain, fk, planar_jacobian
from geomanip.manipulability import manipulability, manipulability_jacobian
from geomanip.spd import distance, log_map
from geomanip.tensor import mandel_fold, mandel_matricize, mandel_vec, outer
from geomanip.tracking import (
    BASELINES,
    Gains,
    accel_track,
    baseline_track,
    cholesky_derivative,
    damped_pinv,
    gain_from_precision,
    gain_matrix,
    index_gradient,
    manipulability_index,
    nullspace_secondary,
    stein_cost,
    stein_gradient,
    velocity_track_main,
    velocity_track_redundant,
)

from conftest import random_spd
from test_kinematics import central_diff, random_chain
from test_manipulability import random_regular_q

FOUR = PlanarChain(lengths=[1.0] * 4)
NOMINAL = np.array([0.2, 0.8, 0.8, 0.8])


def test_damped_pinv(rng):
    assert_allclose(damped_pinv(np.eye(3)), np.eye(3))
    A = rng.normal(size=(3, 5))
    assert_allclose(A @ damped_pinv(A) @ A, A, atol=1e-10)
    B = rng.normal(size=(4, 2)) @ rng.normal(size=(2, 5))
    Bp = damped_pinv(B)
    v = np.linalg.svd(B)[2][-1]  # orthogonal to the row space of B
    assert np.linalg.norm(B @ v) < 1e-10
    u = np.linalg.svd(B)[0][:, -1]  # orthogonal to the column space
    assert np.linalg.norm(Bp @ u) < 1e-10
    s = np.linalg.svd(A, compute_uv=False)
    sd = np.linalg.svd(damped_pinv(A, damping=0.5), compute_uv=False)
    assert_allclose(np.sort(sd), np.sort(s / (s**2 + 0.25)), rtol=1e-12)
    assert_allclose(damped_pinv(np.zeros((2, 3))), np.zeros((3, 2)))


def test_gain_matrix_forms():
    assert_allclose(gain_matrix(2.0, 3), 2 * np.eye(3))
    assert_allclose(gain_matrix([1.0, 2.0, 3.0], 3), np.diag([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        gain_matrix(-1.0, 3)
    with pytest.raises(ValueError):
        gain_matrix(-np.eye(3), 3)
    with pytest.raises(ValueError):
        Gains(K_x=-1.0)


def test_zero_error_commands_are_exactly_zero(rng):
    chain = random_chain(rng, 4)
    q = random_regular_q(rng, 4)
    M = manipulability(chain, q)
    x = fk(chain, q)[:2]
    g = Gains(K_M=3.0, K_x=2.0)
    assert np.array_equal(velocity_track_main(chain, q, M, g).qdot, np.zeros(4))
    assert np.array_equal(velocity_track_redundant(chain, q, x, M, g).qdot, np.zeros(4))
    assert np.array_equal(velocity_track_redundant(chain, q, x, M, g, prioritized=False).qdot, np.zeros(4))
    assert np.array_equal(nullspace_secondary(chain, q, M, g, np.zeros(4)).qdot, np.zeros(4))
    assert np.array_equal(accel_track(chain, q, np.zeros(4), M, np.zeros((2, 2)), g).qddot, np.zeros(4))
    for method in BASELINES:
        assert np.array_equal(baseline_track(method, chain, q, M, g).qdot, np.zeros(4)), method
        assert np.array_equal(baseline_track(method, chain, q, M, g, x_target=x).qdot, np.zeros(4)), method


def test_main_task_first_order_rate(rng):
    # the commanded motion produces Mdot = K_M Log_M(target) to first order
    chain = random_chain(rng, 4)
    q = random_regular_q(rng, 4)
    target = manipulability(chain, q + 0.2)
    cmd = velocity_track_main(chain, q, target, Gains(K_M=2.0))
    Mdot = manipulability_jacobian(chain, q) @ cmd.qdot
    assert_allclose(Mdot, 2.0 * log_map(manipulability(chain, q), target), atol=1e-8)
    assert cmd.rank == 3
    assert_allclose(cmd.distance, distance(manipulability(chain, q), target))


def test_gain_equivariance(rng):
    q = random_regular_q(rng, 4)
    target = manipulability(FOUR, q + 0.3)
    base = velocity_track_main(FOUR, q, target, Gains(K_M=1.5)).qdot
    for c in (2.0, 0.5, 4.0):
        assert np.array_equal(velocity_track_main(FOUR, q, target, Gains(K_M=1.5 * c)).qdot, c * base)


def test_redundancy_projector(rng):
    for _ in range(50):
        chain = random_chain(rng, 4)
        q = random_regular_q(rng, 4)
        J = planar_jacobian(chain, q)
        N = np.eye(4) - damped_pinv(J) @ J
        assert np.abs(J @ N @ rng.normal(size=4)).max() < 1e-10
        target = manipulability(chain, q + rng.uniform(-0.3, 0.3, 4))
        x = fk(chain, q)[:2]
        for prioritized in (True, False):
            cmd = velocity_track_redundant(chain, q, x, target, Gains(), prioritized=prioritized, damping=0.05)
            assert cmd.residuals["task_projector"] < 1e-10
            # with the tip on target, the command does not move the tip
            assert np.abs(J @ cmd.qdot).max() < 1e-10


def test_manipulability_nullspace_projector(rng):
    chain = random_chain(rng, 6)
    for _ in range(50):
        q = random_regular_q(rng, 6)
        target = manipulability(chain, q + 0.1)
        qN = rng.normal(size=6)
        cmd = nullspace_secondary(chain, q, target, Gains(), qN)
        A = mandel_matricize(manipulability_jacobian(chain, q))
        extra = cmd.qdot - velocity_track_main(chain, q, target, Gains()).qdot
        assert np.abs(A.T @ extra).max() < 1e-10
        assert cmd.residuals["manipulability_projector"] < 1e-10
    q = random_regular_q(rng, 6)
    target = manipulability(chain, q + 0.1)
    assert np.array_equal(nullspace_secondary(chain, q, target, Gains(), np.zeros(6)).qdot,
                          velocity_track_main(chain, q, target, Gains()).qdot)


def simulate_main(q0, target, K=5.0, dt=0.01, steps=500, damping=0.0):
    q = q0.copy()
    ds = []
    for _ in range(steps):
        cmd = velocity_track_main(FOUR, q, target, Gains(K_M=K), damping=damping)
        ds.append(cmd.distance)
        if cmd.distance < 1e-3:
            break
        q = q + dt * cmd.qdot
    return np.array(ds), q


def test_lyapunov_decrease(rng):
    for _ in range(5):
        target = manipulability(FOUR, NOMINAL + rng.uniform(-0.2, 0.2, 4))
        ds, _ = simulate_main(NOMINAL, target, K=5.0, dt=0.01)
        assert ds[-1] < 1e-3
        assert np.all(np.diff(ds) < 0)


def test_reachable_target_converges(rng):
    target = manipulability(FOUR, NOMINAL + np.array([0.3, -0.2, 0.25, -0.3]))
    ds, q = simulate_main(NOMINAL, target)
    assert distance(manipulability(FOUR, q), target) < 1e-2


def test_nullspace_secondary_holds_first_joint():
    chain = PlanarChain(lengths=[0.6] * 6)
    q0 = np.array([0.1, 0.5, 0.5, 0.5, 0.5, 0.5])
    target = manipulability(chain, q0 + np.array([0.4, -0.3, 0.2, 0.3, -0.2, 0.1]))
    q1_ref = 0.1
    finals = {}
    for gain in (0.0, 2.0):
        q = q0.copy()
        for _ in range(1500):
            qN = np.zeros(6)
            qN[0] = gain * (q1_ref - q[0])
            cmd = nullspace_secondary(chain, q, target, Gains(K_M=2.0), qN)
            assert cmd.residuals["manipulability_projector"] < 1e-10
            q = q + 0.01 * cmd.qdot
        finals[gain] = (distance(manipulability(chain, q), target), abs(q[0] - q1_ref))
    assert finals[2.0][0] < 1e-2
    assert finals[2.0][1] < finals[0.0][1]


def test_gain_from_precision():
    I2 = np.eye(2)
    S = sum(outer(B, B) for B in mandel_fold(np.eye(3)))
    assert_allclose(gain_from_precision(S, kappa=2.0), 2.0 * np.eye(3), rtol=1e-9)
    E = mandel_fold(np.eye(3))
    S = outer(E[0], E[0]) + 10.0 * outer(E[1], E[1]) + outer(E[2], E[2])
    K = gain_from_precision(S, mode="diagonal")
    assert_allclose(K[0, 0] / K[1, 1], 10.0, rtol=1e-8)
    assert_allclose(np.trace(K), 3.0)
    assert_allclose(gain_from_precision(S, reference_trace=1.0), 3.0 * np.diag([1.0, 0.1, 1.0]), rtol=1e-8)
    # rank-deficient covariances are regularized, indefinite ones rejected
    assert np.all(np.isfinite(gain_from_precision(outer(I2, I2))))
    with pytest.raises(NotSPDError):
        gain_from_precision(-S)
    with pytest.raises(ValueError):
        gain_from_precision(S, mode="bogus")


def test_gain_from_precision_psd(rng):
    for _ in range(20):
        X = rng.normal(size=(8, 3))
        S = sum(outer(mandel_fold(x), mandel_fold(x)) for x in X)
        for mode in ("full", "diagonal"):
            assert np.linalg.eigvalsh(gain_from_precision(S, mode=mode)).min() > 0


def test_cholesky_derivative(rng):
    for _ in range(10):
        M = random_spd(rng, 3)
        dM = rng.normal(size=(3, 3))
        dM = dM + dM.T
        h = 1e-6
        fd = (np.linalg.cholesky(M + h * dM) - np.linalg.cholesky(M - h * dM)) / (2 * h)
        assert_allclose(cholesky_derivative(np.linalg.cholesky(M), dM), fd, atol=1e-7)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 8])
def test_stein_gradient_finite_difference(rng, n):
    chain = random_chain(rng, n)
    for _ in range(30 if n == 4 else 20):
        q = random_regular_q(rng, n)
        target = random_spd(rng)
        f = lambda x: np.array([stein_cost(manipulability(chain, x), target)])
        fd = central_diff(f, q, 1e-6)[0]
        assert np.abs(stein_gradient(chain, q, target) - fd).max() < 1e-6


def test_stein_gradient_vanishes_at_target(rng):
    q = random_regular_q(rng, 4)
    M = manipulability(FOUR, q)
    assert_allclose(stein_cost(M, M), 0.0, atol=1e-14)
    assert np.array_equal(stein_gradient(FOUR, q, M), np.zeros(4))
    # analytic stationarity without the shortcut
    assert np.abs(stein_gradient(FOUR, q, M * (1 + 1e-15))).max() < 1e-10


def test_volume_index_two_link():
    two = PlanarChain(lengths=[1.0, 1.0])
    for q in ([0.3, 0.7], [1.2, -2.0], [0.0, np.pi / 2]):
        assert_allclose(manipulability_index("volume", two, q), abs(np.sin(q[1])), atol=1e-12)
        assert abs(index_gradient("volume", two, q)[0]) < 1e-12
    assert abs(index_gradient("volume", two, [0.4, np.pi / 2])[1]) < 1e-12


@pytest.mark.parametrize("n", [2, 3, 4, 5, 8])
def test_index_gradients_finite_difference(rng, n):
    chain = random_chain(rng, n)
    for _ in range(30 if n == 4 else 20):
        q = random_regular_q(rng, n)
        u = rng.normal(size=2)
        for method in ("volume", "compatibility"):
            f = lambda x: np.array([manipulability_index(method, chain, x, u)])
            fd = central_diff(f, q, 1e-6)[0]
            g = index_gradient(method, chain, q, u)
            assert np.abs(g - fd).max() < 1e-6 * max(1.0, np.abs(g).max())


def test_compatibility_along_eigenvector(rng):
    q = random_regular_q(rng, 4)
    M = manipulability(FOUR, q)
    w, V = np.linalg.eigh(M)
    for i in range(2):
        assert_allclose(manipulability_index("compatibility", FOUR, q, V[:, i]), w[i], rtol=1e-12)
    with pytest.raises(ValueError):
        manipulability_index("compatibility", FOUR, q)


def test_baselines_run_and_differ(rng):
    q = random_regular_q(rng, 4)
    target = manipulability(FOUR, q + 0.4)
    cmds = {m: baseline_track(m, FOUR, q, target, Gains()).qdot for m in BASELINES}
    geo = velocity_track_main(FOUR, q, target, Gains()).qdot
    for m, v in cmds.items():
        assert np.all(np.isfinite(v))
        assert not np.allclose(v, geo), m
    with pytest.raises(ValueError):
        baseline_track("bogus", FOUR, q, target, Gains())
    with pytest.raises(NotSPDError):
        baseline_track("cholesky", FOUR, q, -target, Gains())


def test_cholesky_jacobian_rate(rng):
    # pinv(Jchol^T) vech(dL) moves L along dL to first order
    from geomanip.tracking import cholesky_jacobian

    q = random_regular_q(rng, 4)
    target = manipulability(FOUR, q + 0.2)
    cmd = baseline_track("cholesky_jacobian", FOUR, q, target, Gains(K_M=1.0))
    L = np.linalg.cholesky(manipulability(FOUR, q))
    Jc = cholesky_jacobian(L, manipulability_jacobian(FOUR, q))
    dL = np.linalg.cholesky(target) - L
    assert_allclose(Jc @ cmd.qdot, dL, atol=1e-8)
