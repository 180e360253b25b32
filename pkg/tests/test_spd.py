import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from geomanip.errors import ConvergenceError, NotSPDError, NotSymmetricError, ShapeError
from geomanip.spd import (
    check_spd,
    distance,
    exp_map,
    geodesic,
    inner_product,
    karcher_mean,
    log_map,
    metric_spectrum,
    nearest_spd,
    transport_block_cov,
    transport_cov4,
    transport_sym,
)
from geomanip.tensor import covariance_tensor, is_covariance_tensor, mandel_unfold4, outer

from conftest import random_spd, random_sym

seeds = st.integers(0, 2**32 - 1)


def test_check_spd_rejects():
    with pytest.raises(NotSPDError):
        check_spd(np.diag([1.0, 0.0]))
    with pytest.raises(NotSPDError):
        check_spd(np.diag([1.0, 1e-13]))
    with pytest.raises(NotSPDError):
        check_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        check_spd(np.ones((2, 3)))
    check_spd(np.diag([1.0, 1e-11]))


def test_nearest_spd_floor():
    X = nearest_spd(np.diag([2.0, -1.0]))
    check_spd(X)
    assert_allclose(X[0, 0], 2.0)


def test_exp_log_examples(rng):
    S = random_spd(rng)
    assert_allclose(exp_map(S, np.zeros((2, 2))), S, atol=1e-14)
    assert_allclose(exp_map(np.eye(2), np.diag([np.log(4), 0.0])), np.diag([4.0, 1.0]), atol=1e-14)
    assert_allclose(log_map(S, S), 0.0)
    assert_allclose(log_map(np.eye(2), np.diag([4.0, 1.0])), np.diag([np.log(4), 0.0]), atol=1e-14)
    with pytest.raises(NotSymmetricError):
        exp_map(S, np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(NotSPDError):
        log_map(S, -S)


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(2, 4))
def test_exp_log_inverse(seed, D):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, D)
    L = random_sym(rng, D)
    L *= min(1.0, 5.0 / np.linalg.norm(L))
    assert_allclose(log_map(S, exp_map(S, L)), L, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(2, 4))
def test_log_norm_equals_distance(seed, D):
    rng = np.random.default_rng(seed)
    A, B = random_spd(rng, D), random_spd(rng, D)
    L = log_map(A, B)
    assert_allclose(inner_product(A, L, L), distance(A, B) ** 2, rtol=1e-10, atol=1e-12)


def test_distance_examples(rng):
    A = random_spd(rng)
    assert distance(A, A) == 0.0
    assert_allclose(distance(np.eye(2), np.diag([4.0, 1.0])), np.log(4.0), rtol=1e-14)
    assert_allclose(np.log(4.0), 1.38629, atol=1e-5)
    with pytest.raises(ShapeError):
        distance(np.eye(2), np.eye(3))


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(2, 4))
def test_distance_properties(seed, D):
    rng = np.random.default_rng(seed)
    A, B = random_spd(rng, D), random_spd(rng, D)
    W = rng.normal(size=(D, D)) + 2 * np.eye(D)
    assert_allclose(distance(A, B), distance(B, A), rtol=1e-10)
    assert_allclose(distance(W @ A @ W.T, W @ B @ W.T), distance(A, B), rtol=1e-9, atol=1e-10)
    assert distance(A, A.copy()) < 1e-12


def test_inner_product_examples(rng):
    I = np.eye(2)
    assert_allclose(inner_product(I, I, I), 2.0)
    S = random_spd(rng)
    T1, T2 = random_sym(rng), random_sym(rng)
    assert_allclose(inner_product(S, T1, T2), inner_product(S, T2, T1), rtol=1e-12)
    assert inner_product(S, T1, T1) > 0
    assert inner_product(S, np.zeros((2, 2)), np.zeros((2, 2))) == 0.0
    with pytest.raises(ShapeError):
        inner_product(S, np.eye(3), np.eye(3))


@pytest.mark.parametrize("along_geodesic", [True, False])
def test_transport_sym(rng, along_geodesic):
    S, L = random_spd(rng), random_spd(rng)
    T = random_sym(rng)
    assert_allclose(transport_sym(S, S, T, along_geodesic), T, atol=1e-12)
    assert_allclose(transport_sym(np.eye(2), np.diag([4.0, 1.0]), np.eye(2), along_geodesic), np.diag([4.0, 1.0]), atol=1e-14)
    assert_allclose(transport_sym(S, L, np.zeros((2, 2)), along_geodesic), 0.0)


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(2, 4), st.booleans())
def test_transport_is_isometry(seed, D, along_geodesic):
    rng = np.random.default_rng(seed)
    S, L = random_spd(rng, D), random_spd(rng, D)
    T1, T2 = random_sym(rng, D), random_sym(rng, D)
    a = inner_product(S, T1, T2)
    b = inner_product(L, transport_sym(S, L, T1, along_geodesic), transport_sym(S, L, T2, along_geodesic))
    assert_allclose(b, a, rtol=1e-9, atol=1e-10)


def test_geodesic_transport_of_log_map(rng):
    # transporting Log_A(B) to B along the geodesic gives -Log_B(A)
    A, B = random_spd(rng, 3), random_spd(rng, 3)
    assert_allclose(transport_sym(A, B, log_map(A, B)), -log_map(B, A), atol=1e-10)


def test_transport_cov4(rng):
    S, L = random_spd(rng), random_spd(rng)
    samples = np.stack([random_sym(rng) for _ in range(6)])
    C = covariance_tensor(samples, np.zeros((2, 2)))
    assert_allclose(transport_cov4(S, S, C), C, atol=1e-10)
    T = random_sym(rng)
    assert_allclose(transport_cov4(S, L, outer(T, T)), outer(transport_sym(S, L, T), transport_sym(S, L, T)), atol=1e-10)
    out = transport_cov4(S, L, C)
    assert is_covariance_tensor(out)
    assert_allclose(metric_spectrum(L, out), metric_spectrum(S, C), atol=1e-10)
    # the spectrum of the raw unfolding changes in general
    assert abs(np.trace(mandel_unfold4(out)) - np.trace(mandel_unfold4(C))) > 1e-6
    with pytest.raises(NotSPDError):
        transport_cov4(S, L, -C)


def test_transport_block_cov_keeps_input_block(rng):
    S, L = random_spd(rng), random_spd(rng)
    X = rng.normal(size=(20, 4))
    C = np.cov(X.T)
    out = transport_block_cov(S, L, C, d_in=1)
    assert_allclose(out[0, 0], C[0, 0], rtol=1e-12)
    assert np.linalg.eigvalsh(out).min() > 0


def test_geodesic_midpoint(rng):
    for _ in range(10):
        A, B = random_spd(rng, 3), random_spd(rng, 3)
        mid = geodesic(A, B, 0.5)
        assert_allclose(distance(A, mid), distance(B, mid), rtol=1e-10)
        assert_allclose(distance(A, mid), 0.5 * distance(A, B), rtol=1e-10)


def test_karcher_mean_examples(rng):
    A = random_spd(rng)
    assert_allclose(karcher_mean(np.stack([A, A, A])), A)
    m = karcher_mean(np.stack([np.eye(2), np.diag([np.e**2, 1.0])]))
    assert_allclose(m, np.diag([np.e, 1.0]), atol=1e-9)


def test_karcher_mean_first_order_condition(rng):
    for _ in range(5):
        P = np.stack([random_spd(rng, 3, spread=1.5) for _ in range(5)])
        w = rng.dirichlet(np.ones(5))
        mu = karcher_mean(P, w)
        g = sum(wi * log_map(mu, p) for wi, p in zip(w, P))
        assert np.linalg.norm(g) < 1e-8


def test_karcher_mean_reports_nonconvergence(rng):
    P = np.stack([random_spd(rng, 3, spread=2.0) for _ in range(5)])
    with pytest.raises(ConvergenceError) as exc:
        karcher_mean(P, max_iter=1)
    assert exc.value.residual > 1e-8
