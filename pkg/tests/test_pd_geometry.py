"""Geometry of positive-definite Hermitian matrices."""
import numpy as np
import pytest

from twistdiff.errors import NotPositiveDefiniteError
from twistdiff.pd_geometry import (check_pd, congruence_act, distance,
                                   exp_map, geodesic, inner_product, log_map,
                                   pd_exp, pd_log)

rng = np.random.default_rng(11)


def random_pd(n):
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return g @ g.conj().T + 0.1 * np.eye(n)


def random_herm(n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2


def test_congruence_identity():
    A = random_pd(3)
    assert np.allclose(congruence_act(np.eye(3), A), A)


def test_congruence_diag():
    out = congruence_act(np.diag([2.0, 1.0]), np.eye(2))
    assert np.allclose(out, np.diag([4.0, 1.0]))


def test_congruence_permutation():
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = congruence_act(P, np.diag([3.0, 7.0]))
    assert np.allclose(out, np.diag([7.0, 3.0]))


def test_congruence_stays_pd():
    for _ in range(20):
        n = int(rng.integers(1, 5))
        g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        g += np.eye(n)  # keep comfortably invertible
        out = congruence_act(g, random_pd(n))
        assert np.min(np.linalg.eigvalsh(out)) > 0


def test_inner_product_values():
    A = np.diag([1.0, -1.0])
    assert inner_product(np.eye(2), A, A) == pytest.approx(2.0)
    assert inner_product(np.diag([2.0, 2.0]), np.eye(2),
                         np.eye(2)) == pytest.approx(0.5)
    B = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert inner_product(np.eye(2), B, B) == pytest.approx(2.0)


def test_geodesic_endpoints_and_midpoint():
    H0, H1 = random_pd(3), random_pd(3)
    assert np.allclose(geodesic(H0, H0, 0.37), H0)
    assert np.allclose(geodesic(H0, H1, 1.0), H1)
    mid = geodesic(np.eye(2), np.diag([np.e ** 2, 1.0]), 0.5)
    assert np.allclose(mid, np.diag([np.e, 1.0]))


def test_distance_values():
    H = random_pd(2)
    assert distance(H, H) == pytest.approx(0.0, abs=1e-12)
    d = distance(np.eye(2), np.diag([np.e, 1.0 / np.e]))
    assert d == pytest.approx(np.sqrt(2.0), rel=1e-12)


def test_distance_invariance():
    A, B = random_pd(3), random_pd(3)
    g = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) + np.eye(3)
    dA = distance(A, B)
    dB = distance(congruence_act(g, A), congruence_act(g, B))
    assert dA == pytest.approx(dB, rel=1e-10)


def test_exp_log_pair():
    assert np.allclose(pd_exp(np.zeros((2, 2))), np.eye(2))
    assert np.allclose(pd_exp(np.diag([1.0, -1.0])),
                       np.diag([np.e, 1.0 / np.e]))
    for _ in range(10):
        h = random_herm(3)
        assert np.max(np.abs(pd_log(pd_exp(h)) - h)) < 1e-12


def test_exp_log_maps_roundtrip():
    P, Q = random_pd(3), random_pd(3)
    V = log_map(P, Q)
    assert np.max(np.abs(exp_map(P, V) - Q)) < 1e-10


def test_check_pd_rejects():
    with pytest.raises(NotPositiveDefiniteError):
        check_pd(np.diag([1.0, -1.0]))
    with pytest.raises(NotPositiveDefiniteError):
        check_pd(np.array([[1.0, 2.0], [0.0, 1.0]]))  # not Hermitian
