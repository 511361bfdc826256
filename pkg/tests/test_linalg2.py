import numpy as np
import pytest

from ftdyn.errors import DegenerateSplitError, SingularMatrixError
from ftdyn.linalg2 import (
    frobenius_defect_pair,
    hyperbolic_split,
    norm_product_defect,
    svd2,
)

RNG = np.random.default_rng(12345)


def test_svd2_against_numpy():
    m = RNG.uniform(-10.0, 10.0, size=(10000, 2, 2))
    s = svd2(m)
    sv = np.linalg.svd(m, compute_uv=False)
    assert np.abs(s.smax - sv[:, 0]).max() < 1e-12
    assert np.abs(s.smin - sv[:, 1]).max() < 1e-12
    # directions realize the singular values
    f = s.expanded_dir()
    e = s.contracted_dir()
    mf = np.einsum("nij,nj->ni", m, f)
    me = np.einsum("nij,nj->ni", m, e)
    assert np.abs(np.linalg.norm(mf, axis=1) - s.smax).max() < 1e-12
    assert np.abs(np.linalg.norm(me, axis=1) - s.smin).max() < 1e-12
    # images align with the left frame, orientation carried by det
    assert np.abs(mf - s.smax[:, None] * s.expanded_image_dir()).max() < 1e-12
    assert np.abs(me - s.smin[:, None] * s.contracted_image_dir()).max() < 1e-12


def test_split_brute_force_directions():
    """The returned contracted direction minimizes ||A u|| over a fine fan of
    unit directions (0.1 degree resolution), per the stated oracle."""
    angles = np.radians(np.arange(0.0, 180.0, 0.1))
    fan = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    m = RNG.uniform(-10.0, 10.0, size=(10000, 2, 2))
    s = svd2(m)
    keep = (s.smin > 0) & (s.smax / np.maximum(s.smin, 1e-300) <= 1e6) & (
        s.smax / np.maximum(s.smin, 1e-300) >= 1.001
    )
    m = m[keep]
    norms = np.linalg.norm(np.einsum("nij,kj->nki", m, fan), axis=2)
    best = fan[np.argmin(norms, axis=1)]
    e = svd2(m).contracted_dir()
    cosang = np.abs(np.sum(best * e, axis=1))
    # brute-force fan resolves directions only to its 0.1-degree spacing
    assert np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))).max() <= 0.1


def test_hyperbolic_split_examples():
    sp = hyperbolic_split(np.diag([2.0, 0.5]))
    assert sp.sigma_max == 2.0 and sp.sigma_min == 0.5
    assert np.allclose(np.abs(sp.f), [1.0, 0.0])
    assert np.allclose(np.abs(sp.e), [0.0, 1.0])

    lam = (3.0 + np.sqrt(5.0)) / 2.0
    sp = hyperbolic_split(np.array([[2.0, 1.0], [1.0, 1.0]]))
    assert abs(sp.sigma_max - lam) < 1e-14
    e = np.array([1.0, -(1.0 + np.sqrt(5.0)) / 2.0])
    f = np.array([1.0, (np.sqrt(5.0) - 1.0) / 2.0])
    assert np.allclose(sp.e, e / np.linalg.norm(e), atol=1e-14)
    assert np.allclose(sp.f, f / np.linalg.norm(f), atol=1e-14)
    assert abs(np.dot(sp.e, sp.f)) < 1e-15


def test_split_rejects_rotation():
    th = np.pi / 4.0
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    with pytest.raises(DegenerateSplitError):
        hyperbolic_split(rot)


def test_split_rejects_singular():
    with pytest.raises(SingularMatrixError):
        hyperbolic_split(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_norm_defect_hand_value():
    nd = norm_product_defect(np.diag([2.0, 1.0]), np.array([[1.0, 1.0], [0.0, 1.0]]))
    # sigma_max(AB) via the characteristic polynomial of (AB)^T AB by hand:
    # tr = 9, det = 4 -> smax^2 = (9 + sqrt(65))/2
    smax = np.sqrt((9.0 + np.sqrt(65.0)) / 2.0)
    lam = (3.0 + np.sqrt(5.0)) / 2.0
    expected = smax / (2.0 * np.sqrt(lam))
    assert abs(nd.lhs - expected) < 1e-14
    assert abs(nd.rhs - expected) < 1e-14


def test_norm_defect_identity_pair():
    nd = norm_product_defect(np.eye(2), np.eye(2))
    assert nd.lhs == 1.0 and nd.rhs == 1.0


def test_defect_identity_random_pairs():
    for _ in range(200):
        a = RNG.uniform(-10.0, 10.0, size=(2, 2))
        b = RNG.uniform(-10.0, 10.0, size=(2, 2))
        sa, sb = svd2(a), svd2(b)
        if min(sa.smin, sb.smin) == 0.0:
            continue
        if max(sa.smax / sa.smin, sb.smax / sb.smin) > 1e6:
            continue
        nd = norm_product_defect(a, b)
        assert abs(nd.lhs - nd.rhs) <= 1e-9 * max(nd.lhs, nd.rhs)


def test_frobenius_pair_asymptotics():
    x = 1e3
    a, b = frobenius_defect_pair(x)
    # hand values: ||A||_F = ||B||_F = sqrt(2 x^2 + 3), ||AB||_F = sqrt(6x^2 + 2),
    # ||B^-1 A^-1||_F -> sqrt(1/2)
    assert abs(np.linalg.norm(a, "fro") - np.sqrt(2 * x**2 + 3)) < 1e-9
    assert abs(np.linalg.norm(a @ b, "fro") - np.sqrt(6 * x**2 + 2)) < 1e-9
    nd = norm_product_defect(a, b, norm="frobenius")
    assert abs(np.linalg.norm(np.linalg.inv(b) @ np.linalg.inv(a), "fro") ** 2 - (0.75 / x**2 + 0.5)) < 1e-12
    assert nd.rhs / nd.lhs > 100.0
