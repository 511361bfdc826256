import numpy as np
import pytest

from ftdyn.errors import ConfigError, EscapeError
from ftdyn.linalg2 import op_norm2
from ftdyn.systems import (
    SystemSpec,
    cat_map,
    henon,
    identity_map,
    make_system,
    orbit,
    perturbed_cat,
    rescaled_local_map,
    standard_map,
    step,
    torus_dist,
)

RNG = np.random.default_rng(42)
LAM = (3.0 + np.sqrt(5.0)) / 2.0


def test_cat_bounds_closed_form():
    sys_ = cat_map()
    assert abs(sys_.bounds.norm_dt - LAM) < 1e-14
    assert abs(sys_.bounds.norm_dt_inv - LAM) < 1e-14
    assert sys_.bounds.norm_d2t == 0.0
    assert sys_.bounds.provenance == "analytic"


def test_identity_bounds():
    sys_ = identity_map()
    assert sys_.bounds.norm_dt == 1.0


def test_perturbed_second_derivative_bound():
    sys_ = perturbed_cat(0.01)
    assert abs(sys_.bounds.norm_d2t - 4.0 * np.pi**2 * 0.01) < 1e-14


def test_non_unimodular_rejected():
    with pytest.raises(ConfigError):
        make_system(SystemSpec("affine_torus", {"matrix": [[2, 0], [0, 1]]}))


def test_too_large_perturbation_rejected():
    with pytest.raises(ConfigError):
        perturbed_cat(0.4)


def test_cat_step_hand_value():
    sys_ = cat_map()
    assert np.allclose(step(sys_, (0.1, 0.2)), [0.4, 0.3], atol=1e-15)
    assert np.allclose(step(sys_, (0.4, 0.3), "backward"), [0.1, 0.2], atol=1e-15)


def test_identity_step():
    sys_ = identity_map()
    p = RNG.random(2)
    assert np.allclose(step(sys_, p), p)


def test_roundtrip_property():
    for sys_ in (cat_map(), perturbed_cat(0.01), perturbed_cat(0.05), standard_map(0.97)):
        pts = RNG.random((1024, 2))
        err = torus_dist(sys_.backward(sys_.forward(pts)), pts)
        assert err.max() <= 1e-10


def test_jacobian_matches_finite_differences():
    h = 1e-6
    for sys_ in (perturbed_cat(0.02), standard_map(0.5)):
        pts = RNG.random((256, 2))
        j = sys_.jacobian(pts)
        for axis in range(2):
            dp = np.zeros(2)
            dp[axis] = h
            fd = (sys_.forward_lifted(pts + dp) - sys_.forward_lifted(pts - dp)) / (2 * h)
            assert np.abs(fd - j[..., axis]).max() < 1e-5


def test_bounds_dominate_samples():
    for sys_ in (cat_map(), perturbed_cat(0.03), standard_map(1.2)):
        pts = RNG.random((4096, 2))
        n = op_norm2(sys_.jacobian(pts))
        assert n.max() <= sys_.bounds.norm_dt * (1.0 + 1e-9)
        ninv = op_norm2(np.linalg.inv(sys_.jacobian(pts)))
        assert ninv.max() <= sys_.bounds.norm_dt_inv * (1.0 + 1e-9)


def test_orbit_invariants():
    sys_ = perturbed_cat(0.01)
    ob = orbit(sys_, (0.1, 0.2), 10)
    for l in range(10):
        assert torus_dist(sys_.forward(ob.points[l]), ob.points[l + 1]) <= 1e-12
        assert np.allclose(ob.jacobians[l], sys_.jacobian(ob.points[l]))


def test_orbit_fixed_point():
    ob = orbit(cat_map(), (0.0, 0.0), 5)
    assert np.allclose(ob.points, 0.0)
    assert np.allclose(ob.jacobians, np.array([[2.0, 1.0], [1.0, 1.0]]))


def test_forward_diff_consistency():
    for sys_ in (cat_map(), perturbed_cat(0.02), standard_map(0.7), henon()):
        b = RNG.random((100, 2)) * (0.3 if sys_.domain != "torus" else 1.0)
        d = RNG.normal(size=(100, 2)) * 0.05
        direct = sys_.forward_lifted(b + d) - sys_.forward_lifted(b)
        assert np.abs(sys_.forward_diff(b, d) - direct).max() < 1e-12


def test_henon_escape():
    sys_ = henon()
    with pytest.raises(EscapeError):
        sys_.forward(np.array([1.9, 0.5]))


def test_henon_roundtrip():
    sys_ = henon()
    pts = np.stack([RNG.uniform(-0.5, 0.5, 64), RNG.uniform(-0.2, 0.2, 64)], axis=1)
    assert np.abs(sys_.backward(sys_.forward(pts)) - pts).max() < 1e-12


def test_rescaled_map_linear_case():
    sys_ = cat_map()
    rm = rescaled_local_map(sys_, (0.3, 0.4), 3, 1e-3)
    v = RNG.normal(size=(50, 2))
    v = v / np.linalg.norm(v, axis=1, keepdims=True) * RNG.random((50, 1)) * 2
    m = np.array([[2.0, 1.0], [1.0, 1.0]])
    assert np.abs(rm.eval(v) - v @ m.T).max() < 1e-9


def test_rescaled_map_jacobian_at_zero():
    sys_ = perturbed_cat(0.01)
    for n in (1, 4):
        rm = rescaled_local_map(sys_, (0.1, 0.2), n, 1e-3)
        base = orbit(sys_, (0.1, 0.2), max(n - 1, 1)).points[n - 1]
        assert np.allclose(rm.jacobian(np.zeros(2)), sys_.jacobian(base))


def test_rescaled_second_derivative_shrinks_linearly():
    sys_ = perturbed_cat(0.01)
    v = RNG.uniform(-1.5, 1.5, size=(64, 2))
    h = 1e-4
    outs = {}
    for eps in (2e-3, 1e-3):
        rm = rescaled_local_map(sys_, (0.1, 0.2), 2, eps)
        d2 = np.empty((64, 2))
        for axis, dp in enumerate((np.array([h, 0.0]), np.array([0.0, h]))):
            dd = (rm.eval(v + dp) - 2.0 * rm.eval(v) + rm.eval(v - dp)) / h**2
            d2[:, axis] = np.linalg.norm(dd, axis=1)
        assert d2.max() <= eps * sys_.bounds.norm_d2t * (1.0 + 1e-4)
        outs[eps] = d2.max()
    assert abs(outs[2e-3] / outs[1e-3] - 2.0) < 0.05


def test_rescaled_eps_cap():
    with pytest.raises(ValueError):
        rescaled_local_map(cat_map(), (0.1, 0.2), 3, 0.2)


def test_spec_json_roundtrip():
    spec = SystemSpec("perturbed_cat", {"matrix": [[2, 1], [1, 1]], "delta": 0.01})
    again = SystemSpec.from_json(spec.to_json())
    assert again == spec
    sys_ = make_system(again)
    assert sys_.spec.kind == "perturbed_cat"
