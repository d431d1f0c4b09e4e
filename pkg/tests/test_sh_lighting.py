import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avatar_forge.errors import IllConditionedError, InputError
from avatar_forge.sh_lighting import (C1, C2, C3, C4, C5, ShCoefficients, compose,
                                      estimate_lighting, normalize_lighting, sh_irradiance_basis,
                                      shade)
from oracles import clamped_cosine_projection, folded_constants, sphere_samples


@pytest.fixture(scope="module")
def samples():
    return sphere_samples(20)


def unit(rng, shape):
    n = rng.normal(size=shape + (3,))
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def random_frames(rng, k=3, hw=(12, 10)):
    normals = [unit(rng, hw) for _ in range(k)]
    albedos = [rng.uniform(0.2, 0.9, hw + (3,)) for _ in range(k)]
    masks = [rng.random(hw) < 0.8 for _ in range(k)]
    return normals, albedos, masks


def band_light(index, value=1.0):
    e = np.zeros((9, 3))
    e[index] = value
    return ShCoefficients(e)


def test_folded_constants_match_quadrature(samples):
    got = folded_constants(samples)
    for name, value in zip(("c1", "c2", "c3", "c4", "c5"), (C1, C2, C3, C4, C5)):
        assert abs(got[name] - value) < 1e-3, name


def test_basis_matches_quadrature_at_random_normals(samples):
    rng = np.random.default_rng(0)
    for n in unit(rng, (6,)):
        np.testing.assert_allclose(sh_irradiance_basis(n), clamped_cosine_projection(n, samples),
                                   atol=1e-3)


def test_basis_reference_values():
    z = np.array([0, 0, 1.0])
    assert sh_irradiance_basis(z) @ band_light(0).coeffs[:, 0] == pytest.approx(0.886227)
    assert sh_irradiance_basis(z) @ band_light(2).coeffs[:, 0] == pytest.approx(1.023328)
    assert sh_irradiance_basis(z)[0] == sh_irradiance_basis(-z)[0]


def test_basis_rejects_non_unit():
    with pytest.raises(InputError):
        sh_irradiance_basis([0, 0, 1.01])


def test_shade_examples():
    rng = np.random.default_rng(1)
    n = unit(rng, (5, 6))
    m = rng.random((5, 6)) < 0.7
    np.testing.assert_allclose(shade(n, m, ShCoefficients.isotropic(1.0))[m], 1.0, atol=1e-12)
    assert (shade(n, m, ShCoefficients(np.zeros((9, 3)))) == 0).all()
    e = ShCoefficients(rng.normal(size=(9, 3)))
    s = shade(n, m, e, clamp_negative=False)
    for r, c in zip(*np.nonzero(m)):
        np.testing.assert_allclose(s[r, c], sh_irradiance_basis(n[r, c]) @ e.coeffs, atol=1e-12)
    assert (s[~m] == 0).all()
    assert (shade(n, m, e) >= 0).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_shade_is_linear_in_light(seed, a, b):
    rng = np.random.default_rng(seed)
    n = unit(rng, (4, 4))
    m = np.ones((4, 4), bool)
    e1, e2 = rng.normal(size=(2, 9, 3))
    lhs = shade(n, m, a * e1 + b * e2, clamp_negative=False)
    rhs = a * shade(n, m, e1, clamp_negative=False) + b * shade(n, m, e2, clamp_negative=False)
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_compose_examples():
    m = np.zeros((3, 4), bool)
    m[1:, 1:] = True
    a = np.full((3, 4, 3), 0.6)
    s = np.full((3, 4, 3), 0.5)
    out = compose(a, s, m, background=(0.1, 0.2, 0.3))
    np.testing.assert_allclose(out[m], 0.3)
    np.testing.assert_array_equal(out[~m], np.tile([0.1, 0.2, 0.3], ((~m).sum(), 1)))
    np.testing.assert_array_equal(compose(a, np.ones_like(a), m)[m], a[m])
    zero = compose(np.zeros_like(a), s, m, background=(0.5, 0.5, 0.5))
    assert (zero[m] == 0).all() and (zero[~m] == 0.5).all()
    with pytest.raises(InputError):
        compose(a, s[:2], m)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_compose_is_commutative(seed):
    rng = np.random.default_rng(seed)
    a, s = rng.uniform(0, 2, (2, 5, 5, 3))
    m = rng.random((5, 5)) < 0.5
    np.testing.assert_array_equal(compose(a, s, m), compose(s, a, m))


def test_estimate_lighting_round_trip():
    rng = np.random.default_rng(2)
    normals, albedos, masks = random_frames(rng)
    e = ShCoefficients(rng.normal(size=(9, 3)))
    images = [compose(a, shade(n, m, e, clamp_negative=False), m)
              for a, n, m in zip(albedos, normals, masks)]
    got, rms = estimate_lighting(images, albedos, normals, masks)
    assert np.abs(got.coeffs - e.coeffs).max() < 1e-6
    assert rms < 1e-8


def test_estimate_lighting_scales_and_is_order_independent():
    rng = np.random.default_rng(3)
    normals, albedos, masks = random_frames(rng, k=4)
    e = ShCoefficients(rng.normal(size=(9, 3)))
    images = [compose(a, shade(n, m, e, clamp_negative=False), m) + rng.normal(0, 0.01, a.shape)
              for a, n, m in zip(albedos, normals, masks)]
    base, _ = estimate_lighting(images, albedos, normals, masks)
    scaled, _ = estimate_lighting([2.5 * i for i in images], albedos, normals, masks)
    np.testing.assert_allclose(scaled.coeffs, 2.5 * base.coeffs, atol=1e-9)
    perm = [2, 0, 3, 1]
    shuffled, _ = estimate_lighting(*[[x[i] for i in perm]
                                      for x in (images, albedos, normals, masks)])
    np.testing.assert_allclose(shuffled.coeffs, base.coeffs, atol=1e-9)


def test_identical_normals_are_ill_conditioned():
    hw = (6, 6)
    n = np.zeros(hw + (3,))
    n[..., 2] = 1.0
    m = np.ones(hw, bool)
    a = np.full(hw + (3,), 0.5)
    with pytest.raises(IllConditionedError) as info:
        estimate_lighting([a], [a], [n], [m])
    assert info.value.bands


def test_estimate_lighting_input_checks():
    with pytest.raises(InputError):
        estimate_lighting([], [], [], [])
    a = np.zeros((2, 2, 3))
    with pytest.raises(IllConditionedError):
        estimate_lighting([a], [a], [a + [0, 0, 1]], [np.ones((2, 2), bool)])


def test_normalize_lighting_sets_mean_shading_to_one():
    rng = np.random.default_rng(4)
    normals, _, masks = random_frames(rng)
    e = ShCoefficients.isotropic(2.0).coeffs + rng.normal(0, 0.1, (9, 3))
    norm, mean = normalize_lighting(e, normals, masks)
    values = np.concatenate([shade(n, m, norm, clamp_negative=False)[m]
                             for n, m in zip(normals, masks)])
    np.testing.assert_allclose(values.mean(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(norm.coeffs * mean, e, atol=1e-12)


def test_light_json_schema():
    e = ShCoefficients(np.arange(27.0).reshape(9, 3))
    np.testing.assert_array_equal(ShCoefficients.from_json(e.to_json()).coeffs, e.coeffs)
    assert np.asarray(e.to_json()["bands"]).shape == (3, 9)
    for bad in ({}, {"bands": [[0] * 9] * 2}, {"bands": [[0] * 8] * 3}, [1, 2]):
        with pytest.raises(InputError):
            ShCoefficients.from_json(bad)
    with pytest.raises(InputError):
        ShCoefficients(np.full((9, 3), np.nan))
