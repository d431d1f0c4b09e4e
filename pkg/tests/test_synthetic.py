import filecmp

import numpy as np
import pytest

from avatar_forge.errors import InputError
from avatar_forge.sh_lighting import compose, sh_irradiance_basis, shade
from avatar_forge.synthetic import (ALBEDO_RANGE, LightSampler, ProceduralCharacterSpec,
                                    camera_to_world_normals, gen_character, gen_protocol_a,
                                    gen_protocol_b, load_frame, load_manifest)


@pytest.fixture(scope="module")
def character():
    return gen_character(ProceduralCharacterSpec(seed=2, atlas_resolution=64,
                                                 clothing_amplitude=0.02))


@pytest.fixture(scope="module")
def dataset_a(character, tmp_path_factory):
    root = tmp_path_factory.mktemp("a")
    return gen_protocol_a(character, root, n_train=4, n_test=3, seed=5, resolution=(64, 64))


def test_character_is_deterministic_and_well_formed(character):
    again = gen_character(ProceduralCharacterSpec(seed=2, atlas_resolution=64,
                                                  clothing_amplitude=0.02))
    np.testing.assert_array_equal(again.model.rest_vertices, character.model.rest_vertices)
    np.testing.assert_array_equal(again.atlas.color, character.atlas.color)
    other = gen_character(ProceduralCharacterSpec(seed=3, atlas_resolution=64))
    assert not np.array_equal(other.atlas.color, character.atlas.color)

    w = character.model.skin_weights
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert (w >= 0).all() and ((w > 0).sum(axis=1) <= 4).all()
    lo, hi = ALBEDO_RANGE
    assert character.atlas.color.min() >= lo and character.atlas.color.max() <= hi
    assert np.abs(character.clothing.offsets).max() > 0


@pytest.mark.parametrize("bad", [dict(joint_count=1), dict(pattern="plaid"),
                                 dict(atlas_resolution=8), dict(clothing_amplitude=-1.0)])
def test_character_spec_validation(bad):
    with pytest.raises(InputError):
        ProceduralCharacterSpec(**bad)


def test_chain_character():
    ch = gen_character(ProceduralCharacterSpec(joint_count=5, atlas_resolution=32))
    assert ch.model.n_joints == 5


def test_protocol_a_layout(dataset_a):
    m = load_manifest(dataset_a.root)
    train, test = m.split("train"), m.split("test")
    assert [r.azimuth_deg for r in train] == [0.0, 90.0, 180.0, 270.0]
    assert len(test) == 3 and all(r.azimuth_deg is None for r in test)
    lights = [load_frame(m, r, need=()).light.coeffs for r in m.split("train")]
    for e in lights[1:]:
        np.testing.assert_array_equal(e, lights[0])
    test_lights = [load_frame(m, r, need=()).light.coeffs for r in test]
    assert not np.allclose(test_lights[0], test_lights[1])


def test_frames_are_self_consistent(dataset_a):
    m = load_manifest(dataset_a.root)
    for r in m.frames:
        f = load_frame(m, r)
        n = camera_to_world_normals(f.normal, f.mask, f.camera)
        n[f.mask] /= np.linalg.norm(n[f.mask], axis=1, keepdims=True)
        expected = compose(f.albedo, shade(n, f.mask, f.light), f.mask)
        # 16-bit storage of image, albedo and normals
        assert np.abs(f.image[..., :3] - expected)[f.mask].max() < 1e-3
        assert (f.image[~f.mask] == 0).all()


def test_lights_pass_rejection_rules(dataset_a):
    m = load_manifest(dataset_a.root)
    s = LightSampler()
    for r in m.split("test"):
        f = load_frame(m, r, need=("normal",))
        n = camera_to_world_normals(f.normal, f.mask, f.camera)[f.mask]
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        shading = sh_irradiance_basis(n) @ f.light.coeffs
        assert shading.min() >= s.min_shading - 1e-3
        assert shading.max() * s.max_albedo <= 1.0 + 1e-3


def test_sampler_exposure_normalizes_mean_shading():
    rng = np.random.default_rng(0)
    n = rng.normal(size=(500, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    e = LightSampler().sample(rng, n, exposure=True)
    np.testing.assert_allclose((sh_irradiance_basis(n) @ e.coeffs).mean(axis=0), 1.0, atol=1e-12)


def test_protocol_b_relights_training_poses(character, tmp_path):
    m = gen_protocol_b(character, tmp_path, n_frames=3, seed=1, resolution=(48, 48))
    for r in m.split("test"):
        src = [t for t in m.split("train") if t.index == r.source_pose][0]
        a, b = load_frame(m, r), load_frame(m, src)
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(a.albedo, b.albedo)
        np.testing.assert_array_equal(a.pose.joint_rotations, b.pose.joint_rotations)
        assert not np.allclose(a.light.coeffs, b.light.coeffs)
    with pytest.raises(InputError):
        gen_protocol_b(character, tmp_path / "x", n_frames=3, n_test=2)


def test_test_frames_do_not_depend_on_split_sizes(character, tmp_path):
    small = gen_protocol_a(character, tmp_path / "s", n_train=2, n_test=2, seed=4,
                           resolution=(32, 32))
    large = gen_protocol_a(character, tmp_path / "l", n_train=2, n_test=3, seed=4,
                           resolution=(32, 32))
    for a, b in zip(small.split("test"), large.split("test")):
        fa, fb = load_frame(small, a), load_frame(large, b)
        np.testing.assert_array_equal(fa.image, fb.image)
        np.testing.assert_array_equal(fa.light.coeffs, fb.light.coeffs)


def test_generation_is_byte_identical(character, tmp_path):
    for name in ("x", "y"):
        gen_protocol_a(character, tmp_path / name, n_train=2, n_test=2, seed=9,
                       resolution=(32, 32))
    cmp = filecmp.dircmp(tmp_path / "x", tmp_path / "y")

    def same(c):
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, c.common_files, shallow=False)
        return (not mismatch and not errors and not c.left_only and not c.right_only
                and all(same(s) for s in c.subdirs.values()))
    assert same(cmp)


def test_invalid_counts(character, tmp_path):
    with pytest.raises(InputError):
        gen_protocol_a(character, tmp_path, n_train=0)
