import json
import struct

import numpy as np
import pytest

from b3seg._b3seg_exception import (
    InvalidGeneratorSpecError,
    SceneGenerationError,
    SplatParseError,
    SplatValidationError,
)
from b3seg.scene import (
    Gaussian,
    Scene,
    SceneSpec,
    SplatFormat,
    generate_synthetic,
    load_scene,
    quaternion_to_matrix,
    save_scene,
)

from splat_builders import make_scene


def _random_scene(n=100, seed=0, labels=True):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return Scene(
        means=rng.uniform(-2, 2, (n, 3)),
        scales=rng.uniform(0.01, 0.5, (n, 3)),
        rotations=q,
        opacities=rng.uniform(0, 1, n),
        colors=rng.uniform(0, 1, (n, 3)),
        labels=rng.integers(0, 3, n) if labels else None,
    )


def _json_doc(**overrides):
    rec = {"mean": [0, 0, 0], "scale": [1, 1, 1], "rot": [1, 0, 0, 0], "opacity": 1.0, "color": [1, 0, 0]}
    rec.update(overrides)
    return rec


class TestLoadScene:

    def test_minimal_json(self, tmp_path):
        path = tmp_path / "one.json"
        path.write_text(json.dumps({"version": 1, "gaussians": [_json_doc()]}))
        scene = load_scene(path)
        assert len(scene) == 1
        assert not scene.has_labels
        np.testing.assert_array_equal(scene.means, [[0.0, 0.0, 0.0]])

    def test_opacity_out_of_range_names_index(self, tmp_path):
        recs = [_json_doc() for _ in range(5)]
        recs[3]["opacity"] = 1.5
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"version": 1, "gaussians": recs}))
        with pytest.raises(SplatValidationError) as info:
            load_scene(path)
        assert info.value.field == "opacity"
        assert info.value.index == 3
        assert "index 3" in str(info.value)

    def test_negative_scale_rejected(self):
        with pytest.raises(SplatValidationError) as info:
            make_scene([[0, 0, 0], [1, 0, 0]], scales=[0.1, -0.1])
        assert info.value.field == "scale"
        assert info.value.index == 1

    def test_non_unit_quaternion_rejected(self):
        g = Gaussian((0, 0, 0), (1, 1, 1), (1.0, 0.0, 0.0, 0.1), 0.5, (0, 0, 0))
        with pytest.raises(SplatValidationError) as info:
            Scene.from_gaussians([g])
        assert info.value.field == "rotation"

    def test_bad_magic_offset_zero(self, tmp_path):
        path = tmp_path / "x.splat"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(SplatParseError) as info:
            load_scene(path)
        assert info.value.offset == 0

    def test_truncated_record_offset(self, tmp_path):
        scene = _random_scene(4, labels=False)
        path = tmp_path / "x.splat"
        save_scene(scene, path)
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(SplatParseError) as info:
            load_scene(path)
        record = (len(data) - 16) // 4
        assert info.value.offset == 16 + 3 * record

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "x.splat"
        path.write_bytes(b"B3SP\x01")
        with pytest.raises(SplatParseError):
            load_scene(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "x.splat"
        path.write_bytes(struct.pack("<4sIII", b"B3SP", 9, 0, 0))
        with pytest.raises(SplatParseError) as info:
            load_scene(path)
        assert info.value.offset == 4

    def test_json_syntax_error_has_offset(self, tmp_path):
        path = tmp_path / "x.json"
        path.write_text('{"version": 1, "gaussians": [')
        with pytest.raises(SplatParseError) as info:
            load_scene(path)
        assert info.value.offset is not None

    def test_bad_record_offset_points_at_record(self, tmp_path):
        good = json.dumps(_json_doc())
        bad = json.dumps({"mean": [9, 9, 9], "scale": [1, 1, 1], "rot": [1, 0, 0, 0], "color": [0, 0, 1]})
        text = '{"version": 1, "gaussians": [' + good + ", " + good + ",\n  " + bad + "]}"
        path = tmp_path / "x.json"
        path.write_text(text)
        with pytest.raises(SplatParseError, match="record 2") as info:
            load_scene(path)
        assert info.value.offset == text.index(bad)

    def test_non_object_record_offset(self, tmp_path):
        text = '{"version": 1, "gaussians": [' + json.dumps(_json_doc()) + ', "oops"]}'
        path = tmp_path / "x.json"
        path.write_text(text)
        with pytest.raises(SplatParseError) as info:
            load_scene(path)
        assert info.value.offset == text.index('"oops"')

    def test_missing_file_propagates(self, tmp_path):
        with pytest.raises(OSError):
            load_scene(tmp_path / "absent.splat")


class TestSaveScene:

    def test_creates_file(self, tmp_path):
        path = tmp_path / "s.splat"
        save_scene(_random_scene(3), path)
        assert path.exists()

    def test_random_round_trip_both_formats(self, tmp_path):
        scene = _random_scene(100)
        for name in ("r.splat", "r.json"):
            save_scene(scene, tmp_path / name)
            back = load_scene(tmp_path / name)
            for field in ("means", "scales", "rotations", "opacities", "colors"):
                np.testing.assert_allclose(getattr(back, field), getattr(scene, field), atol=1e-6)
            np.testing.assert_array_equal(back.labels, scene.labels)

    def test_binary_round_trip_is_bit_exact(self, tmp_path):
        scene = generate_synthetic(SceneSpec(seed=7))
        first = tmp_path / "a.splat"
        second = tmp_path / "b.splat"
        save_scene(scene, first)
        save_scene(load_scene(first), second)
        assert first.read_bytes() == second.read_bytes()
        back = load_scene(first)
        np.testing.assert_array_equal(back.means, scene.means)
        np.testing.assert_array_equal(back.labels, scene.labels)

    def test_json_round_trip_on_generated(self, tmp_path):
        scene = generate_synthetic(SceneSpec(seed=3, gaussians_per_object=20, background_count=40))
        save_scene(scene, tmp_path / "g.json")
        back = load_scene(tmp_path / "g.json")
        np.testing.assert_allclose(back.means, scene.means, atol=1e-6)
        np.testing.assert_allclose(back.colors, scene.colors, atol=1e-6)

    def test_explicit_format_overrides_extension(self, tmp_path):
        path = tmp_path / "scene.dat"
        save_scene(_random_scene(5), path, format=SplatFormat.json_splat)
        assert json.loads(path.read_text())["version"] == 1
        assert len(load_scene(path, format="json_splat")) == 5


class TestSceneModel:

    def test_covariance_is_factored(self):
        scene = _random_scene(20, seed=4)
        cov = scene.covariances()
        R = quaternion_to_matrix(scene.rotations)
        expected = R @ (scene.scales[:, :, None] ** 2 * np.eye(3)) @ np.transpose(R, (0, 2, 1))
        np.testing.assert_allclose(cov, expected, atol=1e-12)
        np.testing.assert_allclose(cov, np.transpose(cov, (0, 2, 1)), atol=1e-12)
        assert np.all(np.linalg.eigvalsh(cov) >= -1e-12)

    def test_stable_indexing(self):
        scene = _random_scene(10)
        assert scene.gaussian(7).mean == scene.gaussian(7).mean
        assert scene.gaussian(7).mean == tuple(scene.means[7].tolist())

    def test_arrays_are_read_only(self):
        scene = _random_scene(3)
        with pytest.raises(ValueError):
            scene.means[0, 0] = 1.0

    def test_bounding_sphere_contains_all_means(self):
        scene = _random_scene(50)
        c, r = scene.bounding_sphere()
        assert np.all(np.linalg.norm(scene.means - c, axis=1) <= r + 1e-12)


class TestGenerateSynthetic:

    def test_reference_counts(self):
        scene = generate_synthetic(SceneSpec(seed=7, n_objects=1, gaussians_per_object=100, background_count=400))
        assert len(scene) == 500
        assert np.count_nonzero(scene.labels == 1) == 100
        assert np.count_nonzero(scene.labels == 0) == 400

    def test_multi_object_class_balance(self):
        scene = generate_synthetic(SceneSpec(seed=1, n_objects=3, gaussians_per_object=25,
                                             background_count=50, workspace_extent=3.0))
        assert np.bincount(scene.labels).tolist() == [50, 25, 25, 25]

    def test_object_is_opaque_shell(self):
        spec = SceneSpec(seed=4)
        scene = generate_synthetic(spec)
        obj = scene.labels == 1
        center = scene.means[obj].mean(axis=0)
        dist = np.linalg.norm(scene.means[obj] - center, axis=1)
        np.testing.assert_allclose(dist, spec.object_radius, atol=0.06 * spec.object_radius)
        assert scene.opacities[obj].min() >= 0.9
        # discs lie tangent to the shell: thin axis along the outward normal
        normals = (scene.means[obj] - center) / dist[:, None]
        thin_axis = quaternion_to_matrix(scene.rotations[obj])[:, :, 2]
        assert np.all(np.abs(np.einsum("ij,ij->i", thin_axis, normals)) > 0.99)
        assert np.all(scene.scales[obj, 2] < scene.scales[obj, :2].min(axis=1))

    @pytest.mark.parametrize("seed", [0, 7, 11])
    def test_clutter_clear_of_object(self, seed):
        spec = SceneSpec(seed=seed)
        scene = generate_synthetic(spec)
        center = scene.means[scene.labels == 1].mean(axis=0)
        E, r = spec.workspace_extent, spec.object_radius
        clutter = scene.means[(scene.labels == 0) & (scene.means[:, 2] > -0.9 * E)]
        d = clutter - center
        assert np.all(np.linalg.norm(d, axis=1) >= 3.94 * r)
        in_front = d[:, 0] > 0
        assert np.all(np.linalg.norm(d[in_front, 1:], axis=1) >= 3.94 * r)

    def test_same_seed_bit_identical(self):
        a = generate_synthetic(SceneSpec(seed=7))
        b = generate_synthetic(SceneSpec(seed=7))
        for field in ("means", "scales", "rotations", "opacities", "colors", "labels"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))

    def test_different_seed_differs(self):
        a = generate_synthetic(SceneSpec(seed=7))
        b = generate_synthetic(SceneSpec(seed=8))
        assert np.count_nonzero(np.round(a.means, 3) != np.round(b.means, 3)) > 0

    def test_infeasible_separation(self):
        spec = SceneSpec(seed=0, n_objects=30, workspace_extent=0.5, object_radius=0.2, max_retries=5)
        with pytest.raises(SceneGenerationError, match="workspace_extent"):
            generate_synthetic(spec)

    def test_invalid_spec(self):
        with pytest.raises(InvalidGeneratorSpecError):
            SceneSpec(gaussians_per_object=0)
