import numpy as np
import pytest

from b3seg._b3seg_exception import InvalidCameraError, ShapeMismatchError
from b3seg.posterior import PosteriorState
from b3seg.render import (
    ALPHA_MAX,
    Camera,
    Mask,
    aggregate_evidence,
    aggregate_evidence_multiclass,
    render,
    render_prior_logit,
)
from b3seg.scene import SceneSpec, generate_synthetic

from splat_builders import FOV, axis_camera, make_scene

CENTER = 32  # centre pixel of a 65x65 image


class TestCamera:

    def test_rejects_coincident_look_at(self):
        with pytest.raises(InvalidCameraError):
            Camera((1, 1, 1), (1, 1, 1))

    def test_rejects_parallel_up(self):
        with pytest.raises(InvalidCameraError):
            Camera((0, 0, 5), (0, 0, 0), (0, 0, 1))

    def test_rejects_bad_fov(self):
        with pytest.raises(InvalidCameraError):
            Camera((5, 0, 0), (0, 0, 0), vertical_fov=0.0)

    def test_focal_from_fov(self):
        cam = Camera((5, 0, 0), (0, 0, 0), vertical_fov=FOV, width=100, height=80)
        assert cam.focal == pytest.approx(40.0 / np.tan(FOV / 2))

    def test_look_at_projects_to_principal_point(self):
        cam = Camera((3, -2, 1), (0.5, 0.2, -0.3), width=40, height=30)
        uv, z = cam.project(np.array([[0.5, 0.2, -0.3]]))
        np.testing.assert_allclose(uv[0], [20.0, 15.0], atol=1e-9)
        assert z[0] > 0

    def test_world_up_is_image_up(self):
        cam = axis_camera()
        uv, _ = cam.project(np.array([[0.0, 0.0, 1.0]]))
        assert uv[0, 1] < cam.height / 2


class TestRender:

    def test_single_centered_gaussian(self):
        scene = make_scene([[0, 0, 0], [0, 0, -100]], colors=(1.0, 0.0, 0.0))
        out = render(scene, axis_camera())
        np.testing.assert_allclose(out.rgb[CENTER, CENTER], [ALPHA_MAX, 0.0, 0.0], atol=1e-12)
        assert out.responsibilities[0] > 0
        assert out.responsibilities[1] == 0.0

    def test_empty_region_is_black(self):
        scene = make_scene([[0, 0, 0]])
        out = render(scene, axis_camera())
        np.testing.assert_array_equal(out.rgb[0, 0], [0.0, 0.0, 0.0])
        assert out.pixel_contribs(0, 0) == []

    def test_two_coaxial_weights(self):
        scene = make_scene([[0, 0, 0], [-1, 0, 0]], opacities=[0.8, 0.6])
        out = render(scene, axis_camera())
        contribs = out.pixel_contribs(CENTER, CENTER)
        assert [g for g, _ in contribs] == [1, 0]
        np.testing.assert_allclose([w for _, w in contribs], [0.6, 0.32], atol=1e-12)

    def test_nothing_behind_camera(self):
        scene = make_scene([[-10, 0, 0]])
        out = render(scene, axis_camera())
        assert out.responsibilities[0] == 0.0
        assert out.contrib_pixel.size == 0

    def test_mixed_front_and_behind(self):
        front = [[0.0, 0.0, 0.0], [0.0, 0.4, 0.2]]
        scene = make_scene([*front, [-10.0, 0.0, 0.0]], scales=[0.05, 0.2, 0.3])
        out = render(scene, axis_camera())
        alone = render(make_scene(front, scales=[0.05, 0.2]), axis_camera())
        assert out.responsibilities[2] == 0.0
        np.testing.assert_allclose(out.responsibilities[:2], alone.responsibilities, atol=1e-12)
        np.testing.assert_allclose(out.rgb, alone.rgb, atol=1e-12)

    def test_tau_matches_pixel_sums(self):
        scene = generate_synthetic(SceneSpec(seed=2, gaussians_per_object=40, background_count=80))
        cam = Camera((2.0, 1.0, 0.5), (0, 0, 0), width=24, height=20)
        out = render(scene, cam)
        per_pixel = np.zeros(len(scene))
        for y in range(out.height):
            for x in range(out.width):
                for g, w in out.pixel_contribs(x, y):
                    per_pixel[g] += w
        np.testing.assert_allclose(per_pixel, out.responsibilities, atol=1e-9)

    def test_transmittance_budget(self):
        scene = generate_synthetic(SceneSpec(seed=5))
        out = render(scene, Camera((2.5, 0.0, 0.3), (0, 0, 0), width=48, height=48))
        assert out.coverage().max() <= 1.0 + 1e-6
        assert np.all(out.contrib_weight >= 0.0)

    def test_deterministic(self):
        scene = generate_synthetic(SceneSpec(seed=5, gaussians_per_object=30, background_count=50))
        cam = Camera((2.0, -1.0, 1.0), (0, 0, 0), width=32, height=32)
        a, b = render(scene, cam), render(scene, cam)
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.contrib_pixel, b.contrib_pixel)
        np.testing.assert_array_equal(a.contrib_weight, b.contrib_weight)
        np.testing.assert_array_equal(a.responsibilities, b.responsibilities)

    def test_occluder_opacity_never_raises_tau_behind(self):
        taus = []
        for alpha in (0.1, 0.4, 0.7, 0.95):
            scene = make_scene([[0, 0, 0], [-1, 0, 0]], scales=[0.05, 0.08], opacities=[0.9, alpha])
            taus.append(render(scene, axis_camera()).responsibilities[0])
        assert all(later < earlier for earlier, later in zip(taus, taus[1:]))

    def test_dominant_contributor(self):
        scene = make_scene([[0, 0, 0], [-1, 0, 0]], opacities=[0.8, 0.6])
        dom = render(scene, axis_camera()).dominant_contributor()
        assert dom[CENTER, CENTER] == 1
        assert dom[0, 0] == -1


class TestAggregateEvidence:

    def test_single_pixel_inside(self):
        scene = make_scene([[0, 0, 0]], opacities=0.6, scales=0.001)
        out = render(scene, axis_camera())
        assert out.pixel_contribs(CENTER, CENTER)[0][1] == pytest.approx(0.6)
        mask = np.zeros((65, 65), dtype=bool)
        mask[CENTER, CENTER] = True
        ev = aggregate_evidence(out, Mask(mask))
        np.testing.assert_allclose([ev.e1[0], ev.e0[0]], [0.6, out.responsibilities[0] - 0.6], atol=1e-12)

    def test_all_background_mask(self):
        scene = generate_synthetic(SceneSpec(seed=1, gaussians_per_object=20, background_count=30))
        out = render(scene, Camera((2, 2, 1), (0, 0, 0), width=16, height=16))
        ev = aggregate_evidence(out, Mask(np.zeros((16, 16), dtype=int)))
        np.testing.assert_array_equal(ev.e1, 0.0)
        np.testing.assert_allclose(ev.e0, out.responsibilities, atol=1e-12)

    def test_split_conserves_tau(self):
        scene = generate_synthetic(SceneSpec(seed=9, gaussians_per_object=40, background_count=60))
        out = render(scene, Camera((1.5, -2, 1), (0, 0, 0), width=16, height=16))
        rng = np.random.default_rng(0)
        ev = aggregate_evidence(out, Mask(rng.integers(0, 2, (16, 16))))
        np.testing.assert_allclose(ev.e1 + ev.e0, out.responsibilities, atol=1e-9)

    def test_multiclass_rows_sum_to_tau(self):
        scene = generate_synthetic(SceneSpec(seed=9, gaussians_per_object=40, background_count=60))
        out = render(scene, Camera((1.5, -2, 1), (0, 0, 0), width=16, height=16))
        rng = np.random.default_rng(1)
        ev = aggregate_evidence_multiclass(out, Mask(rng.integers(0, 4, (16, 16)), num_classes=4))
        assert ev.counts.shape == (len(scene), 4)
        np.testing.assert_allclose(ev.counts.sum(axis=1), out.responsibilities, atol=1e-9)

    def test_dimension_mismatch(self):
        out = render(make_scene([[0, 0, 0]]), axis_camera(res=9))
        with pytest.raises(ShapeMismatchError):
            aggregate_evidence(out, Mask(np.zeros((8, 9), dtype=int)))


class TestPriorLogit:

    def test_uniform_posterior_on_opaque_splat(self):
        scene = make_scene([[0, 0, 0]], opacities=1.0)
        cam = axis_camera()
        logit = render_prior_logit(scene, cam, PosteriorState.initial(1))
        soft = 0.5 * ALPHA_MAX
        assert logit[CENTER, CENTER] == pytest.approx(np.log(soft / (1 - soft)), abs=1e-12)
        assert logit[CENTER, CENTER] == pytest.approx(-0.002, abs=1e-4)

    def test_empty_pixel_is_clamped(self):
        scene = make_scene([[0, 0, 0]])
        logit = render_prior_logit(scene, axis_camera(), PosteriorState.initial(1))
        assert logit[0, 0] == pytest.approx(-13.8155, abs=1e-4)

    def test_confident_foreground(self):
        scene = make_scene([[0, 0, 0]], opacities=1.0)
        state = PosteriorState(np.array([[1e-12, 1.0]]))
        logit = render_prior_logit(scene, axis_camera(), state)
        assert logit[CENTER, CENTER] > 6.0

    def test_reuses_given_render(self):
        scene = make_scene([[0, 0, 0]])
        cam = axis_camera()
        out = render(scene, cam)
        state = PosteriorState.initial(1)
        np.testing.assert_array_equal(
            render_prior_logit(scene, cam, state, out=out),
            render_prior_logit(scene, cam, state),
        )
