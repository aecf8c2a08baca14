import numpy as np
import pytest
from scipy import integrate, stats

from b3seg._b3seg_exception import (
    EntropyDomainError,
    InvalidPriorError,
    NegativeEvidenceError,
    NoForegroundError,
    ProbabilityDomainError,
    ShapeMismatchError,
)
from b3seg.posterior import (
    LN2,
    R_MIN,
    EvidenceMap,
    PosteriorState,
    accuracy_target_to_entropy,
    bayes_accuracy_bound,
    beta_entropy,
    dirichlet_entropy,
    entropy_per_gaussian,
    map_labels,
    object_stats,
    predictive_entropy,
    total_entropy,
    update,
)

from splat_builders import make_scene

H22 = -0.12509


def _quadrature_entropy(a, b):
    dist = stats.beta(a, b)
    val, _ = integrate.quad(lambda x: -dist.pdf(x) * dist.logpdf(x), 0.0, 1.0, limit=200, epsabs=1e-11)
    return val


class TestBetaEntropy:

    def test_uniform_is_zero(self):
        assert beta_entropy(1.0, 1.0) == 0.0

    def test_two_two(self):
        assert beta_entropy(2.0, 2.0) == pytest.approx(H22, abs=1e-5)

    @pytest.mark.parametrize("a,b", [(1.5, 1.5), (2.0, 5.0), (3.0, 10.0), (10.0, 3.0), (1.2, 7.5)])
    def test_matches_quadrature(self, a, b):
        assert beta_entropy(a, b) == pytest.approx(_quadrature_entropy(a, b), abs=1e-6)

    def test_matches_scipy_on_log_grid(self):
        g = np.geomspace(0.5, 100.0, 20)
        A, B = np.meshgrid(g, g)
        np.testing.assert_allclose(beta_entropy(A, B), stats.beta(A, B).entropy(), atol=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a, b = rng.uniform(0.5, 100.0, (2, 100))
        np.testing.assert_allclose(beta_entropy(a, b), beta_entropy(b, a), atol=1e-12)

    @pytest.mark.parametrize("a,b", [(0.0, 1.0), (1.0, -2.0), (np.nan, 1.0)])
    def test_domain(self, a, b):
        with pytest.raises(EntropyDomainError):
            beta_entropy(a, b)

    def test_domain_error_is_value_error(self):
        with pytest.raises(ValueError):
            beta_entropy(-1.0, 1.0)

    def test_concentration_lowers_entropy(self):
        for m in np.linspace(0.05, 0.95, 10):
            for base in (1.0, 1.5, 3.0, 10.0):
                kappa = base / min(m, 1 - m)
                for c in (1.1, 2.0, 10.0):
                    a, b = m * kappa, (1 - m) * kappa
                    assert beta_entropy(c * a, c * b) <= beta_entropy(a, b) + 1e-12

    def test_diminishing_drop_at_fixed_mean(self):
        for m in np.linspace(0.05, 0.95, 10):
            for tau in (0.1, 1.0, 5.0):
                kappas = np.linspace(4.0 / min(m, 1 - m), 200.0, 40)
                drops = beta_entropy(m * kappas, (1 - m) * kappas) - beta_entropy(
                    m * (kappas + tau), (1 - m) * (kappas + tau))
                assert np.all(np.diff(drops) <= 1e-12)

    def test_drop_grows_at_low_concentration(self):
        # below min(a, b) = 4 the drop need not shrink: Beta(2,2)->Beta(3,3) beats Beta(1,1)->Beta(2,2)
        first = beta_entropy(1.0, 1.0) - beta_entropy(2.0, 2.0)
        second = beta_entropy(2.0, 2.0) - beta_entropy(3.0, 3.0)
        assert second > first


class TestDirichletEntropy:

    def test_reduces_to_beta(self):
        assert dirichlet_entropy([1.0, 1.0]) == 0.0
        assert dirichlet_entropy([2.0, 2.0]) == pytest.approx(beta_entropy(2.0, 2.0), abs=1e-9)

    def test_uniform_simplex(self):
        # density 2 on the 2-simplex
        assert dirichlet_entropy([1.0, 1.0, 1.0]) == pytest.approx(-LN2, abs=1e-12)

    def test_matches_scipy(self):
        alpha = np.array([0.7, 2.5, 4.0, 9.0])
        assert dirichlet_entropy(alpha) == pytest.approx(stats.dirichlet(alpha).entropy(), abs=1e-9)

    def test_needs_two_parameters(self):
        with pytest.raises(EntropyDomainError):
            dirichlet_entropy([1.0])


class TestTotalEntropy:

    def test_untouched_state(self):
        assert total_entropy(PosteriorState.initial(10)) == 0.0

    def test_sum_of_terms(self):
        state = PosteriorState(np.full((2, 2), 2.0))
        assert total_entropy(state) == pytest.approx(2 * H22, abs=1e-5)
        np.testing.assert_allclose(entropy_per_gaussian(state), beta_entropy(2.0, 2.0))

    def test_strictly_decreases_with_full_coverage(self):
        rng = np.random.default_rng(3)
        state = PosteriorState.initial(50)
        for _ in range(20):
            tau = rng.uniform(0.01, 3.0, 50)
            share = rng.uniform(0, 1, 50)
            nxt = update(state, EvidenceMap.binary(share * tau, (1 - share) * tau))
            assert total_entropy(nxt) < total_entropy(state)


class TestUpdate:

    def test_conjugate_addition(self):
        state = update(PosteriorState.initial(1), EvidenceMap.binary([0.6], [0.0]))
        assert state.a[0] == pytest.approx(1.6)
        assert state.b[0] == 1.0

    def test_zero_evidence_is_identity(self):
        state = PosteriorState(np.array([[2.0, 3.0], [1.5, 0.5]]))
        np.testing.assert_array_equal(update(state, EvidenceMap.binary([0, 0], [0, 0])).counts, state.counts)

    def test_does_not_mutate_input(self):
        state = PosteriorState.initial(2)
        update(state, EvidenceMap.binary([1, 1], [1, 1]))
        np.testing.assert_array_equal(state.counts, 1.0)

    def test_order_independent(self):
        rng = np.random.default_rng(5)
        maps = [EvidenceMap.binary(*rng.uniform(0, 2, (2, 30))) for _ in range(6)]
        forward = PosteriorState.initial(30)
        for ev in maps:
            forward = update(forward, ev)
        backward = PosteriorState.initial(30)
        for ev in reversed(maps):
            backward = update(backward, ev)
        np.testing.assert_allclose(forward.counts, backward.counts, atol=1e-9)

    def test_negative_evidence(self):
        with pytest.raises(NegativeEvidenceError):
            update(PosteriorState.initial(1), np.array([[-0.1, 0.0]]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            update(PosteriorState.initial(2), EvidenceMap.binary([1.0], [1.0]))

    def test_invalid_prior(self):
        with pytest.raises(InvalidPriorError):
            PosteriorState.initial(3, a_init=0.0)

    def test_concentration_never_below_prior(self):
        rng = np.random.default_rng(1)
        state = PosteriorState.initial(20, 1.0, 1.0)
        for _ in range(4):
            state = update(state, EvidenceMap.binary(*rng.uniform(0, 1, (2, 20))))
        assert np.all(state.concentration() >= 2.0)


class TestMapLabels:

    def test_foreground(self):
        assert map_labels(PosteriorState(np.array([[1.1, 3.2]])))[0]

    def test_tie_is_background(self):
        assert not map_labels(PosteriorState.initial(1))[0]

    def test_multiclass_lowest_id_on_ties(self):
        state = PosteriorState(np.array([[1.0, 2.0, 2.0], [3.0, 1.0, 1.0], [1.0, 1.0, 4.0]]))
        assert map_labels(state).tolist() == [1, 0, 2]

    def test_equals_summed_evidence_argmax(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(5, 40))
            views = [rng.uniform(0, 1, (2, n)) * rng.integers(0, 2, (1, n)) for _ in range(int(rng.integers(1, 6)))]
            state = PosteriorState.initial(n)
            for e1, e0 in views:
                state = update(state, EvidenceMap.binary(e1, e0))
            fg = sum(v[0] for v in views)
            bg = sum(v[1] for v in views)
            np.testing.assert_array_equal(map_labels(state), fg > bg)


class TestObjectStats:

    def test_single_point_clamped(self):
        scene = make_scene([[1, 2, 3], [5, 5, 5]])
        state = PosteriorState(np.array([[1.0, 3.0], [3.0, 1.0]]))
        s = object_stats(scene, state)
        np.testing.assert_allclose(s.center, [1, 2, 3])
        assert s.radius == R_MIN

    def test_symmetric_pair(self):
        scene = make_scene([[1, 0, 0], [-1, 0, 0], [0, 9, 0]])
        state = PosteriorState(np.array([[1.0, 4.0], [1.0, 4.0], [4.0, 1.0]]))
        s = object_stats(scene, state)
        np.testing.assert_allclose(s.center, 0.0, atol=1e-12)
        assert s.radius == pytest.approx(1.0)

    def test_weighting_scale_invariant(self):
        scene = make_scene([[0, 0, 0], [2, 1, 0], [1, 3, 2]])
        state = PosteriorState(np.array([[1.0, 2.0], [1.0, 5.0], [2.0, 3.0]]))
        s1 = object_stats(scene, state)
        s2 = object_stats(scene, PosteriorState(state.counts * 3.0))
        np.testing.assert_allclose(s1.center, s2.center, atol=1e-12)
        assert s1.radius == pytest.approx(s2.radius, abs=1e-12)

    def test_no_foreground(self):
        scene = make_scene([[0, 0, 0]])
        with pytest.raises(NoForegroundError):
            object_stats(scene, PosteriorState.initial(1))


class TestAccuracyBound:

    def test_fixed_points(self):
        assert bayes_accuracy_bound(0.5) == pytest.approx(0.5, abs=1e-15)
        assert bayes_accuracy_bound(1.0) == 1.0
        assert bayes_accuracy_bound(0.0) == 1.0

    def test_point_nine(self):
        assert bayes_accuracy_bound(0.9) == pytest.approx(0.7655, abs=1e-4)

    def test_below_true_accuracy_on_grid(self):
        q = np.linspace(0.0, 1.0, 1001)
        assert np.all(bayes_accuracy_bound(q) <= np.maximum(q, 1 - q) + 1e-12)

    def test_out_of_range(self):
        with pytest.raises(ProbabilityDomainError):
            bayes_accuracy_bound(1.2)

    def test_accuracy_target(self):
        assert accuracy_target_to_entropy(0.9) == pytest.approx(0.1386, abs=1e-4)

    def test_predictive_entropy(self):
        np.testing.assert_allclose(predictive_entropy(PosteriorState.initial(3)), LN2)
