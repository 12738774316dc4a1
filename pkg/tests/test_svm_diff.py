import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svmshape.errors import DegenerateActiveSet
from svmshape.svm_core import ISOTROPIC, KernelParams, SvmModel, discriminant, fit
from svmshape.svm_diff import (backward_discriminant, finite_diff_check, partition_active_set, random_instance,
                               relative_error)

PAIR = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
ISO1 = KernelParams(ISOTROPIC, [1.0])


def fake_model(alpha, C=1.0):
    n = len(alpha)
    return SvmModel(np.zeros((n, 3)), np.array([1, -1, 1][:n]), np.asarray(alpha, float), 0.0, C, ISO1, 0.0)


class TestPartition:
    def test_three_way_split(self):
        part = partition_active_set(fake_model([0.0, 0.5, 1.0]))
        assert part.key() == ((1,), (0,), (2,))

    def test_threshold_is_relative_to_c(self):
        part = partition_active_set(fake_model([1e-7, 0.5, 1.0 - 1e-7]))
        assert part.key() == ((1,), (0,), (2,))
        assert part.epsilon == pytest.approx(1e-6)

    def test_no_free_multiplier(self):
        with pytest.raises(DegenerateActiveSet):
            partition_active_set(fake_model([0.0, 1.0]))

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            partition_active_set(fake_model([0.0, 0.5, 1.0]), epsilon=0.0)


class TestBackward:
    def model(self):
        return fit(PAIR, [1, -1], ISO1, 10.0)

    def test_mirror_symmetry(self):
        g = backward_discriminant(self.model(), [[0.0, 0, 0]], [1.0])
        assert g.d_query[0, 0] > 0
        np.testing.assert_allclose(g.d_query[0, 1:], 0.0, atol=1e-14)
        # Spreading the pair apart symmetrically keeps P(0) = 0.
        assert g.d_support[0, 0] == pytest.approx(g.d_support[1, 0], abs=1e-12)

    def test_translation_invariance(self, rng):
        pts, labels, kernel, q = random_instance(rng, 8, 3)
        g = backward_discriminant(fit(pts, labels, kernel, 1.0), q, rng.normal(size=3))
        np.testing.assert_allclose(g.d_support.sum(axis=0), -g.d_query.sum(axis=0), atol=1e-10)

    def test_zero_upstream(self):
        g = backward_discriminant(self.model(), [[0.1, 0.2, 0.3]], [0.0])
        for arr in (g.d_support, g.d_sigma, g.d_query):
            assert np.all(arr == 0)

    def test_shapes(self, rng):
        pts, labels, kernel, q = random_instance(rng, 8, 5)
        g = backward_discriminant(fit(pts, labels, kernel, 1.0), q, np.ones(5))
        assert g.d_support.shape == (8, 3) and g.d_sigma.shape == (3,) and g.d_query.shape == (5, 3)

    def test_upstream_length(self):
        with pytest.raises(ValueError):
            backward_discriminant(self.model(), [[0.0, 0, 0]], [1.0, 2.0])

    def test_linear_in_upstream(self, rng):
        pts, labels, kernel, q = random_instance(rng, 8, 3)
        m = fit(pts, labels, kernel, 1.0)
        u1, u2 = rng.normal(size=3), rng.normal(size=3)
        a = backward_discriminant(m, q, u1)
        b = backward_discriminant(m, q, u2)
        c = backward_discriminant(m, q, 2 * u1 - u2)
        np.testing.assert_allclose(c.d_support, 2 * a.d_support - b.d_support, atol=1e-10)
        np.testing.assert_allclose(c.d_sigma, 2 * a.d_sigma - b.d_sigma, atol=1e-10)

    def test_query_gradient_direct(self, rng):
        pts, labels, kernel, q = random_instance(rng, 8, 1)
        m = fit(pts, labels, kernel, 1.0)
        g = backward_discriminant(m, q, [1.0]).d_query[0]
        h = 1e-6
        num = [(discriminant(m, q + h * e) - discriminant(m, q - h * e))[0] / (2 * h) for e in np.eye(3)]
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-9)


class TestGradcheck:
    def test_duplicate_points_reported(self):
        pts = np.array([[0.1, 0, 0], [0.1, 0, 0], [-0.1, 0, 0], [-0.1, 0, 0]])
        rep = finite_diff_check(pts, [1, 1, -1, -1], KernelParams(ISOTROPIC, [0.3]), 10.0, [[0, 0, 0.0]])
        assert rep.error is not None and not rep.ok
        assert rep.error.startswith("SingularKkt")

    @pytest.mark.parametrize("h", [0.0, -1e-4])
    def test_step_must_be_positive(self, h):
        with pytest.raises(ValueError):
            finite_diff_check(PAIR, [1, -1], ISO1, 10.0, [[0, 0, 0.0]], h=h)

    def test_relative_error_floor(self):
        assert relative_error(1e-9, 0.0) == pytest.approx(1e-3)
        assert relative_error(2.0, 1.0) == 0.5

    def test_pair_passes(self):
        rep = finite_diff_check(PAIR, [1, -1], ISO1, 10.0, [[0.2, 0.1, 0.0]], h=1e-5)
        assert rep.ok and rep.max_rel_err < 1e-4

    @pytest.mark.parametrize("mode", ["isotropic", "anisotropic"])
    def test_random_instances(self, mode):
        worst = 0.0
        for seed in range(25):
            rng = np.random.default_rng(seed)
            pts, labels, kernel, q = random_instance(rng, 8, 4, mode=mode)
            rep = finite_diff_check(pts, labels, kernel, 1.0, q, h=1e-5, seed=seed)
            if rep.unstable:
                continue
            assert rep.ok, rep.error
            worst = max(worst, rep.max_rel_err)
        assert worst < 1e-4

    @settings(max_examples=15)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_report_table_lists_every_coordinate(self, seed):
        rng = np.random.default_rng(seed)
        pts, labels, kernel, q = random_instance(rng, 6, 2)
        rep = finite_diff_check(pts, labels, kernel, 1.0, q, h=1e-5)
        if rep.ok:
            assert len(rep.rows) == 6 * 3 + 3 + 2 * 3
            assert rep.table().count("\n") == len(rep.rows)
