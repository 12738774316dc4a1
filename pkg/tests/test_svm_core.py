import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svmshape.errors import NoConvergence, SingleClass, TooLarge
from svmshape.shapes import SVM_PM1, LabeledPointSet
from svmshape.svm_core import (ANISOTROPIC, ISOTROPIC, KernelParams, as_point_set, brute_force_dual, discriminant,
                               fit, format_model, gram_matrix, kernel_eval, kernel_matrix, parse_model, solve_dual)

ISO1 = KernelParams(ISOTROPIC, [1.0])


def two_points(c=1.0):
    return LabeledPointSet([[1, 0, 0], [-1, 0, 0]], [1, -1], SVM_PM1), c


def random_problem(rng, n, mode=None):
    mode = mode or (ANISOTROPIC if rng.random() < 0.5 else ISOTROPIC)
    pts = rng.uniform(-0.5, 0.5, (n, 3))
    labels = rng.choice([-1, 1], n)
    labels[0], labels[1] = 1, -1
    sigma = rng.uniform(0.2, 1.5, 3 if mode == ANISOTROPIC else 1)
    return LabeledPointSet(pts, labels, SVM_PM1), KernelParams(mode, sigma)


class TestKernel:
    def test_self_similarity(self):
        assert kernel_eval([0.1, 0.2, 0.3], [0.1, 0.2, 0.3], ISO1) == 1.0

    def test_isotropic_value(self):
        assert kernel_eval([1, 1, 0], [0, 0, 0], ISO1) == pytest.approx(math.exp(-1), rel=1e-15)

    def test_anisotropic_value(self):
        assert kernel_eval([1, 0, 0], [0, 0, 0], KernelParams(ANISOTROPIC, [1, 1, 1])) == pytest.approx(
            math.exp(-1), rel=1e-15)

    @pytest.mark.parametrize("sigma", [[0.0], [1e-5], [math.inf], [-1.0]])
    def test_sigma_floor(self, sigma):
        with pytest.raises(ValueError):
            KernelParams(ISOTROPIC, sigma)

    def test_wrong_sigma_count(self):
        with pytest.raises(ValueError):
            KernelParams(ISOTROPIC, [1.0, 2.0])

    @given(st.lists(st.floats(-0.5, 0.5), min_size=6, max_size=6), st.floats(0.05, 2.0))
    def test_symmetry_and_reconciliation(self, coords, s):
        a, b = np.array(coords[:3]), np.array(coords[3:])
        aniso = KernelParams(ANISOTROPIC, [s, s, s])
        iso = KernelParams(ISOTROPIC, [s / math.sqrt(2)])
        assert kernel_eval(a, b, aniso) == kernel_eval(b, a, aniso)
        assert kernel_eval(a, b, aniso) == pytest.approx(kernel_eval(a, b, iso), rel=1e-12, abs=1e-300)


class TestGram:
    def test_unit_diagonal_and_range(self, rng):
        g = gram_matrix(rng.uniform(-0.5, 0.5, (10, 3)), KernelParams(ANISOTROPIC, [0.3, 0.2, 0.5]))
        assert np.all(np.diag(g) == 1.0)
        assert np.all((g > 0) & (g <= 1))
        np.testing.assert_array_equal(g, g.T)

    def test_identical_points(self):
        np.testing.assert_array_equal(gram_matrix(np.zeros((2, 3)), ISO1), np.ones((2, 2)))

    def test_psd(self, rng):
        for _ in range(20):
            g = gram_matrix(rng.uniform(-0.5, 0.5, (3, 3)), KernelParams(ISOTROPIC, [rng.uniform(0.1, 2)]))
            assert np.linalg.eigvalsh(g).min() >= -1e-10


class TestSolveDual:
    def test_symmetric_pair(self):
        train, C = two_points()
        m = solve_dual(train, ISO1, C)
        assert m.alpha[0] == pytest.approx(m.alpha[1], abs=1e-12)
        assert m.alpha[0] > 0
        assert m.bias == pytest.approx(0.0, abs=1e-12)
        # Unconstrained optimum is 1 / (1 - K) > C, so both sit at the bound.
        assert m.alpha[0] == pytest.approx(min(1.0, 1.0 / (1 - math.exp(-2.0))), abs=1e-12)

    def test_symmetric_pair_free(self):
        train, _ = two_points()
        m = solve_dual(train, ISO1, 10.0)
        assert m.alpha[0] == pytest.approx(1.0 / (1 - math.exp(-2.0)), rel=1e-12)

    def test_single_class(self):
        with pytest.raises(SingleClass):
            solve_dual(LabeledPointSet(np.eye(3), [1, 1, 1], SVM_PM1), ISO1)

    def test_iteration_cap(self, rng):
        train, k = random_problem(rng, 30, ANISOTROPIC)
        with pytest.raises(NoConvergence):
            fit(train.points, train.labels, k, 1.0, tol=1e-8, max_iter=1)

    def test_random_six_matches_oracle(self, rng):
        train, k = random_problem(rng, 6)
        assert solve_dual(train, k).dual_objective() == pytest.approx(
            brute_force_dual(train, k).dual_objective(), abs=1e-6)

    @settings(max_examples=200)
    @given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 8), C=st.sampled_from([0.5, 1.0, 10.0]))
    def test_matches_brute_force(self, seed, n, C):
        train, k = random_problem(np.random.default_rng(seed), n)
        m = solve_dual(train, k, C)
        ref = brute_force_dual(train, k, C)
        assert m.dual_objective() <= ref.dual_objective() + 1e-6
        assert abs(m.dual_objective() - ref.dual_objective()) < 1e-6
        assert m.kkt_residual <= 1e-8
        assert np.all((m.alpha >= 0) & (m.alpha <= C))
        assert abs(m.alpha @ m.labels) <= 1e-8

    @settings(max_examples=50)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_margin_points_classified(self, seed):
        train, k = random_problem(np.random.default_rng(seed), 16)
        m = solve_dual(train, k, 1.0)
        inside_box = m.alpha < 1.0 - 1e-9
        p = discriminant(m, train.points)
        assert np.all(np.sign(p[inside_box]) == train.labels[inside_box])


class TestDiscriminant:
    def test_symmetric_pair_values(self):
        train, C = two_points()
        m = solve_dual(train, ISO1, C)
        assert discriminant(m, [0, 0, 0]) == pytest.approx(0.0, abs=1e-12)
        assert discriminant(m, [1, 0, 0]) > 0

    def test_far_query_returns_bias(self, rng):
        train, k = random_problem(rng, 8, ISOTROPIC)
        m = solve_dual(train, KernelParams(ISOTROPIC, [0.05]))
        assert discriminant(m, [100, 100, 100]) == m.bias

    def test_batched_equals_single(self, rng):
        train, k = random_problem(rng, 8)
        m = solve_dual(train, k)
        q = rng.uniform(-0.5, 0.5, (5, 3))
        np.testing.assert_allclose(discriminant(m, q), [discriminant(m, x) for x in q], rtol=0, atol=1e-14)

    def test_formula(self, rng):
        train, k = random_problem(rng, 8)
        m = solve_dual(train, k)
        q = rng.uniform(-0.5, 0.5, (7, 3))
        expected = kernel_matrix(q, m.support_points, k) @ (m.alpha * m.labels) + m.bias
        np.testing.assert_allclose(discriminant(m, q), expected, atol=1e-14)


class TestBruteForce:
    def test_pair_matches_solver(self):
        train, C = two_points()
        a, b = solve_dual(train, ISO1, C), brute_force_dual(train, ISO1, C)
        np.testing.assert_allclose(a.alpha, b.alpha, atol=1e-8)
        assert a.bias == pytest.approx(b.bias, abs=1e-8)

    def test_too_large(self, rng):
        train, k = random_problem(rng, 9)
        with pytest.raises(TooLarge):
            brute_force_dual(train, k)

    def test_tetrahedron_xor(self):
        pts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) * 0.3
        train = LabeledPointSet(pts, [1, 1, -1, -1], SVM_PM1)
        m = brute_force_dual(train, KernelParams(ISOTROPIC, [0.4]))
        assert m.dual_objective() <= 0.0
        assert np.all((m.alpha >= 0) & (m.alpha <= 1))


class TestModelFile:
    def test_round_trip_bit_exact(self, rng):
        train, k = random_problem(rng, 8, ANISOTROPIC)
        m = solve_dual(train, k)
        back = parse_model(format_model(m))
        q = rng.uniform(-0.5, 0.5, (50, 3))
        np.testing.assert_array_equal(discriminant(back, q), discriminant(m, q))
        np.testing.assert_array_equal(as_point_set(back).points, train.points)

    def test_rejects_other_files(self):
        with pytest.raises(ValueError):
            parse_model("not-a-model 1\n")
