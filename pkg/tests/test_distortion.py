import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semrd.distortion import (
    DistortionMatrix,
    SemanticSource,
    bayes_predictor,
    combined_distortion,
    expected_task_distortion,
    hamming_matrix,
    mse_matrix,
    random_source,
    task_distortion_matrix,
    task_distortion_mi_form,
)
from semrd.prob import ConditionalDistribution, DimensionError, Distribution, kl_divergence, mutual_information, random_conditional

seeds = st.integers(0, 2**32 - 1)


def source_mi(src):
    return mutual_information(np.asarray(src.px)[:, None] * np.asarray(src.py_given_x))


def random_instance(seed, nx=4, nz=3, ny=2):
    src = random_source(seed, nx, nz, ny)
    mapping = np.asarray(random_conditional(seed + 7, nx, nz))
    return src, mapping


class TestDistortionMatrix:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            DistortionMatrix([[0.0, -1.0]])

    def test_rejects_infinite_pixel(self):
        with pytest.raises(ValueError):
            DistortionMatrix([[0.0, np.inf]])

    def test_rejects_all_inf_row(self):
        with pytest.raises(ValueError):
            DistortionMatrix([[np.inf, np.inf]], "combined")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            DistortionMatrix([[0.0]], "psnr")


class TestMSE:
    def test_same_alphabet_zero_diagonal(self):
        src = random_source(0, 4, 3, 2)
        src = SemanticSource(src.px, src.py_given_x, src.embeddings)
        assert np.all(np.diag(np.asarray(mse_matrix(src))) == 0)

    def test_1d_hand(self):
        src = SemanticSource(Distribution.uniform(2), ConditionalDistribution(np.eye(2)), np.array([0.0, 1.0]))
        np.testing.assert_array_equal(np.asarray(mse_matrix(src)), [[0, 1], [1, 0]])

    def test_double_loop(self):
        src = random_source(3, 3, 2, 2)
        d = np.asarray(mse_matrix(src))
        for i, j in itertools.product(range(3), range(2)):
            diff = src.embeddings[i] - src.xhat_embeddings[j]
            assert d[i, j] == pytest.approx(float(diff @ diff), rel=1e-14)

    def test_dimension_mismatch(self):
        src = SemanticSource(Distribution.uniform(2), ConditionalDistribution(np.eye(2)), np.zeros((2, 2)),
                             xhat_embeddings=np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            mse_matrix(src)

    def test_override(self):
        d = [[0, 2, 1], [2, 0, 1]]
        src = SemanticSource(Distribution.uniform(2), ConditionalDistribution(np.eye(2)), np.zeros(2), d_rd=d)
        assert src.n_recon == 3
        np.testing.assert_array_equal(np.asarray(src.pixel_distortion()), d)


class TestHamming:
    def test_sizes(self):
        np.testing.assert_array_equal(np.asarray(hamming_matrix(1)), [[0]])
        np.testing.assert_array_equal(np.asarray(hamming_matrix(2)), [[0, 1], [1, 0]])
        h = np.asarray(hamming_matrix(4))
        assert np.all(np.diag(h) == 0) and h.sum() == 12


class TestTaskDistortion:
    def test_matching_rows_zero_diagonal(self):
        pyx = random_conditional(1, 3, 2)
        assert np.all(np.diag(np.asarray(task_distortion_matrix(pyx, pyx))) == 0)

    def test_hand(self):
        d = np.asarray(task_distortion_matrix([[1.0, 0.0]], [[0.5, 0.5]]))
        assert d[0, 0] == pytest.approx(np.log(2))

    def test_elementwise(self):
        p = np.asarray(random_conditional(2, 3, 4))
        q = np.asarray(random_conditional(3, 2, 4))
        d = np.asarray(task_distortion_matrix(p, q))
        for i, j in itertools.product(range(3), range(2)):
            assert d[i, j] == pytest.approx(kl_divergence(p[i], q[j]), abs=1e-14)

    def test_infinite_entries_allowed(self):
        d = np.asarray(task_distortion_matrix([[0.5, 0.5]], [[1.0, 0.0]]))
        assert np.isinf(d[0, 0])

    def test_label_mismatch(self):
        with pytest.raises(DimensionError):
            task_distortion_matrix([[1.0]], [[0.5, 0.5]])


class TestExpectedTaskDistortion:
    def test_identity(self):
        src = random_source(4, 3, 3, 2)
        src = SemanticSource(src.px, src.py_given_x, src.embeddings)
        assert expected_task_distortion(src, np.eye(3), src.py_given_x) == pytest.approx(0.0, abs=1e-15)

    def test_collapse_gives_source_mi(self):
        src = random_source(5, 4, 3, 2)
        m = np.zeros((4, 3))
        m[:, 1] = 1.0
        q = np.tile(src.label_marginal(), (3, 1))
        assert expected_task_distortion(src, m, q) == pytest.approx(source_mi(src), abs=1e-12)

    def test_mismatch(self):
        src = random_source(5, 4, 3, 2)
        with pytest.raises(DimensionError):
            expected_task_distortion(src, np.ones((3, 3)) / 3, np.ones((3, 2)) / 2)

    def test_mi_form_limits(self):
        src = random_source(6, 3, 3, 2)
        assert task_distortion_mi_form(src, np.eye(3)) == pytest.approx(0.0, abs=1e-12)
        const = np.tile([0.2, 0.3, 0.5], (3, 1))
        assert task_distortion_mi_form(src, const) == pytest.approx(source_mi(src), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(seeds, st.integers(1, 5), st.integers(1, 4), st.integers(1, 4))
    def test_kl_form_equals_mi_form(self, seed, nx, nz, ny):
        src, m = random_instance(seed, nx, nz, ny)
        kl_form = expected_task_distortion(src, m, bayes_predictor(src, m))
        assert kl_form >= 0
        assert kl_form == pytest.approx(task_distortion_mi_form(src, m), abs=1e-9)


class TestBayesPredictor:
    def test_sum_over_x(self):
        src, m = random_instance(11)
        px, pyx = np.asarray(src.px), np.asarray(src.py_given_x)
        pred = bayes_predictor(src, m)
        for z in range(3):
            post = px * m[:, z] / np.sum(px * m[:, z])
            np.testing.assert_allclose(pred[z], post @ pyx, atol=1e-14)

    def test_dead_column_gets_marginal(self):
        src = random_source(2, 4, 3, 2)
        m = np.tile([0.5, 0.5, 0.0], (4, 1))
        np.testing.assert_allclose(bayes_predictor(src, m)[2], src.label_marginal())


class TestCombined:
    def test_beta_zero(self):
        p = hamming_matrix(3)
        t = task_distortion_matrix(random_conditional(0, 3, 2), random_conditional(1, 3, 2))
        np.testing.assert_array_equal(np.asarray(combined_distortion(p, t, 0.0)), np.asarray(p))

    def test_zero_task(self):
        p = hamming_matrix(3)
        t = DistortionMatrix(np.zeros((3, 3)), "task")
        np.testing.assert_array_equal(np.asarray(combined_distortion(p, t, 1.0)), np.asarray(p))

    def test_elementwise(self):
        src = random_source(9, 4, 3, 2)
        p = src.pixel_distortion()
        t = task_distortion_matrix(src.py_given_x, random_conditional(10, 3, 2))
        c = np.asarray(combined_distortion(p, t, 0.1))
        for i, j in itertools.product(range(4), range(3)):
            assert c[i, j] == pytest.approx(np.asarray(p)[i, j] + 0.1 * np.asarray(t)[i, j], rel=1e-14)

    def test_monotone_in_beta(self):
        src = random_source(9, 4, 3, 2)
        p = src.pixel_distortion()
        t = task_distortion_matrix(src.py_given_x, random_conditional(10, 3, 2))
        prev = None
        for beta in [0, 0.1, 0.5, 1, 4]:
            c = np.asarray(combined_distortion(p, t, beta))
            if prev is not None:
                assert np.all(c >= prev)
            prev = c

    def test_errors(self):
        with pytest.raises(ValueError):
            combined_distortion(hamming_matrix(2), hamming_matrix(2), -1)
        with pytest.raises(DimensionError):
            combined_distortion(hamming_matrix(2), DistortionMatrix(np.zeros((2, 3)), "task"), 1)
