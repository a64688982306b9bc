import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ndkf.linalg import NoConvergence, NotSPD, invert_spd, spectral_norm, symmetrize


def seeded_spd(seed, n=3, jitter=1.0):
    gen = np.random.Generator(np.random.PCG64(seed))
    a = gen.normal(size=(n, n))
    return a @ a.T + jitter * np.eye(n)


class TestInvertSpd:
    def test_identity(self):
        np.testing.assert_allclose(invert_spd(np.eye(2)), np.eye(2), atol=1e-14)

    def test_diagonal(self):
        np.testing.assert_allclose(
            invert_spd(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]), atol=1e-14
        )

    def test_random_spd_multiplication_oracle(self):
        for seed in range(20):
            a = seeded_spd(seed, n=4)
            np.testing.assert_allclose(a @ invert_spd(a), np.eye(4), atol=1e-9)

    def test_result_is_symmetric(self):
        inv = invert_spd(seeded_spd(3, n=5))
        np.testing.assert_array_equal(inv, inv.T)

    def test_rejects_indefinite(self):
        with pytest.raises(NotSPD):
            invert_spd(np.array([[1.0, 2.0], [2.0, 1.0]]))  # eigenvalues 3, -1

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSPD):
            invert_spd(np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_rejects_nonsquare(self):
        with pytest.raises(NotSPD):
            invert_spd(np.ones((2, 3)))

    def test_rejects_nonfinite(self):
        with pytest.raises(NotSPD):
            invert_spd(np.array([[np.inf, 0.0], [0.0, 1.0]]))

    @given(st.integers(0, 500))
    @settings(max_examples=40, deadline=None, derandomize=True)
    def test_double_inversion_roundtrip(self, seed):
        a = seeded_spd(seed, n=3)
        assert np.linalg.cond(a) < 1e6
        np.testing.assert_allclose(invert_spd(invert_spd(a)), a, atol=1e-8)


class TestSpectralNorm:
    def test_identity(self):
        assert spectral_norm(np.eye(2)) == pytest.approx(1.0, abs=1e-12)

    def test_diagonal(self):
        assert spectral_norm(np.diag([0.3, 0.9])) == pytest.approx(0.9, abs=1e-12)

    def test_nilpotent(self):
        m = np.array([[0.0, 1.0], [0.0, 0.0]])
        oracle = np.linalg.svd(m, compute_uv=False)[0]
        assert oracle == pytest.approx(1.0)
        assert spectral_norm(m) == pytest.approx(oracle, abs=1e-10)

    def test_matches_svd_oracle(self):
        gen = np.random.Generator(np.random.PCG64(42))
        for shape in [(2, 2), (3, 3), (4, 2), (2, 5)]:
            for _ in range(10):
                m = gen.normal(size=shape)
                oracle = np.linalg.svd(m, compute_uv=False)[0]
                assert spectral_norm(m) == pytest.approx(oracle, rel=1e-9)

    def test_zero_matrix(self):
        assert spectral_norm(np.zeros((3, 3))) == 0.0

    def test_near_tied_top_singular_values(self):
        assert spectral_norm(np.diag([1.0, 1.0 - 1e-7, 0.3])) == pytest.approx(1.0, abs=1e-6)
        assert spectral_norm(np.diag([1.0, 1.0 - 1e-4])) == pytest.approx(1.0, abs=1e-4)

    @given(st.floats(-50.0, 50.0), st.integers(0, 200))
    @settings(max_examples=40, deadline=None, derandomize=True)
    def test_homogeneity(self, c, seed):
        gen = np.random.Generator(np.random.PCG64(seed))
        a = gen.normal(size=(3, 3))
        assert spectral_norm(c * a) == pytest.approx(abs(c) * spectral_norm(a), abs=1e-9)

    @given(st.integers(0, 200))
    @settings(max_examples=40, deadline=None, derandomize=True)
    def test_bounds_basis_actions(self, seed):
        gen = np.random.Generator(np.random.PCG64(seed))
        a = gen.normal(size=(3, 3))
        norm = spectral_norm(a)
        for i in range(3):
            assert np.linalg.norm(a[:, i]) <= norm + 1e-9

    def test_no_convergence_when_capped(self):
        with pytest.raises(NoConvergence):
            spectral_norm(np.diag([1.0, 0.5, 0.1]), max_iter=1)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            spectral_norm(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_symmetrize():
    m = np.array([[1.0, 2.0], [0.0, 1.0]])
    s = symmetrize(m)
    np.testing.assert_array_equal(s, s.T)
    np.testing.assert_allclose(s, [[1.0, 1.0], [1.0, 1.0]])
