import numpy as np
import pytest

from ndkf.filtering import (
    Belief,
    NonFiniteState,
    SingularInnovation,
    Stage,
    predict,
    update,
    update_with_gain,
)
from ndkf.models import Model, nominal_drift_model


def linear_model(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return Model(lambda x, k: a @ x, lambda x, k: a, a.shape[0])


def fused(mean, cov, time=0):
    return Belief(np.asarray(mean, dtype=float), np.asarray(cov, dtype=float), Stage.FUSED, time)


class TestPredict:
    def test_identity_dynamics_zero_q_keeps_moments(self):
        b = fused([1.0, 2.0], [[0.3, 0.1], [0.1, 0.4]], time=5)
        out = predict(b, linear_model(np.eye(2)), np.zeros((2, 2)), 5)
        np.testing.assert_array_equal(out.mean, b.mean)
        np.testing.assert_allclose(out.cov, b.cov, atol=1e-15)
        assert out.stage is Stage.PREDICTED
        assert out.time == 6

    def test_scaled_linear_covariance(self):
        b = fused([0.0, 0.0], np.eye(2))
        out = predict(b, linear_model(0.5 * np.eye(2)), 0.001 * np.eye(2), 0)
        np.testing.assert_allclose(out.cov, 0.251 * np.eye(2), atol=1e-12)

    def test_nominal_drift_mean(self):
        out = predict(fused([0.0, 0.0], 0.5 * np.eye(2)), nominal_drift_model(), np.zeros((2, 2)), 0)
        np.testing.assert_allclose(out.mean, [0.05, 0.0], atol=1e-15)

    def test_stage_guard(self):
        predicted = Belief(np.zeros(2), np.eye(2), Stage.PREDICTED, 0)
        with pytest.raises(ValueError):
            predict(predicted, linear_model(np.eye(2)), np.zeros((2, 2)), 0)

    def test_nonfinite_model_output(self):
        bad = Model(lambda x, k: np.array([np.inf, 0.0]), lambda x, k: np.eye(2), 2)
        with pytest.raises(NonFiniteState):
            predict(fused([0.0, 0.0], np.eye(2)), bad, np.zeros((2, 2)), 0)


def h_first_coordinate():
    return Model(lambda x, k: np.array([x[0]]), lambda x, k: np.array([[1.0, 0.0]]), 1)


class TestUpdate:
    def test_uninformative_measurement_limit(self):
        prior = Belief(np.zeros(2), np.eye(2), Stage.PREDICTED, 1)
        post, rec = update(prior, np.array([3.0]), h_first_coordinate(), np.array([[1e12]]))
        assert rec.gain_norm < 1e-9
        assert np.max(np.abs(post.mean - prior.mean)) < 1e-6

    def test_hand_evaluated_update(self):
        prior = Belief(np.zeros(2), np.eye(2), Stage.PREDICTED, 3)
        post, rec, gain, jac = update_with_gain(
            prior, np.array([1.0]), h_first_coordinate(), np.array([[1.0]]), node=2
        )
        np.testing.assert_allclose(rec.innovation_cov, [[2.0]], atol=1e-14)
        np.testing.assert_allclose(gain, [[0.5], [0.0]], atol=1e-14)
        np.testing.assert_allclose(post.mean, [0.5, 0.0], atol=1e-14)
        np.testing.assert_allclose(post.cov, np.diag([0.5, 1.0]), atol=1e-14)
        np.testing.assert_array_equal(jac, [[1.0, 0.0]])
        assert post.stage is Stage.UPDATED
        assert post.time == 3
        assert rec.node == 2 and rec.time == 3
        assert rec.innovation[0] == pytest.approx(1.0)
        assert rec.gain_norm == pytest.approx(0.5, abs=1e-12)

    def test_zero_innovation_keeps_mean_shrinks_cov(self):
        prior = Belief(np.array([0.4, -0.2]), 0.3 * np.eye(2), Stage.PREDICTED, 0)
        post, rec = update(prior, np.array([0.4]), h_first_coordinate(), np.array([[0.01]]))
        np.testing.assert_array_equal(post.mean, prior.mean)
        assert rec.innovation[0] == pytest.approx(0.0)
        assert np.all(np.linalg.eigvalsh(prior.cov - post.cov) >= -1e-12)
        assert np.trace(post.cov) < np.trace(prior.cov)

    def test_stage_guard(self):
        with pytest.raises(ValueError):
            update(fused([0.0, 0.0], np.eye(2)), np.array([0.0]), h_first_coordinate(), np.array([[1.0]]))

    def test_posterior_never_exceeds_prior(self):
        gen = np.random.Generator(np.random.PCG64(3))
        for _ in range(25):
            a = gen.normal(size=(2, 2))
            cov = a @ a.T + 0.1 * np.eye(2)
            prior = Belief(gen.normal(size=2), cov, Stage.PREDICTED, 0)
            v = gen.normal(size=2)
            h = Model(lambda x, k: np.array([v @ x]), lambda x, k: v[None, :], 1)
            post, _ = update(prior, gen.normal(size=1), h, np.array([[0.05]]))
            assert np.min(np.linalg.eigvalsh(prior.cov - post.cov)) >= -1e-9

    def test_invariant_to_input_resymmetrization(self):
        skew = np.array([[0.5, 0.10000000005], [0.09999999995, 0.4]])
        sym = 0.5 * (skew + skew.T)
        y = np.array([0.7])
        h, r = h_first_coordinate(), np.array([[0.01]])
        post_a, _ = update(Belief(np.zeros(2), skew, Stage.PREDICTED, 0), y, h, r)
        post_b, _ = update(Belief(np.zeros(2), sym, Stage.PREDICTED, 0), y, h, r)
        np.testing.assert_array_equal(post_a.mean, post_b.mean)
        np.testing.assert_array_equal(post_a.cov, post_b.cov)

    def test_singular_innovation(self):
        blind = Model(lambda x, k: np.array([0.0]), lambda x, k: np.zeros((1, 2)), 1)
        prior = Belief(np.zeros(2), np.eye(2), Stage.PREDICTED, 0)
        with pytest.raises(SingularInnovation):
            update(prior, np.array([1.0]), blind, np.array([[0.0]]))

    def test_measurement_dim_guard(self):
        prior = Belief(np.zeros(2), np.eye(2), Stage.PREDICTED, 0)
        with pytest.raises(ValueError):
            update(prior, np.array([1.0, 2.0]), h_first_coordinate(), np.array([[1.0]]))


class TestBeliefValidation:
    def test_rejects_nonfinite_mean(self):
        with pytest.raises(NonFiniteState):
            Belief(np.array([np.nan, 0.0]), np.eye(2), Stage.FUSED, 0)

    def test_rejects_asymmetric_covariance(self):
        with pytest.raises(ValueError):
            Belief(np.zeros(2), np.array([[1.0, 0.1], [0.0, 1.0]]), Stage.FUSED, 0)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            Belief(np.zeros(3), np.eye(2), Stage.FUSED, 0)


def test_linear_kalman_filter_oracle_100_steps():
    """Independent textbook KF recursions must match predict/update exactly."""
    a_mat = 0.9 * np.eye(2)
    h_mat = np.array([[1.0, 0.5], [0.0, 1.0]])
    q_mat = 0.001 * np.eye(2)
    r_mat = 0.01 * np.eye(2)
    dyn = linear_model(a_mat)
    meas = Model(lambda x, k: h_mat @ x, lambda x, k: h_mat, 2)

    gen = np.random.Generator(np.random.PCG64(77))
    x_true = np.array([1.0, -1.0])
    belief = fused([0.0, 0.0], 0.5 * np.eye(2))
    ref_mean, ref_cov = belief.mean.copy(), belief.cov.copy()

    for k in range(100):
        x_true = a_mat @ x_true + gen.multivariate_normal(np.zeros(2), q_mat)
        y = h_mat @ x_true + gen.multivariate_normal(np.zeros(2), r_mat)

        post, _ = update(predict(belief, dyn, q_mat, k), y, meas, r_mat)
        belief = Belief(post.mean, post.cov, Stage.FUSED, post.time)

        ref_mean = a_mat @ ref_mean
        ref_cov = a_mat @ ref_cov @ a_mat.T + q_mat
        s = h_mat @ ref_cov @ h_mat.T + r_mat
        gain = ref_cov @ h_mat.T @ np.linalg.inv(s)
        ref_mean = ref_mean + gain @ (y - h_mat @ ref_mean)
        ref_cov = (np.eye(2) - gain @ h_mat) @ ref_cov

        assert np.max(np.abs(belief.mean - ref_mean)) < 1e-9
        assert np.max(np.abs(belief.cov - ref_cov)) < 1e-9
