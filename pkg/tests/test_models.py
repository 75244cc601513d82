import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from lapsrl.models import (
    BIMODAL_ARM_PRIOR,
    GaussianPosterior,
    MixturePrior,
    blr_posterior,
    gaussian_mean_conjugate,
    lsi_gaussian_mean,
    lsi_mixture_lower_bound,
    make_model,
)

from oracles import blr_vec_posterior, central_diff, conjugate_by_grid


# ---------------------------------------------------------------------------
# conjugate oracle


def test_conjugate_single_point():
    p = gaussian_mean_conjugate(GaussianPosterior(0.0, 1.0), [1.0], 0.25)
    gm, gv = conjugate_by_grid(0.0, 1.0, [1.0], 0.25)
    assert p.mean == pytest.approx(0.8, abs=1e-12) and p.variance == pytest.approx(0.2, abs=1e-12)
    assert p.mean == pytest.approx(gm, abs=1e-6) and p.variance == pytest.approx(gv, abs=1e-6)


def test_conjugate_twenty_equal_points():
    p = gaussian_mean_conjugate(GaussianPosterior(0.0, 1.0), [0.1] * 20, 0.25)
    assert p.mean == pytest.approx(8 / 81, abs=1e-12)
    assert p.variance == pytest.approx(1 / 81, abs=1e-12)
    gm, gv = conjugate_by_grid(0.0, 1.0, [0.1] * 20, 0.25)
    assert p.mean == pytest.approx(gm, abs=1e-6) and p.variance == pytest.approx(gv, abs=1e-6)


def test_conjugate_empty_returns_prior():
    prior = GaussianPosterior(0.3, 2.0)
    assert gaussian_mean_conjugate(prior, [], 0.25) == prior


def test_conjugate_against_grid_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mu0, var0 = rng.uniform(-1, 1), rng.uniform(0.3, 2)
        sigma2 = rng.uniform(0.1, 2)
        data = rng.normal(rng.uniform(-1, 1), 1, size=int(rng.integers(0, 30)))
        p = gaussian_mean_conjugate(GaussianPosterior(mu0, var0), data, sigma2)
        gm, gv = conjugate_by_grid(mu0, var0, data, sigma2, lo=-8, hi=8)
        assert round(p.mean, 4) == pytest.approx(round(gm, 4), abs=1.01e-4)
        assert round(p.variance, 4) == pytest.approx(round(gv, 4), abs=1.01e-4)


def test_gaussian_posterior_rejects_bad_variance():
    with pytest.raises(ValueError):
        GaussianPosterior(0.0, 0.0)
    with pytest.raises(ValueError):
        gaussian_mean_conjugate(GaussianPosterior(0, 1), [1.0], 0.0)


# ---------------------------------------------------------------------------
# LSI constants


@pytest.mark.parametrize("args, want", [((1, 0.25, 4), 17.0), ((1, 1, 0), 1.0), ((0.5, 0.25, 10), 42.0)])
def test_lsi_gaussian_examples(args, want):
    assert abs(lsi_gaussian_mean(*args) - want) <= 1e-12


def test_lsi_gaussian_affine_in_n():
    for s0, s in [(1.0, 0.25), (0.3, 2.0), (5.0, 0.07)]:
        vals = [lsi_gaussian_mean(s0, s, n) for n in range(0, 50)]
        assert np.allclose(np.diff(vals), 1 / s, rtol=1e-12, atol=0)
        assert vals[0] == 1 / s0


def test_lsi_mixture_examples():
    assert abs(lsi_mixture_lower_bound(2, 0.5, 1, 100) - 50 / (8 * (1 - math.log(0.5)))) <= 1e-12
    assert round(lsi_mixture_lower_bound(2, 0.5, 1, 100), 4) == 3.6914
    assert lsi_mixture_lower_bound(1, 1, 1, 9.0) == 9.0 / 4
    want = 0.5 * 0.25 * 40 / (16 * (1 - math.log(0.25)))
    assert abs(lsi_mixture_lower_bound(4, 0.25, 0.5, 40) - want) <= 1e-12
    assert abs(want - 0.1310) < 5e-5


def test_lsi_mixture_never_exceeds_min_alpha():
    rng = np.random.default_rng(3)
    for _ in range(10_000):
        k = int(rng.integers(1, 20))
        min_p = rng.uniform(1e-6, 1)
        delta = rng.uniform(1e-6, 1)
        a = 10 ** rng.uniform(-3, 6)
        assert lsi_mixture_lower_bound(k, min_p, delta, a) <= a


@pytest.mark.parametrize("bad", [(2, 0.0, 1, 1), (2, 1.5, 1, 1), (2, 0.5, 0, 1), (2, 0.5, 1, 0), (0, 0.5, 1, 1)])
def test_lsi_mixture_validation(bad):
    with pytest.raises(ValueError):
        lsi_mixture_lower_bound(*bad)


def test_lsi_gaussian_validation():
    with pytest.raises(ValueError):
        lsi_gaussian_mean(0, 1, 1)
    with pytest.raises(ValueError):
        lsi_gaussian_mean(1, 1, -1)


# ---------------------------------------------------------------------------
# mixture prior


def test_mixture_logpdf_matches_scipy():
    th = np.array([-1.3, 0.2, 2.5])
    want = np.log(0.5 * norm.pdf(th, 0, 0.5) + 0.5 * norm.pdf(th, 1, 1)).sum()
    assert BIMODAL_ARM_PRIOR.logpdf(th) == pytest.approx(want, rel=1e-12)


def test_mixture_validation():
    with pytest.raises(ValueError):
        MixturePrior((0.5, 0.4), (0, 1), (1, 1))
    with pytest.raises(ValueError):
        MixturePrior((0.5, 0.5), (0, 1), (1, 0))
    with pytest.raises(ValueError):
        MixturePrior((1.0,), (0, 1), (1,))


def test_mixture_dict_round_trip():
    assert MixturePrior.from_dict(BIMODAL_ARM_PRIOR.to_dict()) == BIMODAL_ARM_PRIOR


def test_mixture_sample_moments():
    x = BIMODAL_ARM_PRIOR.sample(np.random.default_rng(0), 200_000)
    assert x.mean() == pytest.approx(0.5, abs=0.01)
    assert x.var() == pytest.approx(0.5 * 0.25 + 0.5 * 1 + 0.25, abs=0.02)


# ---------------------------------------------------------------------------
# gradients


def model_cases():
    return [
        ("gaussian_bandit_arm", {}, 1),
        ("mixture_prior_arm", {}, 1),
        ("linear_dynamics", {}, 9),
        ("mlp_dynamics", {}, 10),
    ]


def random_probe(model, width, rng):
    if model.kind == "mlp_dynamics":
        theta = rng.normal(0, math.sqrt(0.1), model.dim)
    else:
        theta = rng.normal(0, 1.0, model.dim)
    X = rng.normal(0, 1.0, (int(rng.integers(1, 6)), width))
    return theta, X


@pytest.mark.parametrize("kind, cfg, width", model_cases())
def test_gradient_matches_finite_differences(kind, cfg, width):
    model = make_model(kind, cfg)
    rng = np.random.default_rng(7)
    tol = 1e-4 if kind == "mlp_dynamics" else 1e-5
    for _ in range(100):
        theta, X = random_probe(model, width, rng)
        g = model.grad_f(theta, X)
        v = rng.standard_normal(model.dim)
        v /= np.linalg.norm(v)
        F = lambda t: model.energy_terms(theta + t[0] * v, X).mean()  # noqa: E731
        fd = central_diff(F, np.zeros(1), 0)
        assert abs(fd - g @ v) <= tol * max(1.0, abs(fd))
        # and one coordinate directly
        j = int(rng.integers(model.dim))
        fdj = central_diff(lambda t: model.energy_terms(t, X).mean(), theta, j)
        assert abs(fdj - g[j]) <= tol * max(1.0, abs(fdj))


@pytest.mark.parametrize("kind, cfg, width", model_cases())
def test_prior_and_likelihood_gradients_separately(kind, cfg, width):
    model = make_model(kind, cfg)
    rng = np.random.default_rng(8)
    theta, X = random_probe(model, width, rng)
    for j in rng.integers(model.dim, size=5):
        fd = central_diff(model.log_prior, theta, int(j))
        assert model.grad_log_prior(theta)[j] == pytest.approx(fd, rel=1e-5, abs=1e-7)
        fd = central_diff(lambda t: model.loglik(t, X).mean(), theta, int(j))
        assert model.grad_loglik(theta, X)[j] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_minibatch_rows_average():
    model = make_model("linear_dynamics")
    rng = np.random.default_rng(1)
    theta, X = rng.normal(size=20), rng.normal(size=(6, 9))
    rows = np.array([1, 4, 4])
    per = [model.grad_f(theta, X[[r]]) for r in rows]
    # single-row energies use n = 1 for the prior share; rebuild with n = 6
    prior_part = -model.grad_log_prior(theta)
    lik = [p - prior_part for p in per]
    want = prior_part / 6 + np.mean(lik, axis=0)
    assert np.allclose(model.grad_f(theta, X, rows), want, rtol=1e-12, atol=1e-12)


def test_bandit_loglik_gradient_example():
    model = make_model("gaussian_bandit_arm", {"sigma2": 0.25})
    assert model.grad_loglik(np.zeros(1), np.array([[1.0]]))[0] == pytest.approx(4.0, abs=1e-12)


def test_linear_gradient_zero_at_truth():
    model = make_model("linear_dynamics", {"prior": {"mean": 0.0, "variance": 1e300}})
    rng = np.random.default_rng(0)
    S = rng.normal(size=(10, 4))
    U = rng.normal(size=(10, 1))
    X = np.hstack([S, U, S])
    theta = model.flatten(np.eye(4), np.zeros((4, 1)))
    assert np.allclose(model.grad_loglik(theta, X), 0.0, atol=1e-14)
    A, B = model.matrices(theta)
    assert np.array_equal(A, np.eye(4)) and np.array_equal(B, np.zeros((4, 1)))


def test_zero_mlp_predicts_zero():
    model = make_model("mlp_dynamics")
    out = model.predict_delta(np.zeros(model.dim), np.random.default_rng(0).normal(size=(5, 6)))
    assert np.array_equal(out, np.zeros((5, 4)))


def test_make_model_unknown_kind():
    with pytest.raises(ValueError):
        make_model("quadratic")


def test_model_data_validation():
    model = make_model("linear_dynamics")
    with pytest.raises(ValueError):
        model.grad_f(np.zeros(20), np.zeros((3, 8)))
    with pytest.raises(ValueError):
        model.grad_f(np.zeros(19), np.zeros((3, 9)))


def test_declared_constants():
    model = make_model("linear_dynamics", {"alpha_scale": 1000})
    assert [model.lsi_alpha(n) for n in (1, 10)] == [1000, 10_000]
    assert model.smooth_L(37) == pytest.approx(1000)
    with pytest.raises(ValueError):
        make_model("linear_dynamics").lsi_alpha(5)


def test_gaussian_arm_constants_exact():
    model = make_model("gaussian_bandit_arm")
    assert model.lsi_alpha(4) == 17.0
    assert model.smooth_L(4) == 17.0 / 4
    alphas = [model.lsi_alpha(n) for n in range(1, 30)]
    assert all(b >= a > 0 for a, b in zip(alphas, alphas[1:]))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 10_000))
def test_lsi_nondecreasing(n):
    for kind in ("gaussian_bandit_arm", "mixture_prior_arm"):
        m = make_model(kind)
        assert 0 < m.lsi_alpha(n) <= m.lsi_alpha(n + 1)


# ---------------------------------------------------------------------------
# Bayesian linear regression


def test_blr_matches_kronecker_oracle():
    rng = np.random.default_rng(5)
    Z = rng.normal(size=(12, 5))
    W = rng.normal(size=(4, 5))
    Y = Z @ W.T + 0.5 * rng.normal(size=(12, 4))
    post = blr_posterior(Z, Y, 1.0, 0.25)
    mean, cov = blr_vec_posterior(Z, Y, 1.0, 0.25)
    assert np.allclose(post.mean.ravel(), mean, atol=1e-10)
    assert np.allclose(np.kron(np.eye(4), post.cov), cov, atol=1e-10)


def test_blr_rank_deficient():
    rng = np.random.default_rng(6)
    Z = rng.normal(size=(2, 5))              # fewer rows than features
    Z = np.vstack([Z, Z[0]])                 # and a repeated row
    Y = rng.normal(size=(3, 4))
    post = blr_posterior(Z, Y, 1.0, 0.25)
    mean, cov = blr_vec_posterior(Z, Y, 1.0, 0.25)
    assert np.allclose(post.mean.ravel(), mean, atol=1e-10)
    assert np.allclose(np.kron(np.eye(4), post.cov), cov, atol=1e-10)


def test_blr_sample_moments():
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(8, 3))
    post = blr_posterior(Z, rng.normal(size=(8, 2)))
    draws = np.array([post.sample(rng) for _ in range(40_000)])
    assert np.allclose(draws.mean(axis=0), post.mean, atol=0.02)
    emp = np.cov(draws[:, 0, :].T)
    assert np.allclose(emp, post.cov, atol=0.02)
