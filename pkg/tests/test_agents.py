import numpy as np
import pytest

import lapsrl.agents as agents
from lapsrl.agents import (
    AgentConfig,
    default_delta_max,
    epsilon_schedule,
    lapsrl_run,
    psrl_exact_run,
)
from lapsrl.envs import BanditEnv, CartpoleEnv, ReacherEnv
from lapsrl.models import make_model
from lapsrl.sampler import SamplerDivergence


def two_arm():
    return BanditEnv([(0.0, 0.25), (0.1, 0.25)], batch=20)


# ---------------------------------------------------------------------------
# epsilon schedule


def test_epsilon_examples():
    assert epsilon_schedule(4, AgentConfig(g_order=1, delta_max=2)) == 0.0625
    assert epsilon_schedule(100, AgentConfig(g_order=2, delta_max=1, eps_mode="corollary")) == pytest.approx(0.04, abs=1e-15)


def test_epsilon_modes_differ_by_g():
    for g in (1.0, 3.0, 0.25):
        a = epsilon_schedule(1, AgentConfig(g_order=g, delta_max=1.5))
        b = epsilon_schedule(1, AgentConfig(g_order=g, delta_max=1.5, eps_mode="corollary"))
        assert b / a == pytest.approx(g, rel=1e-15)
    assert epsilon_schedule(1, AgentConfig(g_order=1, delta_max=3)) == epsilon_schedule(
        1, AgentConfig(g_order=1, delta_max=3, eps_mode="corollary"))


def test_epsilon_times_l_constant():
    for mode in ("alg2", "corollary"):
        cfg = AgentConfig(g_order=7.0, delta_max=3.0, eps_mode=mode)
        vals = [epsilon_schedule(l, cfg) * l for l in range(1, 300)]
        assert np.allclose(vals, vals[0], rtol=1e-14, atol=0)
        eps = [epsilon_schedule(l, cfg) for l in range(1, 300)]
        assert all(b < a for a, b in zip(eps, eps[1:]))


def test_epsilon_validation():
    with pytest.raises(ValueError):
        epsilon_schedule(0, AgentConfig(delta_max=1))
    with pytest.raises(ValueError):
        epsilon_schedule(1, AgentConfig())
    with pytest.raises(ValueError):
        AgentConfig(g_order=0)
    with pytest.raises(ValueError):
        AgentConfig(delta_max=-1)
    with pytest.raises(ValueError):
        AgentConfig(eps_mode="g_cubed")
    assert AgentConfig(eps_mode="corollary_g_squared").eps_mode == "corollary"


def test_default_delta_max():
    assert default_delta_max(two_arm()) == pytest.approx(20 * (0.1 + 4 * 0.5))
    assert default_delta_max(CartpoleEnv()) == 200
    # farthest fingertip-target distance is reach plus target radius, 0.4
    assert default_delta_max(ReacherEnv()) == pytest.approx(50 * (0.4 + 0.1 * 2))


# ---------------------------------------------------------------------------
# exact PSRL


def test_psrl_symmetric_first_choice():
    env = two_arm()
    picks = [psrl_exact_run(env, "gaussian_conjugate", 1, s)[0].action for s in range(10_000)]
    frac = np.mean(picks)
    assert abs(frac - 0.5) < 3 * 0.5 / np.sqrt(10_000)


def test_psrl_one_arm_zero_regret():
    recs = psrl_exact_run(BanditEnv([(0.3, 0.25)]), "gaussian_conjugate", 50, 0)
    assert all(r.episode_regret == 0.0 for r in recs)


def test_psrl_family_mismatch():
    with pytest.raises(ValueError):
        psrl_exact_run(CartpoleEnv(), "gaussian_conjugate", 1, 0)
    with pytest.raises(ValueError):
        psrl_exact_run(two_arm(), "bayes_linear_regression", 1, 0)
    with pytest.raises(ValueError):
        psrl_exact_run(two_arm(), "dirichlet", 1, 0)


def test_psrl_bandit_regret_uses_gap_oracle():
    env = two_arm()
    for r in psrl_exact_run(env, "gaussian_conjugate", 30, 1):
        assert r.episode_regret == env.pull_regret(r.action)


def test_psrl_bandit_sublinear():
    env = two_arm()
    cum = np.mean([np.cumsum([r.episode_regret for r in psrl_exact_run(env, "gaussian_conjugate", 5000, s)])
                   for s in range(50)], axis=0)
    from lapsrl.harness import sublinearity_fit
    t = np.arange(100, 5001)
    assert sublinearity_fit(list(zip(t, cum[99:])), burn_in=0).exponent < 0.95


def test_psrl_cartpole_learns():
    solved = 0
    for seed in range(5):
        recs = psrl_exact_run(CartpoleEnv(), "bayes_linear_regression", 40, seed)
        solved += any(r.solved for r in recs)
        assert all(r.episode_regret == 200 - r.episode_return for r in recs)
    assert solved >= 4


# ---------------------------------------------------------------------------
# Langevin PSRL


def test_zero_episodes():
    assert lapsrl_run(two_arm(), make_model("gaussian_bandit_arm"), AgentConfig(), 0, 0) == []
    assert psrl_exact_run(two_arm(), "gaussian_conjugate", 0, 0) == []


def test_record_invariants_bandit():
    cfg = AgentConfig(g_order=1e5, chained=True)
    recs = lapsrl_run(two_arm(), make_model("gaussian_bandit_arm"), cfg, 40, 3)
    assert [r.episode for r in recs] == list(range(1, 41))
    assert all(b.eps_l < a.eps_l for a, b in zip(recs, recs[1:]))
    assert all(b.grad_evals >= a.grad_evals for a, b in zip(recs, recs[1:]))
    assert all(r.chained and not r.failed for r in recs)


def test_grad_evals_equal_sum_of_sampler_counts(monkeypatch):
    counts = []
    real = agents.sarah_ld

    def spy(*args, **kwargs):
        theta, stats = real(*args, **kwargs)
        counts.append(stats.grad_evals)
        return theta, stats

    monkeypatch.setattr(agents, "sarah_ld", spy)
    recs = lapsrl_run(two_arm(), make_model("gaussian_bandit_arm"), AgentConfig(g_order=1e5), 25, 0)
    assert counts and recs[-1].grad_evals == sum(counts)


def test_chained_and_fresh_paths_with_zero_steps(monkeypatch):
    inits = []
    real = agents.sarah_ld

    def spy(model, data, sched, init, seed):
        inits.append(np.array(init))
        return real(model, data, sched, init, seed)

    monkeypatch.setattr(agents, "sarah_ld", spy)
    one = BanditEnv([(0.1, 0.25)])
    model = make_model("gaussian_bandit_arm")
    chained = lapsrl_run(one, model, AgentConfig(step_cap=0, chained=True), 6, 5)
    # with no updates each chained draw is the previous draw
    thetas = [r.theta[0] for r in chained]
    assert len(set(thetas)) == 1
    assert all(r.grad_evals == 0 for r in chained)
    inits.clear()
    fresh = lapsrl_run(one, model, AgentConfig(step_cap=0), 6, 5)
    assert len({r.theta[0] for r in fresh}) == 6
    assert [r.theta[0] for r in fresh[1:]] == [i[0] for i in inits]


def test_chained_uses_previous_eps_as_kl_bound(monkeypatch):
    seen = []
    real = agents.langevin_schedule

    def spy(*args, **kwargs):
        seen.append(kwargs.get("kl0_bound"))
        return real(*args, **kwargs)

    monkeypatch.setattr(agents, "langevin_schedule", spy)
    cfg = AgentConfig(g_order=1e5, chained=True)
    recs = lapsrl_run(BanditEnv([(0.1, 0.25)]), make_model("gaussian_bandit_arm"), cfg, 5, 0)
    assert seen == [r.eps_l for r in recs[:-1]]
    seen.clear()
    lapsrl_run(BanditEnv([(0.1, 0.25)]), make_model("gaussian_bandit_arm"), AgentConfig(g_order=1e5), 5, 0)
    assert seen == [None] * 4


def test_divergence_falls_back_to_prior_mean(monkeypatch):
    calls = []

    def boom(*args, **kwargs):
        calls.append(1)
        raise SamplerDivergence(3, float("inf"))

    monkeypatch.setattr(agents, "sarah_ld", boom)
    model = make_model("mixture_prior_arm")
    recs = lapsrl_run(BanditEnv([(0.1, 0.25)]), model, AgentConfig(g_order=1e5), 5, 0)
    assert len(calls) == 1
    assert not recs[0].failed and all(r.failed for r in recs[1:])
    assert all(r.theta[0] == model.prior.mean() for r in recs[1:])


def test_model_planner_compatibility():
    with pytest.raises(ValueError):
        lapsrl_run(CartpoleEnv(), make_model("gaussian_bandit_arm"), AgentConfig(), 1, 0)
    with pytest.raises(ValueError):
        lapsrl_run(ReacherEnv(), make_model("linear_dynamics", {"alpha_scale": 10}), AgentConfig(), 1, 0)
    with pytest.raises(ValueError):
        lapsrl_run(two_arm(), make_model("linear_dynamics", {"alpha_scale": 10}), AgentConfig(), 1, 0)


def test_run_is_deterministic():
    model = make_model("gaussian_bandit_arm")
    a = lapsrl_run(two_arm(), model, AgentConfig(g_order=1e5), 15, 4)
    b = lapsrl_run(two_arm(), model, AgentConfig(g_order=1e5), 15, 4)
    assert [r.to_dict() | {"wall_ms": 0} for r in a] == [r.to_dict() | {"wall_ms": 0} for r in b]


def test_cartpole_lapsrl_runs():
    model = make_model("linear_dynamics", {"alpha_scale": 1000})
    recs = lapsrl_run(CartpoleEnv(), model, AgentConfig(g_order=4e7), 5, 0)
    assert len(recs) == 5 and recs[-1].grad_evals > 0
    assert all(r.episode_regret == 200 - r.episode_return for r in recs)


def test_cartpole_until_solved_stops():
    model = make_model("linear_dynamics", {"alpha_scale": 1000})
    recs = lapsrl_run(CartpoleEnv(), model, AgentConfig(g_order=4e7), 100, 0, until_solved=True)
    assert recs[-1].solved and not any(r.solved for r in recs[:-1])


def test_reacher_lapsrl_step_cap():
    model = make_model("mlp_dynamics", {"hidden": (16, 16), "alpha_scale": 1e4})
    cfg = AgentConfig(g_order=1e4, step_cap=30, icem={"iterations": 2, "samples": 8, "elites": 2, "horizon": 3})
    recs = lapsrl_run(ReacherEnv(), model, cfg, 2, 0)
    assert recs[0].grad_evals == 0
    # n = 50 rows, m = B = 8: floor(30 / 8) + 1 = 4 epochs
    assert recs[1].grad_evals == 4 * (50 + 2 * 8 * 7)
    assert all(r.episode_regret == -r.episode_return for r in recs)


def test_chained_bandit_sample_variance_shrinks():
    """Chained draws of one arm track a posterior whose variance decays like 1/n."""
    one = BanditEnv([(0.1, 0.25)])
    model = make_model("gaussian_bandit_arm")
    cfg = AgentConfig(g_order=1e5, chained=True)
    late = np.array([[r.theta[0] for r in lapsrl_run(one, model, cfg, 60, s)][-10:] for s in range(40)])
    early = np.array([[r.theta[0] for r in lapsrl_run(one, model, cfg, 6, s)][-4:] for s in range(40)])
    assert ((late - 0.1) ** 2).mean() < ((early - 0.1) ** 2).mean()
    # spread around the true mean = posterior variance + variance of the posterior mean
    ratio = ((late - 0.1) ** 2).mean() / (0.25 / (20 * 55))
    assert 1.0 < ratio < 3.0
