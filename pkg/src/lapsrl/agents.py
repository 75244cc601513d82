"""Posterior-sampling agents: exact-posterior PSRL and Langevin PSRL.

Both agents follow the same episode template: draw model parameters, act
optimally for the draw for one episode, then append the new data.  They
differ only in how the draw is produced.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .control import DareError, IcemConfig, icem_plan, solve_dare
from .envs import BanditEnv, CartpoleEnv, ReacherEnv, reacher_reward
from .models import (
    DifferentiableModel,
    GaussianPosterior,
    LinearDynamicsModel,
    MlpDynamicsModel,
    blr_posterior,
)
from .sampler import SamplerDivergence, langevin_schedule, sarah_ld

EPS_MODES = ("alg2", "corollary")
_EPS_ALIASES = {"paper_alg2": "alg2", "corollary_g_squared": "corollary"}

CARTPOLE_Q = np.diag([1.0, 1.0, 10.0, 1.0])
CARTPOLE_R = np.array([[0.1]])


@dataclass
class AgentConfig:
    """Knobs of the Langevin agent.

    ``g_order`` and ``delta_max`` set the per-episode KL budget
    ``g / (l delta_max**2)`` (``g**2`` in corollary mode).  ``log_factor="n"``
    replaces ``log(2 KL0 / eps)`` in the step count by the data size.
    """

    g_order: float = 1.0
    delta_max: float | None = None
    eps_mode: str = "alg2"
    chained: bool = False
    alpha_scale: float | None = None
    log_factor: str = "kl"
    step_cap: int | None = None
    lqr_Q: list | None = None
    lqr_R: list | None = None
    icem: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eps_mode = _EPS_ALIASES.get(self.eps_mode, self.eps_mode)
        if self.eps_mode not in EPS_MODES:
            raise ValueError(f"eps_mode must be one of {EPS_MODES}, got {self.eps_mode!r}")
        if not self.g_order > 0:
            raise ValueError("g_order must be positive")
        if self.delta_max is not None and not self.delta_max > 0:
            raise ValueError("delta_max must be positive")
        if self.log_factor not in ("kl", "n"):
            raise ValueError("log_factor must be 'kl' or 'n'")
        if self.step_cap is not None and self.step_cap < 0:
            raise ValueError("step_cap must be nonnegative")


@dataclass
class EpisodeRecord:
    episode: int
    eps_l: float
    theta: object
    episode_return: float
    episode_regret: float
    grad_evals: int
    chained: bool
    solved: bool = False
    failed: bool = False
    action: object = None
    wall_ms: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta"] = _tolist(self.theta)
        return d


def _tolist(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (list, tuple)):
        return [_tolist(v) for v in x]
    return x


def default_delta_max(env) -> float:
    """Largest plausible regret within one episode."""
    if isinstance(env, BanditEnv):
        means = env.means
        sigma = max(math.sqrt(v) for _, v in env.arms)
        return env.batch * (float(means.max() - means.min()) + 4 * sigma)
    if isinstance(env, CartpoleEnv):
        return float(env.horizon)
    if isinstance(env, ReacherEnv):
        return env.horizon * (2 * env.reach + env.action_cost * 2)
    raise ValueError(f"unsupported environment {type(env).__name__}")


def epsilon_schedule(l: int, cfg: AgentConfig, delta_max: float | None = None) -> float:
    """KL budget of episode ``l`` (1-based)."""
    if l < 1:
        raise ValueError("episode index starts at 1")
    dm = cfg.delta_max if delta_max is None else delta_max
    if dm is None:
        raise ValueError("delta_max is not set")
    g = cfg.g_order if cfg.eps_mode == "alg2" else cfg.g_order ** 2
    return g / (l * dm ** 2)


def _seeds(seed):
    ss = np.random.SeedSequence(seed)
    env_ss, agent_ss = ss.spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(agent_ss)


def _lqr_matrices(cfg: AgentConfig | None):
    Q = CARTPOLE_Q if cfg is None or cfg.lqr_Q is None else np.asarray(cfg.lqr_Q, dtype=np.float64)
    R = CARTPOLE_R if cfg is None or cfg.lqr_R is None else np.atleast_2d(np.asarray(cfg.lqr_R, dtype=np.float64))
    return Q, R


# ---------------------------------------------------------------------------
# episode players shared by both agents


def play_cartpole_episode(env: CartpoleEnv, gain, rng, data: list):
    """Run ``u = -K s`` (clipped) for one episode; appends ``[s, a, s']`` rows."""
    s = env.reset(rng)
    total = 0.0
    done = False
    while not done:
        a = np.zeros(1) if gain is None else np.clip(-gain @ s, -1.0, 1.0)
        s2, r, done = env.step(a)
        total += r
        data.append(np.concatenate([s, a, s2]))
        s = s2
    return total


def _cartpole_gain(A, B, Q, R, previous):
    try:
        return solve_dare(A, B, Q, R, tol=1e-9, max_iter=5000).K, False
    except (DareError, np.linalg.LinAlgError):
        return previous, True


def reacher_planner(model: MlpDynamicsModel, theta, env: ReacherEnv, icfg: IcemConfig):
    """Receding-horizon iCEM policy using the sampled network as dynamics."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    target = env.target.copy()

    def dynamics(states, actions):
        inp = np.hstack([states, np.clip(actions, -1.0, 1.0)])
        return states + model.predict_delta(theta, inp)

    def reward(states, actions, nxt):
        return reacher_reward(nxt, actions, target, env.link, env.action_cost)

    return dynamics, reward


def play_reacher_episode(env: ReacherEnv, dynamics, reward, icfg: IcemConfig, rng, data: list):
    """Receding-horizon control: replan from scratch every step, apply the first action."""
    s = env.reset(rng)
    total = 0.0
    done = False
    while not done:
        plan = icem_plan(dynamics, reward, s, icfg, int(rng.integers(2**63)))
        a = plan.actions[0]
        s2, r, done = env.step(a)
        total += r
        data.append(np.concatenate([s, a, s2 - s]))
        s = s2
    return total


# The reacher's action penalty makes the best torques small (|a| ~ 0.03), so
# the planner starts with a narrower search than the generic default.
REACHER_ICEM_STD = 0.2


def reacher_icem_config(cfg: AgentConfig | None, env: ReacherEnv) -> IcemConfig:
    opts = {} if cfg is None else dict(cfg.icem)
    opts.setdefault("action_dim", env.action_dim)
    opts.setdefault("init_std", REACHER_ICEM_STD)
    return IcemConfig(**opts)


# ---------------------------------------------------------------------------
# exact posterior sampling


FAMILIES = ("gaussian_conjugate", "bayes_linear_regression")


def psrl_exact_run(env, family: str, episodes: int, seed, prior=None, sigma2: float = 0.25,
                   cfg: AgentConfig | None = None) -> list:
    """PSRL with closed-form posteriors.

    ``gaussian_conjugate`` pairs with the bandit (independent Gaussian-mean
    posterior per arm, ``prior`` a :class:`GaussianPosterior`);
    ``bayes_linear_regression`` pairs with cart-pole (``prior`` the prior
    variance of every entry of ``[A | B]``).
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown posterior family {family!r}")
    if episodes < 0:
        raise ValueError("episodes must be nonnegative")
    env_rng, rng = _seeds(seed)
    records = []
    if family == "gaussian_conjugate":
        if not isinstance(env, BanditEnv):
            raise ValueError("gaussian_conjugate posteriors need a bandit environment")
        prior = prior or GaussianPosterior(0.0, 1.0)
        k = len(env.arms)
        counts, sums = np.zeros(k), np.zeros(k)
        for l in range(1, episodes + 1):
            t0 = time.perf_counter()
            # conjugate update from sufficient statistics
            prec = 1.0 / prior.variance + counts / sigma2
            mean = (prior.mean / prior.variance + sums / sigma2) / prec
            theta = mean + rng.standard_normal(k) / np.sqrt(prec)
            arm = int(np.argmax(theta))
            rewards = env.pull(arm, env_rng)
            counts[arm] += len(rewards)
            sums[arm] += rewards.sum()
            regret = env.pull_regret(arm)
            records.append(EpisodeRecord(l, 0.0, theta, float(rewards.sum()), regret, 0, False,
                                         action=arm, wall_ms=1e3 * (time.perf_counter() - t0)))
        return records

    if not isinstance(env, CartpoleEnv):
        raise ValueError("bayes_linear_regression posteriors need the cart-pole environment")
    prior_var = 1.0 if prior is None else float(prior)
    Q, R = _lqr_matrices(cfg)
    nx, nu = env.state_dim, env.action_dim
    data = []
    gain = None
    for l in range(1, episodes + 1):
        t0 = time.perf_counter()
        if data:
            D = np.asarray(data)
            post = blr_posterior(D[:, :nx + nu], D[:, nx + nu:], prior_var, sigma2)
            W = post.sample(rng)
        else:
            W = math.sqrt(prior_var) * rng.standard_normal((nx, nx + nu))
        gain, planner_failed = _cartpole_gain(W[:, :nx], W[:, nx:], Q, R, gain)
        ret = play_cartpole_episode(env, gain, env_rng, data)
        records.append(EpisodeRecord(l, 0.0, W.ravel(), ret, env.horizon - ret, 0, False,
                                     solved=ret >= env.horizon, failed=planner_failed,
                                     wall_ms=1e3 * (time.perf_counter() - t0)))
    return records


# ---------------------------------------------------------------------------
# Langevin PSRL


def langevin_sample(model: DifferentiableModel, X, eps, init, cfg: AgentConfig, rng, kl0=None):
    """One Langevin posterior draw for the current data; returns (theta, grad_evals)."""
    n = 0 if X is None else len(X)
    if n == 0:
        return np.array(init, dtype=np.float64), 0
    sched = langevin_schedule(model.lsi_alpha(n), model.smooth_L(n), n, model.dim, eps,
                              kl0_bound=kl0, log_factor=float(n) if cfg.log_factor == "n" else None)
    if cfg.step_cap is not None and sched.steps_K > cfg.step_cap:
        sched = sched.with_steps(cfg.step_cap)
    theta, stats = sarah_ld(model, X, sched, init, int(rng.integers(2**63)))
    return theta, stats.grad_evals


def lapsrl_run(env, model: DifferentiableModel, cfg: AgentConfig, episodes: int, seed,
               until_solved: bool = False) -> list:
    """Langevin PSRL for ``episodes`` episodes.

    Chained runs start each chain from the previous draw and bound the
    initial KL by the previous budget; otherwise chains start from a prior
    draw with the KL bound left at its default ``n``.  A diverging chain ends
    sampling for the run: later episodes act on the prior mean and are
    flagged as failed.  ``until_solved`` stops a cart-pole run after its
    first solved episode.
    """
    if episodes < 0:
        raise ValueError("episodes must be nonnegative")
    delta_max = cfg.delta_max if cfg.delta_max is not None else default_delta_max(env)
    env_rng, rng = _seeds(seed)
    if isinstance(env, BanditEnv):
        if model.dim != 1:
            raise ValueError("bandit arms need a scalar-mean model")
        return _lapsrl_bandit(env, model, cfg, episodes, env_rng, rng, delta_max)
    if isinstance(env, CartpoleEnv):
        if not isinstance(model, LinearDynamicsModel):
            raise ValueError("cart-pole LaPSRL needs a linear dynamics model")
        return _lapsrl_cartpole(env, model, cfg, episodes, env_rng, rng, delta_max, until_solved)
    if isinstance(env, ReacherEnv):
        if not isinstance(model, MlpDynamicsModel):
            raise ValueError("reacher LaPSRL needs an MLP dynamics model")
        return _lapsrl_reacher(env, model, cfg, episodes, env_rng, rng, delta_max)
    raise ValueError(f"unsupported environment {type(env).__name__}")


class _Chain:
    """Per-model sampling state across episodes."""

    def __init__(self, model, cfg, rng):
        self.model = model
        self.cfg = cfg
        self.rng = rng
        self.theta = model.sample_prior(rng)
        self.prev_eps = None
        self.diverged = False

    def draw(self, X, eps):
        if self.diverged:
            return self.model.prior_mean(), 0
        if X is None:
            # no data yet: the posterior is the prior, so sample it exactly
            self.theta = self.model.sample_prior(self.rng)
            self.prev_eps = eps
            return self.theta, 0
        if self.cfg.chained:
            init, kl0 = self.theta, self.prev_eps
        else:
            init, kl0 = self.model.sample_prior(self.rng), None
        try:
            theta, evals = langevin_sample(self.model, X, eps, init, self.cfg, self.rng, kl0)
        except SamplerDivergence:
            self.diverged = True
            return self.model.prior_mean(), 0
        self.theta = theta
        self.prev_eps = eps
        return theta, evals


def _lapsrl_bandit(env, model, cfg, episodes, env_rng, rng, delta_max):
    chains = [_Chain(model, cfg, rng) for _ in env.arms]
    data = [[] for _ in env.arms]
    records = []
    evals = 0
    for l in range(1, episodes + 1):
        t0 = time.perf_counter()
        eps = epsilon_schedule(l, cfg, delta_max)
        theta = np.empty(len(env.arms))
        for a, ch in enumerate(chains):
            X = np.concatenate(data[a])[:, None] if data[a] else None
            th, ev = ch.draw(X, eps)
            theta[a] = th[0]
            evals += ev
        arm = int(np.argmax(theta))
        rewards = env.pull(arm, env_rng)
        data[arm].append(rewards)
        records.append(EpisodeRecord(l, eps, theta, float(rewards.sum()), env.pull_regret(arm), evals,
                                     cfg.chained, failed=any(c.diverged for c in chains), action=arm,
                                     wall_ms=1e3 * (time.perf_counter() - t0)))
    return records


def _lapsrl_cartpole(env, model, cfg, episodes, env_rng, rng, delta_max, until_solved=False):
    Q, R = _lqr_matrices(cfg)
    chain = _Chain(model, cfg, rng)
    data = []
    records = []
    evals = 0
    gain = None
    for l in range(1, episodes + 1):
        t0 = time.perf_counter()
        eps = epsilon_schedule(l, cfg, delta_max)
        theta, ev = chain.draw(np.asarray(data) if data else None, eps)
        evals += ev
        A, B = model.matrices(theta)
        gain, _ = _cartpole_gain(A, B, Q, R, gain)
        ret = play_cartpole_episode(env, gain, env_rng, data)
        records.append(EpisodeRecord(l, eps, theta, ret, env.horizon - ret, evals, cfg.chained,
                                     solved=ret >= env.horizon, failed=chain.diverged,
                                     wall_ms=1e3 * (time.perf_counter() - t0)))
        if until_solved and ret >= env.horizon:
            break
    return records


def _lapsrl_reacher(env, model, cfg, episodes, env_rng, rng, delta_max):
    icfg = reacher_icem_config(cfg, env)
    chain = _Chain(model, cfg, rng)
    data = []
    records = []
    evals = 0
    for l in range(1, episodes + 1):
        t0 = time.perf_counter()
        eps = epsilon_schedule(l, cfg, delta_max)
        theta, ev = chain.draw(np.asarray(data) if data else None, eps)
        evals += ev
        dyn, rew = reacher_planner(model, theta, env, icfg)
        ret = play_reacher_episode(env, dyn, rew, icfg, env_rng, data)
        records.append(EpisodeRecord(l, eps, None, ret, -ret, evals, cfg.chained,
                                     failed=chain.diverged,
                                     wall_ms=1e3 * (time.perf_counter() - t0)))
    return records
