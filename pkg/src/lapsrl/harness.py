"""Experiment runner, regret metrics and result files."""

from __future__ import annotations

import copy
import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .agents import AgentConfig, lapsrl_run, psrl_exact_run
from .envs import BanditEnv, CartpoleEnv, ReacherEnv
from .models import GaussianPosterior, make_model


class ConfigError(ValueError):
    """Invalid experiment configuration."""


HEADER = ("seed", "episode", "episode_regret", "cumulative_regret", "eps_l",
          "grad_evals", "solved", "wall_ms", "failed")

ENV_KINDS = ("bandit", "cartpole", "reacher")
AGENT_KINDS = ("psrl", "lapsrl", "fixed_arm")

DEFAULT_MODEL = {"bandit": "gaussian_bandit_arm", "cartpole": "linear_dynamics", "reacher": "mlp_dynamics"}
DEFAULT_FAMILY = {"bandit": "gaussian_conjugate", "cartpole": "bayes_linear_regression"}

# per-environment agent defaults; g is large enough that the step size
# stays on its first branch for realistic data sizes
AGENT_DEFAULTS = {
    "bandit": {"g_order": 1e5},
    "cartpole": {"g_order": 4e7, "alpha_scale": 1000.0},
    "reacher": {"g_order": 1e4, "alpha_scale": 1e4, "step_cap": 150_000},
}

_AGENT_FIELDS = {f.name for f in fields(AgentConfig)}


@dataclass
class ExperimentConfig:
    env: dict = field(default_factory=lambda: {"kind": "bandit"})
    agent: dict = field(default_factory=lambda: {"kind": "psrl"})
    seeds: list = field(default_factory=lambda: [0])
    episodes: int = 250
    out: str = "results.csv"
    timing: bool = True
    plot_data: bool = False
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.seeds, int) and not isinstance(self.seeds, bool):
            self.seeds = list(range(self.seeds))
        self.seeds = list(self.seeds)
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if isinstance(self.episodes, bool) or not isinstance(self.episodes, int) or self.episodes < 1:
            raise ConfigError(f"episodes must be an integer >= 1, got {self.episodes!r}")
        if self.env.get("kind") not in ENV_KINDS:
            raise ConfigError(f"env kind must be one of {ENV_KINDS}, got {self.env.get('kind')!r}")
        if self.agent.get("kind") not in AGENT_KINDS:
            raise ConfigError(f"agent kind must be one of {AGENT_KINDS}, got {self.agent.get('kind')!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        env_kind, agent_kind = self.env["kind"], self.agent["kind"]
        if agent_kind == "psrl":
            family = self.agent.get("family", DEFAULT_FAMILY.get(env_kind))
            if env_kind not in DEFAULT_FAMILY:
                raise ConfigError(f"no closed-form posterior for the {env_kind} environment")
            if DEFAULT_FAMILY[env_kind] != family:
                raise ConfigError(f"posterior family {family!r} does not fit the {env_kind} environment")
        if agent_kind == "fixed_arm" and env_kind != "bandit":
            raise ConfigError("the fixed-arm agent needs a bandit environment")
        # build once so that bad parameters surface before any run
        try:
            make_env(self.env)
            if self.agent["kind"] == "lapsrl":
                agent_config(self)
                make_model(*model_spec(self))
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}


@dataclass
class ResultRow:
    seed: int
    episode: int
    episode_regret: float
    cumulative_regret: float
    eps_l: float
    grad_evals: int
    solved: int
    wall_ms: float
    failed: int = 0


# ---------------------------------------------------------------------------
# construction


def make_env(spec: dict):
    kind = spec.get("kind")
    params = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "bandit":
        params.setdefault("arms", [(0.0, 0.25), (0.1, 0.25)])
        return BanditEnv(**params)
    if kind == "cartpole":
        return CartpoleEnv(**params)
    if kind == "reacher":
        return ReacherEnv(**params)
    raise ConfigError(f"unknown env kind {kind!r}")


def model_spec(cfg: ExperimentConfig):
    env_kind = cfg.env["kind"]
    mspec = dict(cfg.agent.get("model", {}))
    kind = mspec.pop("kind", DEFAULT_MODEL[env_kind])
    scale = agent_config(cfg).alpha_scale
    if scale is not None:
        mspec["alpha_scale"] = scale
    if env_kind == "bandit":
        arms = make_env(cfg.env).arms
        mspec.setdefault("sigma2", arms[0][1])
    return kind, mspec


def agent_config(cfg: ExperimentConfig) -> AgentConfig:
    opts = dict(AGENT_DEFAULTS[cfg.env["kind"]])
    opts.update({k: v for k, v in cfg.agent.items() if k in _AGENT_FIELDS})
    return AgentConfig(**opts)


def run_agent(cfg: ExperimentConfig, seed: int) -> list:
    """All episode records of one seed."""
    env = make_env(cfg.env)
    kind = cfg.agent["kind"]
    if kind == "lapsrl":
        model = make_model(*model_spec(cfg))
        return lapsrl_run(env, model, agent_config(cfg), cfg.episodes, seed)
    if kind == "psrl":
        family = cfg.agent.get("family", DEFAULT_FAMILY[cfg.env["kind"]])
        prior = cfg.agent.get("prior")
        if family == "gaussian_conjugate" and prior is not None:
            prior = GaussianPosterior(prior["mean"], prior["variance"])
        sigma2 = cfg.agent.get("sigma2", 0.25)
        return psrl_exact_run(env, family, cfg.episodes, seed, prior, sigma2, agent_config(cfg))
    return fixed_arm_run(env, cfg.agent.get("arm", 0), cfg.episodes, seed)


def fixed_arm_run(env, arm: int, episodes: int, seed) -> list:
    """Scripted bandit agent that always pulls ``arm``."""
    from .agents import EpisodeRecord

    if not isinstance(env, BanditEnv):
        raise ConfigError("the fixed-arm agent needs a bandit environment")
    rng = np.random.default_rng(seed)
    out = []
    for l in range(1, episodes + 1):
        rewards = env.pull(arm, rng)
        out.append(EpisodeRecord(l, 0.0, None, float(rewards.sum()), env.pull_regret(arm), 0, False,
                                 action=arm))
    return out


def records_to_rows(seed: int, records, timing: bool = True) -> list:
    rows = []
    cum = 0.0
    for r in records:
        cum += r.episode_regret
        rows.append(ResultRow(seed, r.episode, float(r.episode_regret), cum, float(r.eps_l),
                              int(r.grad_evals), int(r.solved), float(r.wall_ms) if timing else 0.0,
                              int(r.failed)))
    return rows


def _seed_rows(cfg: ExperimentConfig, seed: int):
    try:
        return records_to_rows(seed, run_agent(cfg, seed), cfg.timing), None
    except ConfigError:
        raise
    except Exception as exc:  # a crashed seed must not take the others down
        return [ResultRow(seed, 0, 0.0, 0.0, 0.0, 0, 0, 0.0, 1)], f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# files


def check_output_path(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if os.path.isdir(path):
        raise ConfigError(f"output path {path!r} is a directory")
    if not os.path.isdir(parent):
        raise ConfigError(f"output directory {parent!r} does not exist")
    if not os.access(parent, os.W_OK) or (os.path.exists(path) and not os.access(path, os.W_OK)):
        raise ConfigError(f"output path {path!r} is not writable")


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def write_rows(path: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, k)) for k in HEADER])


def read_rows(path: str) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head is None or tuple(head[:8]) != HEADER[:8]:
            raise ValueError(f"{path}: not a results file (bad header)")
        out = []
        for rec in reader:
            d = dict(zip(head, rec))
            out.append(ResultRow(int(d["seed"]), int(d["episode"]), float(d["episode_regret"]),
                                 float(d["cumulative_regret"]), float(d["eps_l"]), int(d["grad_evals"]),
                                 int(d["solved"]), float(d["wall_ms"]), int(d.get("failed", 0))))
    return out


def summarize(rows) -> dict:
    """Across-seed mean and standard error per episode (failed seeds excluded)."""
    by_seed = {}
    bad = {r.seed for r in rows if r.failed}
    for r in rows:
        if r.seed not in bad:
            by_seed.setdefault(r.seed, []).append(r)
    summary = {"seeds": len(by_seed), "failed_seeds": sorted(bad)}
    if not by_seed:
        return summary
    T = min(len(v) for v in by_seed.values())
    cum = np.array([[r.cumulative_regret for r in v[:T]] for v in by_seed.values()])
    ev = np.array([[r.grad_evals for r in v[:T]] for v in by_seed.values()], dtype=np.float64)
    S = cum.shape[0]
    se = cum.std(axis=0, ddof=1) / math.sqrt(S) if S > 1 else np.zeros(T)
    summary.update({
        "episode": list(range(1, T + 1)),
        "mean_cumulative_regret": cum.mean(axis=0).tolist(),
        "se_cumulative_regret": se.tolist(),
        "mean_grad_evals": ev.mean(axis=0).tolist(),
        "solved_fraction": float(np.mean([any(r.solved for r in v) for v in by_seed.values()])),
    })
    if T >= 10:
        fit = sublinearity_fit(list(zip(summary["episode"], summary["mean_cumulative_regret"])))
        summary["sublinearity_exponent"] = fit.exponent
        summary["sublinearity_degenerate"] = fit.degenerate
    return summary


@dataclass
class RunReport:
    out: str
    rows: list
    summary: dict
    errors: dict

    @property
    def ok(self) -> bool:
        return not self.errors


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Run every seed, write the CSV and its ``.summary.json`` sidecar."""
    check_output_path(cfg.out)
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_seed_rows, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        results = [_seed_rows(cfg, s) for s in cfg.seeds]
    order = sorted(range(len(cfg.seeds)), key=lambda i: cfg.seeds[i])
    rows = [r for i in order for r in results[i][0]]
    errors = {cfg.seeds[i]: results[i][1] for i in order if results[i][1]}
    write_rows(cfg.out, rows)
    summary = summarize(rows)
    summary["config"] = cfg.to_dict()
    summary["errors"] = {str(k): v for k, v in errors.items()}
    with open(cfg.out + ".summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if cfg.plot_data and "episode" in summary:
        with open(cfg.out + ".plot.csv", "w") as fh:
            fh.write("episode,mean_cumulative_regret,se_cumulative_regret\n")
            for t, m, s in zip(summary["episode"], summary["mean_cumulative_regret"],
                               summary["se_cumulative_regret"]):
                fh.write(f"{t},{m!r},{s!r}\n")
    return RunReport(cfg.out, rows, summary, errors)


# ---------------------------------------------------------------------------
# metrics


def kl_gaussian(p: GaussianPosterior, q: GaussianPosterior) -> float:
    """KL(p || q) between univariate Gaussians."""
    for g in (p, q):
        if not (g.variance > 0 and math.isfinite(g.variance) and math.isfinite(g.mean)):
            raise ValueError("Gaussian needs finite mean and positive variance")
    return (0.5 * math.log(q.variance / p.variance)
            + (p.variance + (p.mean - q.mean) ** 2) / (2 * q.variance) - 0.5)


@dataclass
class FitResult:
    exponent: float
    degenerate: bool
    points: int


def sublinearity_fit(curve, burn_in: float = 0.1) -> FitResult:
    """Log-log least-squares slope of cumulative regret against time.

    The first ``burn_in`` fraction of points is dropped, then any leading
    points with zero regret.  An all-zero curve gives exponent 0 flagged as
    degenerate.
    """
    pts = np.asarray(curve, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("curve must be a sequence of (t, regret) pairs")
    if len(pts) < 10:
        raise ValueError("need at least 10 points")
    t, r = pts[:, 0], pts[:, 1]
    if not np.all(np.isfinite(pts)) or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t must be positive and strictly increasing, values finite")
    if np.any(r < 0):
        raise ValueError("regret must be nonnegative")
    if np.all(r == 0):
        return FitResult(0.0, True, 0)
    keep = np.arange(len(t)) >= int(burn_in * len(t))
    first = np.argmax(r > 0)
    keep &= np.arange(len(t)) >= first
    if np.any(r[keep] <= 0):
        raise ValueError("regret must stay positive after the burn-in prefix")
    if keep.sum() < 2:
        raise ValueError("fewer than two points left after burn-in")
    slope = np.polyfit(np.log(t[keep]), np.log(r[keep]), 1)[0]
    return FitResult(float(slope), False, int(keep.sum()))


def curve_from_rows(rows) -> list:
    """Across-seed mean cumulative regret as ``(episode, regret)`` pairs."""
    s = summarize(rows)
    if "episode" not in s:
        raise ValueError("no successful seeds in the results")
    return list(zip(s["episode"], s["mean_cumulative_regret"]))
