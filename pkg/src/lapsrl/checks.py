"""Fast built-in invariant and oracle checks, run by ``lapsrl check``."""

from __future__ import annotations

import math
import os
import tempfile

import numpy as np

from .agents import AgentConfig, epsilon_schedule
from .control import IcemConfig, icem_plan, solve_dare
from .harness import ResultRow, kl_gaussian, read_rows, sublinearity_fit, write_rows
from .models import (
    GaussianPosterior,
    gaussian_mean_conjugate,
    lsi_gaussian_mean,
    lsi_mixture_lower_bound,
    make_model,
)
from .sampler import grad_evals_formula, langevin_schedule, sarah_ld


def _close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def check_schedule():
    s = langevin_schedule(17, 4.25, 4, 1, 0.1, kl0_bound=4)
    eta = 3 * 17 * 0.1 / (320 * 4.25 ** 2 * 4)
    raw = 4 / (17 * eta) * math.log(80)
    return (s.eta == eta and _close(s.steps_raw, raw, 1e-12) and s.steps_K == math.ceil(raw)
            and s.batch_B == s.epoch_m == 2 and s.gamma == 4)


def check_grad_counter():
    model = make_model("gaussian_bandit_arm")
    X = np.array([[0.1], [0.3], [-0.2], [0.5]])
    sched = langevin_schedule(17, 4.25, 4, 1, 0.1, kl0_bound=4).with_steps(4)
    _, stats = sarah_ld(model, X, sched, np.zeros(1), 0)
    return stats.grad_evals == 24 == grad_evals_formula(4, 4, 2, 2)


def check_epsilon():
    cfg = AgentConfig(g_order=1.0, delta_max=2.0)
    cor = AgentConfig(g_order=2.0, delta_max=1.0, eps_mode="corollary")
    return epsilon_schedule(4, cfg) == 0.0625 and _close(epsilon_schedule(100, cor), 0.04, 1e-15)


def check_conjugate():
    p = gaussian_mean_conjugate(GaussianPosterior(0.0, 1.0), [1.0], 0.25)
    return _close(p.mean, 0.8, 1e-12) and _close(p.variance, 0.2, 1e-12)


def check_lsi():
    return (lsi_gaussian_mean(1, 0.25, 4) == 17 and lsi_gaussian_mean(0.5, 0.25, 10) == 42
            and _close(lsi_mixture_lower_bound(2, 0.5, 1, 100), 50 / (8 * (1 - math.log(0.5))), 1e-12)
            and lsi_mixture_lower_bound(1, 1, 1, 7.0) == 7.0 / 4)


def check_kl():
    return (kl_gaussian(GaussianPosterior(0, 1), GaussianPosterior(1, 1)) == 0.5
            and _close(kl_gaussian(GaussianPosterior(0, 4), GaussianPosterior(0, 1)),
                       0.5 * (3 - math.log(4)), 1e-12))


def check_dare():
    sol = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    return abs(sol.P[0, 0] - (1 + math.sqrt(5)) / 2) < 1e-8


def check_gradients():
    rng = np.random.default_rng(0)
    for kind, cfg, data in [
        ("gaussian_bandit_arm", {}, rng.normal(size=(5, 1))),
        ("mixture_prior_arm", {}, rng.normal(size=(5, 1))),
        ("linear_dynamics", {}, rng.normal(size=(5, 9))),
        ("mlp_dynamics", {"hidden": (6, 5)}, rng.normal(size=(5, 10))),
    ]:
        model = make_model(kind, cfg)
        theta = 0.5 * rng.normal(size=model.dim)
        g = model.grad_f(theta, data)
        j = int(rng.integers(model.dim))
        h = 1e-6 * (1 + abs(theta[j]))
        e = np.zeros(model.dim)
        e[j] = h
        fd = (model.energy_terms(theta + e, data).mean() - model.energy_terms(theta - e, data).mean()) / (2 * h)
        if abs(fd - g[j]) > 1e-4 * max(1.0, abs(fd)):
            return False
    return True


def check_icem():
    cfg = IcemConfig(horizon=1)

    def dyn(s, a):
        return s

    def rew(s, a, s2):
        return -(a[:, 0] - 0.3) ** 2

    res = icem_plan(dyn, rew, np.zeros(1), cfg, 0)
    return abs(res.actions[0, 0] - 0.3) < 0.05


def check_csv_roundtrip():
    rows = [ResultRow(0, 1, 2.0, 2.0, 0.1, 10, 0, 1.25), ResultRow(0, 2, 1 / 3, 2 + 1 / 3, 0.05, 30, 1, 0.0)]
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "r.csv")
        write_rows(path, rows)
        return read_rows(path) == rows


def check_fit():
    t = np.arange(100, 5001)
    return abs(sublinearity_fit(list(zip(t, np.sqrt(t)))).exponent - 0.5) < 0.02


CHECKS = {
    "schedule example": check_schedule,
    "gradient counter": check_grad_counter,
    "epsilon schedule": check_epsilon,
    "conjugate posterior": check_conjugate,
    "LSI constants": check_lsi,
    "Gaussian KL": check_kl,
    "scalar DARE": check_dare,
    "model gradients": check_gradients,
    "iCEM quadratic": check_icem,
    "CSV round trip": check_csv_roundtrip,
    "sublinearity fit": check_fit,
}


def run_checks(out=print) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        try:
            passed = bool(fn())
        except Exception as exc:  # report, keep going
            passed = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'}  {name}")
    return ok
