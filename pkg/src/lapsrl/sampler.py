"""SARAH-LD: Langevin dynamics driven by the SARAH variance-reduced gradient.

The target is ``exp(-n F(theta))`` with ``F = mean_i f_i``.  Each outer epoch
starts from the full gradient of ``F``; the ``m - 1`` inner steps update the
estimate recursively from minibatch gradient differences.  Every update adds
Gaussian noise with per-coordinate variance ``2 eta / n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit


class SamplerDivergence(RuntimeError):
    """A non-finite gradient or iterate appeared during sampling."""

    def __init__(self, step: int, theta_norm: float):
        self.step = step
        self.theta_norm = theta_norm
        super().__init__(f"non-finite gradient at update {step} (|theta| = {theta_norm:.6g})")


@dataclass(frozen=True)
class LangevinSchedule:
    eta: float
    steps_K: int
    epoch_m: int
    batch_B: int
    gamma: float
    eps_target: float
    steps_raw: float = float("nan")
    clamped: bool = False

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError(f"eta must be positive and finite, got {self.eta}")
        if self.steps_K < 0 or self.epoch_m < 1 or self.batch_B < 1:
            raise ValueError("steps_K >= 0, epoch_m >= 1 and batch_B >= 1 required")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    @property
    def epochs(self) -> int:
        return num_epochs(self.steps_K, self.epoch_m)

    def with_steps(self, steps_K: int) -> "LangevinSchedule":
        return LangevinSchedule(self.eta, int(steps_K), self.epoch_m, self.batch_B,
                                self.gamma, self.eps_target, self.steps_raw, self.clamped)


@dataclass
class SamplerStats:
    grad_evals: int = 0
    epochs: int = 0
    wall_steps: int = 0
    clamped: bool = False


def _positive(**kwargs):
    for name, val in kwargs.items():
        if not (val > 0 and math.isfinite(val)):
            raise ValueError(f"{name} must be positive and finite, got {val}")


def step_size(alpha, smooth_L, n, dim_d, eps) -> float:
    """Largest permissible step: the smaller of the two closed-form branches."""
    first = alpha / (16.0 * math.sqrt(2.0) * smooth_L ** 2 * n ** 1.5)
    second = 3.0 * alpha * eps / (320.0 * dim_d * smooth_L ** 2 * n)
    return min(first, second)


def langevin_schedule(alpha, smooth_L, n, dim_d, eps, kl0_bound=None, log_factor=None) -> LangevinSchedule:
    """Step size and update count that reach KL accuracy ``eps``.

    ``kl0_bound`` bounds the initial KL divergence and defaults to ``n``.
    ``log_factor`` replaces ``log(2 kl0_bound / eps)`` outright when given.
    """
    if isinstance(n, bool) or int(n) != n:
        raise ValueError(f"n must be an integer, got {n}")
    n = int(n)
    if kl0_bound is None:
        kl0_bound = n
    _positive(alpha=alpha, smooth_L=smooth_L, n=n, dim_d=dim_d, eps=eps, kl0_bound=kl0_bound)
    eta = step_size(alpha, smooth_L, n, dim_d, eps)
    if log_factor is None:
        log_factor = math.log(2.0 * kl0_bound / eps)
    else:
        _positive(log_factor=log_factor)
    raw = n / (alpha * eta) * log_factor
    clamped = raw < 1.0
    steps = 1 if clamped else math.ceil(raw)
    bm = math.ceil(math.sqrt(n))
    return LangevinSchedule(eta, steps, bm, bm, float(n), float(eps), raw, clamped)


def num_epochs(steps_K: int, epoch_m: int) -> int:
    # the outer loop runs s = 0, 1, ..., floor(K / m)
    return steps_K // epoch_m + 1 if steps_K > 0 else 0


def grad_evals_formula(n: int, steps_K: int, epoch_m: int, batch_B: int) -> int:
    """Per-datum gradient evaluations spent by :func:`sarah_ld`."""
    return num_epochs(steps_K, epoch_m) * (n + 2 * batch_B * (epoch_m - 1))


def langevin_noise(rng, eta: float, n: int, size) -> np.ndarray:
    """Injected Langevin noise, variance ``2 eta / n`` per coordinate."""
    return math.sqrt(2.0 * eta / n) * rng.standard_normal(size)


@njit(cache=True)
def _run_epochs(kernel, theta, X, hyper, eta, noise, idx, all_rows, m, step0):
    """Run ``len(noise) // m`` epochs.

    Returns ``(theta, failed_step, grad_evals)`` with ``failed_step = -1`` on
    success.
    """
    D = theta.shape[0]
    n_ep = noise.shape[0] // m
    prev = theta.copy()
    evals = 0
    for e in range(n_ep):
        v = kernel(theta, X, all_rows, hyper)
        evals += all_rows.shape[0]
        for j in range(D):
            if not np.isfinite(v[j]):
                return theta, step0 + e * m, evals
        prev[:] = theta
        theta = theta - eta * v + noise[e * m]
        for l in range(1, m):
            rows = idx[e * (m - 1) + l - 1]
            v = kernel(theta, X, rows, hyper) - kernel(prev, X, rows, hyper) + v
            evals += 2 * rows.shape[0]
            for j in range(D):
                if not np.isfinite(v[j]):
                    return theta, step0 + e * m + l, evals
            prev[:] = theta
            theta = theta - eta * v + noise[e * m + l]
    return theta, -1, evals


def sarah_ld(model, data, sched: LangevinSchedule, init, rng_seed, chunk_floats: int = 2_000_000):
    """Draw one approximate posterior sample by SARAH-LD.

    Runs ``floor(K / m) + 1`` epochs of ``m`` updates each (none when
    ``K == 0``).  Minibatches of size ``B`` are drawn uniformly with
    replacement.  Returns ``(theta, SamplerStats)``.
    """
    X = model.check_data(data)
    n = X.shape[0]
    if n < 1:
        raise ValueError("need at least one data point")
    theta = model.check_theta(np.array(init, dtype=np.float64, copy=True))
    if sched.batch_B > n:
        raise ValueError(f"batch size {sched.batch_B} exceeds data size {n}")
    rng = np.random.default_rng(rng_seed)
    m, B, D = sched.epoch_m, sched.batch_B, model.dim
    total = num_epochs(sched.steps_K, m)
    stats = SamplerStats(clamped=sched.clamped)
    if total == 0:
        return theta, stats

    scale = math.sqrt(2.0 * sched.eta / n)
    all_rows = np.arange(n, dtype=np.int64)
    hyper = model.hyper
    per_chunk = max(1, chunk_floats // (m * max(D, B)))
    done = 0
    while done < total:
        ep = min(per_chunk, total - done)
        noise = scale * rng.standard_normal((ep * m, D))
        idx = rng.integers(0, n, size=(ep * (m - 1), B), dtype=np.int64)
        theta, failed, evals = _run_epochs(model.kernel, theta, X, hyper, sched.eta, noise, idx,
                                    all_rows, m, done * m)
        if failed >= 0 or not np.all(np.isfinite(theta)):
            step = failed if failed >= 0 else (done + ep) * m
            raise SamplerDivergence(step, float(np.linalg.norm(theta)))
        done += ep
        stats.grad_evals += evals

    stats.epochs = total
    stats.wall_steps = total * m
    return theta, stats
