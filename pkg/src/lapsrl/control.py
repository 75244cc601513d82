"""Planners: infinite-horizon discrete LQR and the iCEM trajectory optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DareError(RuntimeError):
    def __init__(self, msg, residual=float("nan"), iterations=0):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


@dataclass
class LqrSolution:
    P: np.ndarray
    K: np.ndarray
    iterations: int
    residual: float

    def action(self, x) -> np.ndarray:
        return -self.K @ np.asarray(x, dtype=np.float64)


def _riccati_map(P, A, B, Q, R):
    S = R + B.T @ P @ B
    G = np.linalg.solve(S, B.T @ P @ A)
    return Q + A.T @ P @ A - A.T @ P @ B @ G


def dare_residual(P, A, B, Q, R) -> float:
    return float(np.max(np.abs(P - _riccati_map(P, A, B, Q, R))))


def solve_dare(A, B, Q, R, tol=1e-10, max_iter=10_000) -> LqrSolution:
    """Fixed-point Riccati iteration from ``P0 = Q``; control law ``u = -K x``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    nx, nu = B.shape
    if A.shape != (nx, nx) or Q.shape != (nx, nx) or R.shape != (nu, nu):
        raise ValueError(f"inconsistent shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}")
    if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
        raise ValueError("Q must be symmetric positive semidefinite")
    if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
        raise ValueError("R must be symmetric positive definite")

    P = Q.copy()
    residual = float("inf")
    with np.errstate(over="raise", invalid="raise"):
        for it in range(1, max_iter + 1):
            try:
                P_next = _riccati_map(P, A, B, Q, R)
            except np.linalg.LinAlgError as exc:
                raise DareError(f"singular R + B'PB at iteration {it}", residual, it) from exc
            except FloatingPointError as exc:
                raise DareError(f"Riccati iteration overflowed at iteration {it}", residual, it) from exc
            P_next = 0.5 * (P_next + P_next.T)
            residual = float(np.max(np.abs(P_next - P)))
            P = P_next
            if residual <= tol:
                break
        else:
            raise DareError(f"no convergence in {max_iter} iterations (residual {residual:.3g})",
                            residual, max_iter)
        try:
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        except np.linalg.LinAlgError as exc:
            raise DareError("singular R + B'PB at the solution", residual, it) from exc
    return LqrSolution(P, K, it, dare_residual(P, A, B, Q, R))


# ---------------------------------------------------------------------------
# iCEM


@dataclass(frozen=True)
class IcemConfig:
    iterations: int = 8
    samples: int = 48
    elites: int = 5
    horizon: int = 20
    init_std: float = 0.5
    beta: float = 2.0
    action_dim: int = 1
    low: float = -1.0
    high: float = 1.0
    min_std: float = 1e-3

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 1 <= self.elites <= self.samples:
            raise ValueError("need 1 <= elites <= samples")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.init_std > 0:
            raise ValueError("init_std must be positive")


@dataclass
class IcemResult:
    actions: np.ndarray           # (horizon, action_dim)
    best_return: float
    best_history: list = field(default_factory=list)


def colored_noise(beta, shape, rng) -> np.ndarray:
    """Gaussian noise with power spectrum ~ 1/f**beta along the last axis.

    Scaled so every entry has unit variance in expectation.
    """
    n = shape[-1]
    if beta == 0 or n < 2:
        return rng.standard_normal(shape)
    f = np.fft.rfftfreq(n)
    f[0] = 1.0 / n
    s = f ** (-beta / 2.0)
    size = (*shape[:-1], len(f))
    sr = rng.standard_normal(size) * s
    si = rng.standard_normal(size) * s
    # the DC term (and the Nyquist term for even n) is real
    si[..., 0] = 0.0
    sr[..., 0] *= np.sqrt(2.0)
    var = 2 * s[0] ** 2
    if n % 2 == 0:
        si[..., -1] = 0.0
        sr[..., -1] *= np.sqrt(2.0)
        var += 2 * s[-1] ** 2 + 4 * np.sum(s[1:-1] ** 2)
    else:
        var += 4 * np.sum(s[1:] ** 2)
    return np.fft.irfft(sr + 1j * si, n=n, axis=-1) * (n / np.sqrt(var))


def refit(elite_actions):
    """Mean and std of an elite set ``(E, horizon, action_dim)``."""
    return elite_actions.mean(axis=0), elite_actions.std(axis=0)


def rollout_returns(dynamics, reward, state, actions) -> np.ndarray:
    """Total reward of each action sequence ``(N, H, da)`` from ``state``."""
    N, H, _ = actions.shape
    s = np.repeat(np.asarray(state, dtype=np.float64)[None, :], N, axis=0)
    total = np.zeros(N)
    with np.errstate(all="ignore"):
        for t in range(H):
            nxt = dynamics(s, actions[:, t])
            total += reward(s, actions[:, t], nxt)
            s = nxt
    total[~np.isfinite(total)] = -np.inf
    return total


def icem_plan(dynamics, reward, state, cfg: IcemConfig, rng_seed, init_mean=None) -> IcemResult:
    """Plan an action sequence with the iterated cross-entropy method.

    ``dynamics(states, actions) -> next_states`` and
    ``reward(states, actions, next_states) -> rewards`` act on batches.
    Elites of one iteration join the candidate pool of the next, and the
    final iteration also scores the current mean sequence.
    """
    rng = np.random.default_rng(rng_seed)
    H, da = cfg.horizon, cfg.action_dim
    mean = np.zeros((H, da)) if init_mean is None else np.asarray(init_mean, dtype=np.float64).reshape(H, da)
    std = np.full((H, da), cfg.init_std)
    best_actions = None
    best_return = -np.inf
    history = []
    kept = np.empty((0, H, da))
    kept_ret = np.empty(0)
    for it in range(cfg.iterations):
        noise = colored_noise(cfg.beta, (cfg.samples, da, H), rng).transpose(0, 2, 1)
        cand = np.clip(mean + std * noise, cfg.low, cfg.high)
        if it == cfg.iterations - 1:
            # the distribution mean joins the final batch as a denoised candidate
            cand = np.concatenate([cand, np.clip(mean, cfg.low, cfg.high)[None]])
        ret = rollout_returns(dynamics, reward, state, cand)
        pool = np.concatenate([cand, kept])
        pool_ret = np.concatenate([ret, kept_ret])
        order = np.argsort(-pool_ret, kind="stable")[:cfg.elites]
        order = order[np.isfinite(pool_ret[order])]
        if len(order) > 0:
            kept, kept_ret = pool[order], pool_ret[order]
            mean, std = refit(kept)
            std = np.maximum(std, cfg.min_std)
            if kept_ret[0] > best_return:
                best_return = float(kept_ret[0])
                best_actions = kept[0].copy()
        assert not history or best_return >= history[-1]
        history.append(best_return)
    if best_actions is None:
        best_actions = np.clip(mean, cfg.low, cfg.high)
    return IcemResult(best_actions, best_return, history)
