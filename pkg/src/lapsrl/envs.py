"""Simulation environments: batched Gaussian bandit, cart-pole, planar reacher."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class EpisodeOver(RuntimeError):
    """Raised when stepping an environment whose episode has ended."""


# ---------------------------------------------------------------------------
# bandit


@dataclass
class BanditEnv:
    arms: list
    batch: int = 20

    def __post_init__(self):
        self.arms = [(float(m), float(v)) for m, v in self.arms]
        if not self.arms:
            raise ValueError("bandit needs at least one arm")
        for m, v in self.arms:
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"arm variance must be positive, got {v}")
        if int(self.batch) != self.batch or self.batch < 1:
            raise ValueError(f"batch must be a positive integer, got {self.batch}")
        self.batch = int(self.batch)

    @property
    def means(self) -> np.ndarray:
        return np.array([m for m, _ in self.arms])

    @property
    def best_arm(self) -> int:
        return int(np.argmax(self.means))

    def gap(self, arm: int) -> float:
        """Expected regret of a single reward from ``arm``."""
        self._check_arm(arm)
        means = self.means
        return float(means.max() - means[arm])

    def pull_regret(self, arm: int) -> float:
        """Exact expected regret of one batched pull."""
        return self.batch * self.gap(arm)

    def _check_arm(self, arm):
        if isinstance(arm, bool) or int(arm) != arm or not 0 <= arm < len(self.arms):
            raise ValueError(f"invalid arm index {arm} for {len(self.arms)} arms")

    def pull(self, arm: int, rng) -> np.ndarray:
        self._check_arm(arm)
        m, v = self.arms[int(arm)]
        return m + math.sqrt(v) * rng.standard_normal(self.batch)

    def get_state(self) -> dict:
        return {"arms": [list(a) for a in self.arms], "batch": self.batch}

    @classmethod
    def from_state(cls, state) -> "BanditEnv":
        return cls([tuple(a) for a in state["arms"]], state["batch"])


def bandit_pull(env: BanditEnv, arm_index: int, rng_seed) -> np.ndarray:
    return env.pull(arm_index, np.random.default_rng(rng_seed))


# ---------------------------------------------------------------------------
# cart-pole


@dataclass
class CartpoleEnv:
    """Cart-pole with a continuous force ``10 * action`` newtons.

    State is ``(x, x_dot, phi, phi_dot)`` with ``phi = 0`` upright.
    """

    gravity: float = 9.8
    masscart: float = 1.0
    masspole: float = 0.1
    length: float = 0.5  # half the pole length
    force_mag: float = 10.0
    dt: float = 0.02
    horizon: int = 200
    x_threshold: float = 2.4
    phi_threshold: float = 12 * 2 * math.pi / 360
    state: np.ndarray = field(default_factory=lambda: np.zeros(4))
    step_count: int = 0
    done: bool = False

    state_dim = 4
    action_dim = 1

    @property
    def total_mass(self) -> float:
        return self.masscart + self.masspole

    def reset(self, rng, state=None) -> np.ndarray:
        if state is None:
            state = rng.uniform(-0.05, 0.05, size=4)
        self.state = np.asarray(state, dtype=np.float64).copy()
        self.step_count = 0
        self.done = False
        return self.state.copy()

    def derivatives(self, state, action):
        x, x_dot, phi, phi_dot = state
        force = self.force_mag * action
        cos, sin = math.cos(phi), math.sin(phi)
        polemass_length = self.masspole * self.length
        temp = (force + polemass_length * phi_dot ** 2 * sin) / self.total_mass
        phi_acc = (self.gravity * sin - cos * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos ** 2 / self.total_mass))
        x_acc = temp - polemass_length * phi_acc * cos / self.total_mass
        return x_acc, phi_acc

    def step(self, action):
        if self.done:
            raise EpisodeOver("cart-pole episode has terminated; call reset()")
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        x, x_dot, phi, phi_dot = self.state
        x_acc, phi_acc = self.derivatives(self.state, a)
        self.state = np.array([
            x + self.dt * x_dot,
            x_dot + self.dt * x_acc,
            phi + self.dt * phi_dot,
            phi_dot + self.dt * phi_acc,
        ])
        self.step_count += 1
        failed = abs(self.state[0]) > self.x_threshold or abs(self.state[2]) > self.phi_threshold
        self.done = failed or self.step_count >= self.horizon
        reward = 0.0 if failed else 1.0
        return self.state.copy(), reward, self.done

    def linearization(self):
        """Discrete-time ``(A, B)`` of the Euler step about the upright rest state."""
        eps = 1e-6
        A = np.zeros((4, 4))
        B = np.zeros((4, 1))

        def euler(s, a):
            xa, pa = self.derivatives(s, a)
            return np.array([s[0] + self.dt * s[1], s[1] + self.dt * xa,
                             s[2] + self.dt * s[3], s[3] + self.dt * pa])

        s0 = np.zeros(4)
        for j in range(4):
            e = np.zeros(4)
            e[j] = eps
            A[:, j] = (euler(s0 + e, 0.0) - euler(s0 - e, 0.0)) / (2 * eps)
        B[:, 0] = (euler(s0, eps) - euler(s0, -eps)) / (2 * eps)
        return A, B

    def get_state(self) -> dict:
        return {"state": self.state.tolist(), "step_count": self.step_count, "done": self.done}

    def set_state(self, snap) -> None:
        self.state = np.array(snap["state"], dtype=np.float64)
        self.step_count = int(snap["step_count"])
        self.done = bool(snap["done"])


# ---------------------------------------------------------------------------
# reacher


@dataclass
class ReacherEnv:
    """Two-link planar arm without gravity, unit inertia per joint.

    Joint dynamics ``theta'' = torque - damping * theta'``.  The observation
    excludes the target; ``fingertip`` and ``target`` are exposed separately.
    """

    link: float = 0.1
    damping: float = 0.1
    dt: float = 0.02
    horizon: int = 50
    action_cost: float = 0.1
    state: np.ndarray = field(default_factory=lambda: np.zeros(4))
    target: np.ndarray = field(default_factory=lambda: np.zeros(2))
    step_count: int = 0
    done: bool = False

    state_dim = 4
    action_dim = 2

    @property
    def reach(self) -> float:
        return 2 * self.link

    def reset(self, rng, state=None, target=None) -> np.ndarray:
        if state is None:
            state = np.concatenate([rng.uniform(-math.pi, math.pi, size=2), np.zeros(2)])
        if target is None:
            r = self.reach * math.sqrt(rng.uniform())
            ang = rng.uniform(-math.pi, math.pi)
            target = np.array([r * math.cos(ang), r * math.sin(ang)])
        self.state = np.asarray(state, dtype=np.float64).copy()
        self.target = np.asarray(target, dtype=np.float64).copy()
        self.step_count = 0
        self.done = False
        return self.state.copy()

    def fingertip(self, state=None) -> np.ndarray:
        s = self.state if state is None else np.asarray(state)
        return fingertip(s, self.link)

    def distance(self, state=None) -> float:
        return float(np.linalg.norm(self.fingertip(state) - self.target))

    def step(self, action):
        if self.done:
            raise EpisodeOver("reacher episode has terminated; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
        self.state = reacher_dynamics(self.state[None, :], a[None, :], self.damping, self.dt)[0]
        self.step_count += 1
        self.done = self.step_count >= self.horizon
        reward = reacher_reward(self.state[None, :], a[None, :], self.target, self.link, self.action_cost)[0]
        return self.state.copy(), float(reward), self.done

    def get_state(self) -> dict:
        return {"state": self.state.tolist(), "target": self.target.tolist(),
                "step_count": self.step_count, "done": self.done}

    def set_state(self, snap) -> None:
        self.state = np.array(snap["state"], dtype=np.float64)
        self.target = np.array(snap["target"], dtype=np.float64)
        self.step_count = int(snap["step_count"])
        self.done = bool(snap["done"])


def fingertip(states, link=0.1) -> np.ndarray:
    s = np.asarray(states, dtype=np.float64)
    t1, t2 = s[..., 0], s[..., 1]
    x = link * np.cos(t1) + link * np.cos(t1 + t2)
    y = link * np.sin(t1) + link * np.sin(t1 + t2)
    return np.stack([x, y], axis=-1)


def reacher_dynamics(states, actions, damping=0.1, dt=0.02) -> np.ndarray:
    """Batched reacher step; velocity by Euler, angle by constant acceleration."""
    s = np.asarray(states, dtype=np.float64)
    a = np.clip(np.asarray(actions, dtype=np.float64), -1.0, 1.0)
    ang, vel = s[:, :2], s[:, 2:]
    acc = a - damping * vel
    return np.hstack([ang + dt * vel + 0.5 * dt * dt * acc, vel + dt * acc])


def reacher_reward(next_states, actions, target, link=0.1, action_cost=0.1) -> np.ndarray:
    dist = np.linalg.norm(fingertip(next_states, link) - np.asarray(target), axis=-1)
    return -dist - action_cost * np.sum(np.asarray(actions) ** 2, axis=-1)
