"""Bayesian models consumed by the Langevin sampler.

Every model defines a posterior over a flat parameter vector ``theta`` of
length ``dim`` through an i.i.d. scalar prior and a per-datum Gaussian
likelihood.  The sampler works with the per-datum energies

    f_i(theta) = -log prior(theta) / n - log lik(x_i | theta)

whose average ``F`` satisfies ``posterior ~ exp(-n F)``.

Data sets are 2-D float arrays with one datum per row.  Gradients of the
``f_i`` are numba kernels with the common signature
``kernel(theta, X, rows, hyper) -> mean_{i in rows} grad f_i(theta)`` so the
sampler can run its whole inner loop compiled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import logsumexp

from . import nn

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianPosterior:
    mean: float
    variance: float

    def __post_init__(self):
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValueError(f"variance must be positive, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class MixturePrior:
    """Scalar Gaussian mixture, applied i.i.d. to every coordinate of theta."""

    weights: tuple
    means: tuple
    variances: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        m = tuple(float(x) for x in self.means)
        v = tuple(float(x) for x in self.variances)
        if not (len(w) == len(m) == len(v) >= 1):
            raise ValueError("weights, means and variances must have equal nonzero length")
        if min(w) <= 0 or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError(f"weights must be positive and sum to 1, got {w}")
        if min(v) <= 0:
            raise ValueError(f"variances must be positive, got {v}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @classmethod
    def gaussian(cls, mean=0.0, variance=1.0) -> "MixturePrior":
        return cls((1.0,), (mean,), (variance,))

    @classmethod
    def from_components(cls, components) -> "MixturePrior":
        """Build from ``[(weight, mean, variance), ...]``."""
        w, m, v = zip(*components)
        return cls(w, m, v)

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def components(self):
        return list(zip(self.weights, self.means, self.variances))

    def encode(self) -> np.ndarray:
        return np.array([self.k, *self.weights, *self.means, *self.variances], dtype=np.float64)

    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    def logpdf(self, theta) -> float:
        """Sum over coordinates of the scalar mixture log-density."""
        t = np.atleast_1d(np.asarray(theta, dtype=np.float64))[:, None]
        w = np.asarray(self.weights)
        m = np.asarray(self.means)
        v = np.asarray(self.variances)
        comp = np.log(w) - 0.5 * (LOG_2PI + np.log(v)) - 0.5 * (t - m) ** 2 / v
        return float(logsumexp(comp, axis=1).sum())

    def grad_logpdf(self, theta) -> np.ndarray:
        t = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        return _prior_grad(t, self.encode(), 0)

    def sample(self, rng, size) -> np.ndarray:
        comp = rng.choice(self.k, size=size, p=self.weights)
        m = np.asarray(self.means)[comp]
        s = np.sqrt(np.asarray(self.variances))[comp]
        return m + s * rng.standard_normal(size)

    def to_dict(self) -> dict:
        return {"components": [list(c) for c in self.components]}

    @classmethod
    def from_dict(cls, d) -> "MixturePrior":
        if "components" in d:
            return cls.from_components(d["components"])
        return cls.gaussian(d.get("mean", 0.0), d.get("variance", 1.0))


@njit(cache=True)
def _prior_grad(theta, enc, start):
    """Gradient of the i.i.d. mixture log-prior encoded at ``enc[start:]``."""
    k = int(enc[start])
    w = enc[start + 1:start + 1 + k]
    m = enc[start + 1 + k:start + 1 + 2 * k]
    v = enc[start + 1 + 2 * k:start + 1 + 3 * k]
    out = np.empty(theta.shape[0])
    if k == 1:
        for j in range(theta.shape[0]):
            out[j] = -(theta[j] - m[0]) / v[0]
        return out
    logc = np.empty(k)
    for j in range(theta.shape[0]):
        mx = -np.inf
        for c in range(k):
            logc[c] = math.log(w[c]) - 0.5 * math.log(v[c]) - 0.5 * (theta[j] - m[c]) ** 2 / v[c]
            if logc[c] > mx:
                mx = logc[c]
        tot = 0.0
        acc = 0.0
        for c in range(k):
            r = math.exp(logc[c] - mx)
            tot += r
            acc += r * (-(theta[j] - m[c]) / v[c])
        out[j] = acc / tot
    return out


# Kernel hyper layout: [sigma2, prior_offset, model-specific ..., prior encoding]

@njit(cache=True)
def _gauss_mean_kernel(theta, X, rows, hyper):
    sigma2 = hyper[0]
    n = X.shape[0]
    g = -_prior_grad(theta, hyper, int(hyper[1])) / n
    acc = 0.0
    for r in rows:
        acc += (X[r, 0] - theta[0]) / sigma2
    g[0] -= acc / rows.shape[0]
    return g


@njit(cache=True)
def _linear_kernel(theta, X, rows, hyper):
    sigma2 = hyper[0]
    d = int(hyper[2])
    p = int(hyper[3])
    n = X.shape[0]
    g = -_prior_grad(theta, hyper, int(hyper[1])) / n
    scale = 1.0 / (sigma2 * rows.shape[0])
    for r in rows:
        for i in range(d):
            pred = 0.0
            for j in range(p):
                pred += theta[i * p + j] * X[r, j]
            res = (X[r, p + i] - pred) * scale
            for j in range(p):
                g[i * p + j] -= res * X[r, j]
    return g


@njit(cache=True)
def _mlp_kernel(theta, X, rows, hyper):
    sigma2 = hyper[0]
    nl = int(hyper[2])
    dims = np.empty(nl, dtype=np.int64)
    for i in range(nl):
        dims[i] = int(hyper[3 + i])
    p = dims[0]
    q = dims[nl - 1]
    n = X.shape[0]
    B = rows.shape[0]
    Xb = np.empty((B, p))
    Yb = np.empty((B, q))
    for b in range(B):
        Xb[b] = X[rows[b], :p]
        Yb[b] = X[rows[b], p:p + q]
    pred = nn.forward_batch(theta, dims, Xb)
    cot = (Yb - pred) / (sigma2 * B)
    g = -_prior_grad(theta, hyper, int(hyper[1])) / n
    g -= nn.vjp_batch(theta, dims, Xb, cot)
    return g


@dataclass
class DifferentiableModel:
    """Prior plus per-datum Gaussian likelihood over a flat parameter vector.

    ``alpha_scale`` declares the LSI constant as ``alpha_scale * n``; the
    smoothness constant is then ``alpha(n) / n``.  Subclasses with a constant
    posterior Hessian may compute both exactly instead.
    """

    dim: int
    prior: MixturePrior
    sigma2: float
    alpha_scale: float | None = None
    kind: str = field(default="", init=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.alpha_scale is not None and not self.alpha_scale > 0:
            raise ValueError("alpha_scale must be positive")

    # subclasses provide: kernel, _model_hyper(), data_width, loglik()
    kernel = None

    def _model_hyper(self) -> list:
        return []

    @property
    def hyper(self) -> np.ndarray:
        h = getattr(self, "_hyper", None)
        if h is None:
            head = self._model_hyper()
            prior_off = 2 + len(head)
            h = np.array([self.sigma2, prior_off, *head, *self.prior.encode()], dtype=np.float64)
            self._hyper = h
        return h

    def check_data(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.data_width:
            raise ValueError(f"{self.kind} data must have shape (n, {self.data_width}), got {X.shape}")
        return X

    def check_theta(self, theta) -> np.ndarray:
        theta = np.ascontiguousarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ValueError(f"parameter vector must have shape ({self.dim},), got {theta.shape}")
        return theta

    def log_prior(self, theta) -> float:
        return self.prior.logpdf(theta)

    def grad_log_prior(self, theta) -> np.ndarray:
        return self.prior.grad_logpdf(self.check_theta(theta))

    def energy_terms(self, theta, X) -> np.ndarray:
        """The per-datum energies f_i(theta), shape (n,)."""
        X = self.check_data(X)
        return -self.log_prior(theta) / X.shape[0] - self.loglik(theta, X)

    def grad_f(self, theta, X, rows=None) -> np.ndarray:
        """Mean of grad f_i over ``rows`` (all data when omitted)."""
        X = self.check_data(X)
        theta = self.check_theta(theta)
        if rows is None:
            rows = np.arange(X.shape[0])
        rows = np.asarray(rows, dtype=np.int64)
        return self.kernel(theta, X, rows, self.hyper)

    def grad_loglik(self, theta, X, rows=None) -> np.ndarray:
        """Mean over ``rows`` of grad log lik(x_i | theta)."""
        n = self.check_data(X).shape[0]
        return -self.grad_f(theta, X, rows) - self.grad_log_prior(theta) / n

    def lsi_alpha(self, n: int) -> float:
        if self.alpha_scale is None:
            raise ValueError(f"{self.kind} model needs an alpha_scale")
        return self.alpha_scale * n

    def smooth_L(self, n: int) -> float:
        return self.lsi_alpha(n) / n

    def sample_prior(self, rng) -> np.ndarray:
        return self.prior.sample(rng, self.dim)

    def prior_mean(self) -> np.ndarray:
        return np.full(self.dim, self.prior.mean())

    def to_config(self) -> dict:
        return {"kind": self.kind, "prior": self.prior.to_dict(),
                "sigma2": self.sigma2, "alpha_scale": self.alpha_scale}


class GaussianMeanModel(DifferentiableModel):
    """Unknown scalar mean with known observation variance ``sigma2``."""

    kernel = staticmethod(_gauss_mean_kernel)
    data_width = 1

    def __init__(self, prior: MixturePrior, sigma2: float, alpha_scale=None, kind="gaussian_bandit_arm"):
        super().__init__(1, prior, sigma2, alpha_scale)
        self.kind = kind

    def loglik(self, theta, X) -> np.ndarray:
        x = np.asarray(X, dtype=np.float64)[:, 0]
        return -0.5 * (LOG_2PI + math.log(self.sigma2)) - 0.5 * (x - theta[0]) ** 2 / self.sigma2

    def lsi_alpha(self, n: int) -> float:
        if self.alpha_scale is None and self.prior.k == 1:
            return lsi_gaussian_mean(self.prior.variances[0], self.sigma2, n)
        if self.alpha_scale is None:
            return n / self.sigma2
        return self.alpha_scale * n

    def smooth_L(self, n: int) -> float:
        # exact Hessian of f_i for a Gaussian prior
        if self.alpha_scale is None and self.prior.k == 1:
            return 1.0 / (n * self.prior.variances[0]) + 1.0 / self.sigma2
        return self.lsi_alpha(n) / n


class LinearDynamicsModel(DifferentiableModel):
    """``s' = A s + B a + noise`` with theta = row-major ``[A | B]``.

    Data rows are ``[s, a, s']``.
    """

    kernel = staticmethod(_linear_kernel)

    def __init__(self, state_dim, action_dim, prior, sigma2, alpha_scale=None):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        super().__init__(self.state_dim * (self.state_dim + self.action_dim), prior, sigma2, alpha_scale)
        self.kind = "linear_dynamics"

    @property
    def in_dim(self) -> int:
        return self.state_dim + self.action_dim

    @property
    def data_width(self) -> int:
        return self.in_dim + self.state_dim

    def _model_hyper(self):
        return [self.state_dim, self.in_dim]

    def matrices(self, theta):
        W = np.asarray(theta, dtype=np.float64).reshape(self.state_dim, self.in_dim)
        return W[:, :self.state_dim].copy(), W[:, self.state_dim:].copy()

    def flatten(self, A, B) -> np.ndarray:
        return np.hstack([A, B]).ravel()

    def loglik(self, theta, X) -> np.ndarray:
        X = self.check_data(X)
        W = np.asarray(theta).reshape(self.state_dim, self.in_dim)
        res = X[:, self.in_dim:] - X[:, :self.in_dim] @ W.T
        return (-0.5 * self.state_dim * (LOG_2PI + math.log(self.sigma2))
                - 0.5 * (res ** 2).sum(axis=1) / self.sigma2)

    def to_config(self):
        return {**super().to_config(), "state_dim": self.state_dim, "action_dim": self.action_dim}


class MlpDynamicsModel(DifferentiableModel):
    """Tanh MLP predicting the state change ``s' - s`` from ``[s, a]``.

    Data rows are ``[s, a, s' - s]``.
    """

    kernel = staticmethod(_mlp_kernel)

    def __init__(self, state_dim, action_dim, hidden, prior, sigma2, alpha_scale=None):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.layer_dims = (self.state_dim + self.action_dim, *[int(h) for h in hidden], self.state_dim)
        self._dims = np.asarray(self.layer_dims, dtype=np.int64)
        super().__init__(nn.num_params(self.layer_dims), prior, sigma2, alpha_scale)
        self.kind = "mlp_dynamics"

    @property
    def data_width(self) -> int:
        return self.state_dim + self.action_dim + self.state_dim

    def _model_hyper(self):
        return [len(self.layer_dims), *self.layer_dims]

    def predict_delta(self, theta, inputs) -> np.ndarray:
        inputs = np.ascontiguousarray(np.atleast_2d(inputs), dtype=np.float64)
        return nn.forward_batch(np.ascontiguousarray(theta, dtype=np.float64), self._dims, inputs)

    def loglik(self, theta, X) -> np.ndarray:
        X = self.check_data(X)
        p = self.state_dim + self.action_dim
        res = X[:, p:] - self.predict_delta(theta, X[:, :p])
        return (-0.5 * self.state_dim * (LOG_2PI + math.log(self.sigma2))
                - 0.5 * (res ** 2).sum(axis=1) / self.sigma2)

    def to_config(self):
        return {**super().to_config(), "state_dim": self.state_dim,
                "action_dim": self.action_dim, "hidden": list(self.layer_dims[1:-1])}


# ---------------------------------------------------------------------------
# closed forms


def gaussian_mean_conjugate(prior: GaussianPosterior, data, sigma2: float) -> GaussianPosterior:
    """Exact posterior of a Gaussian mean with known noise variance."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    x = np.asarray(data, dtype=np.float64).ravel()
    if x.size == 0:
        return prior
    precision = 1.0 / prior.variance + x.size / sigma2
    mean = (prior.mean / prior.variance + x.sum() / sigma2) / precision
    return GaussianPosterior(float(mean), float(1.0 / precision))


def lsi_gaussian_mean(sigma0_sq: float, sigma_sq: float, n: int) -> float:
    """Bakry-Emery LSI constant of the Gaussian-mean posterior after n points."""
    if not (sigma0_sq > 0 and sigma_sq > 0):
        raise ValueError("variances must be positive")
    if n < 0:
        raise ValueError("n must be nonnegative")
    return 1.0 / sigma0_sq + n / sigma_sq


def lsi_mixture_lower_bound(k: int, min_p: float, delta: float, min_alpha: float) -> float:
    """Lower bound on the LSI constant of a k-component mixture.

    ``delta * min_p * min_alpha / (4 k (1 - log min_p))``
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 < min_p <= 1:
        raise ValueError(f"min_p must lie in (0, 1], got {min_p}")
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if not min_alpha > 0:
        raise ValueError("min_alpha must be positive")
    return delta * min_p * min_alpha / (4.0 * k * (1.0 - math.log(min_p)))


def lsi_tail_bound(alpha: float, t: float, lipschitz: float = 1.0) -> float:
    """Two-sided sub-Gaussian tail bound ``2 exp(-alpha t^2 / L_g^2)``."""
    if not (alpha > 0 and lipschitz > 0 and t >= 0):
        raise ValueError("need alpha > 0, lipschitz > 0 and t >= 0")
    return 2.0 * math.exp(-alpha * t * t / lipschitz ** 2)


def tail_frequency(values, t: float, center=None) -> float:
    """Fraction of ``values`` at distance ``>= t`` from ``center`` (sample mean by default)."""
    v = np.asarray(values, dtype=np.float64)
    c = v.mean() if center is None else center
    return float(np.mean(np.abs(v - c) >= t))


@dataclass(frozen=True)
class LinearRegressionPosterior:
    """Matrix-normal posterior of ``Y = Z W^T + noise`` with i.i.d. Gaussian prior.

    All output rows share the input covariance ``cov``; ``mean`` has shape
    ``(d_out, d_in)``.
    """

    mean: np.ndarray
    cov: np.ndarray

    def sample(self, rng) -> np.ndarray:
        chol = np.linalg.cholesky(self.cov)
        z = rng.standard_normal(self.mean.shape)
        return self.mean + z @ chol.T


def blr_posterior(Z, Y, prior_var: float = 1.0, sigma2: float = 0.25) -> LinearRegressionPosterior:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    p = Z.shape[1]
    precision = np.eye(p) / prior_var + Z.T @ Z / sigma2
    cho = np.linalg.cholesky(precision)
    cov = np.linalg.inv(cho).T @ np.linalg.inv(cho)
    cov = 0.5 * (cov + cov.T)
    mean = (cov @ (Z.T @ Y) / sigma2).T
    return LinearRegressionPosterior(mean, cov)


# ---------------------------------------------------------------------------

MODEL_KINDS = ("gaussian_bandit_arm", "mixture_prior_arm", "linear_dynamics", "mlp_dynamics")

BIMODAL_ARM_PRIOR = MixturePrior((0.5, 0.5), (0.0, 1.0), (0.25, 1.0))


def make_model(kind: str, config: dict | None = None) -> DifferentiableModel:
    """Build one of the experiment models from a JSON-style config dict."""
    cfg = dict(config or {})
    alpha_scale = cfg.get("alpha_scale")
    if kind == "gaussian_bandit_arm":
        prior = MixturePrior.from_dict(cfg.get("prior", {"mean": 0.0, "variance": 1.0}))
        return GaussianMeanModel(prior, cfg.get("sigma2", 0.25), alpha_scale, kind)
    if kind == "mixture_prior_arm":
        prior = MixturePrior.from_dict(cfg["prior"]) if "prior" in cfg else BIMODAL_ARM_PRIOR
        return GaussianMeanModel(prior, cfg.get("sigma2", 0.25), alpha_scale, kind)
    if kind == "linear_dynamics":
        prior = MixturePrior.from_dict(cfg.get("prior", {"mean": 0.0, "variance": 1.0}))
        return LinearDynamicsModel(cfg.get("state_dim", 4), cfg.get("action_dim", 1),
                                   prior, cfg.get("sigma2", 0.25), alpha_scale)
    if kind == "mlp_dynamics":
        prior = MixturePrior.from_dict(cfg.get("prior", {"mean": 0.0, "variance": 0.1}))
        return MlpDynamicsModel(cfg.get("state_dim", 4), cfg.get("action_dim", 2),
                                cfg.get("hidden", (128, 128)), prior,
                                cfg.get("sigma2", 0.25), alpha_scale)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
