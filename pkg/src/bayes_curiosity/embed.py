"""Latent feature map trained on demonstrations by BLR predictive likelihood.

The feature map is a tanh network followed by a constant 1 appended as the
regression intercept.  Training follows the usual subset-conditioning
scheme: each epoch draws a conditioning subset ``E`` of the demonstrations,
builds a fresh BLR posterior on ``phi(E)``, and takes one Adam step per
minibatch on the predictive negative log-likelihood of the minibatch.  The
gradient flows through both the minibatch features and the posterior
itself, since ``phi(E)`` depends on the network weights too.

Vector actions are handled by K independent regression heads that share
the feature map and therefore the predictive variance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import blr
from .envs import make as make_env
from .errors import InvalidArgument, NumericalFailure
from .experts import get_expert
from .nn import Adam, MLPSpec
from .paramfile import read_param_file, write_param_file

__all__ = [
    "DemoSet",
    "FeatureMap",
    "EmbedTrainConfig",
    "init_feature_map",
    "embed",
    "conditional_moments",
    "nll_loss",
    "nll_gradient",
    "nll_loss_and_gradient",
    "train_embedding",
    "generate_demos",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class DemoSet:
    """Demonstration observations ``X`` (N x D) with action targets ``T`` (N x K)."""

    X: np.ndarray
    T: np.ndarray

    def __post_init__(self) -> None:
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        T = np.asarray(self.T, dtype=np.float64)
        if T.ndim == 1:
            T = T[:, None]
        if X.shape[0] != T.shape[0]:
            raise InvalidArgument(f"{X.shape[0]} observations but {T.shape[0]} targets")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "T", T)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.X.shape[1]

    @property
    def action_dim(self) -> int:
        return self.T.shape[1]

    def rows(self, idx) -> "DemoSet":
        return DemoSet(self.X[idx], self.T[idx])

    def to_csv(self, path) -> None:
        header = [f"obs_{i}" for i in range(self.obs_dim)] + [f"act_{k}" for k in range(self.action_dim)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for x, t in zip(self.X, self.T):
                w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in t])

    @classmethod
    def from_csv(cls, path) -> "DemoSet":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            obs_cols = [i for i, h in enumerate(header) if h.startswith("obs_")]
            act_cols = [i for i, h in enumerate(header) if h.startswith("act_")]
            if not obs_cols or not act_cols:
                raise InvalidArgument(f"{path}: header must contain obs_* and act_* columns")
            data = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
        if data.size == 0:
            data = data.reshape(0, len(header))
        return cls(data[:, obs_cols], data[:, act_cols])


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Frozen observation embedding ``phi(o) = [tanh-net((o - mean) / std), 1]``."""

    net: MLPSpec
    params: np.ndarray
    obs_mean: np.ndarray
    obs_std: np.ndarray

    def __post_init__(self) -> None:
        if self.net.output_activation != "tanh":
            raise InvalidArgument("feature map output activation must be tanh")
        for name in ("params", "obs_mean", "obs_std"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.params.shape != (self.net.n_params,):
            raise InvalidArgument(f"expected {self.net.n_params} parameters, got {self.params.shape}")
        if self.obs_mean.shape != (self.input_dim,) or self.obs_std.shape != (self.input_dim,):
            raise InvalidArgument("normalizer shape does not match input dimension")
        if not np.all(np.isfinite(self.params)):
            raise NumericalFailure("feature map parameters are not finite")

    @property
    def input_dim(self) -> int:
        return self.net.input_dim

    @property
    def latent_dim(self) -> int:
        return self.net.output_dim

    @property
    def dim(self) -> int:
        """Feature dimension M, including the appended constant."""
        return self.net.output_dim + 1

    def with_params(self, params: np.ndarray) -> "FeatureMap":
        return replace(self, params=params)

    def normalize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.obs_mean) / self.obs_std

    def _forward(self, params: np.ndarray, X: np.ndarray):
        out, cache = self.net.forward(params, self.normalize(X))
        return np.hstack([out, np.ones((out.shape[0], 1))]), cache

    def features(self, X) -> np.ndarray:
        """Embed each row of ``X``; returns an (N, M) array whose last column is 1."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise InvalidArgument(f"observations have {X.shape[1]} columns, expected {self.input_dim}")
        if not np.all(np.isfinite(X)):
            raise InvalidArgument("observations must be finite")
        return self._forward(self.params, X)[0]

    def save(self, path) -> None:
        header = {
            "sizes": list(self.net.sizes),
            "hidden_activation": "tanh",
            "output_activation": self.net.output_activation,
            "bias_feature": True,
        }
        write_param_file(path, "featuremap", header, {
            "params": self.params, "obs_mean": self.obs_mean, "obs_std": self.obs_std,
        })

    @classmethod
    def load(cls, path) -> "FeatureMap":
        header, arrays = read_param_file(path, "featuremap")
        net = MLPSpec(tuple(header["sizes"]), header["output_activation"])
        return cls(net, arrays["params"], arrays["obs_mean"], arrays["obs_std"])


def init_feature_map(
    input_dim: int,
    latent_dim: int = 16,
    hidden: tuple[int, ...] = (32, 32),
    rng: np.random.Generator | None = None,
    obs_mean=None,
    obs_std=None,
) -> FeatureMap:
    """Randomly initialized map; pass ``rng=None`` for all-zero parameters."""
    net = MLPSpec((input_dim, *hidden, latent_dim), output_activation="tanh")
    params = net.init(rng) if rng is not None else np.zeros(net.n_params)
    mean = np.zeros(input_dim) if obs_mean is None else obs_mean
    std = np.ones(input_dim) if obs_std is None else obs_std
    return FeatureMap(net, params, mean, std)


def embed(fm: FeatureMap, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise InvalidArgument("embed expects a single observation vector")
    return fm.features(obs[None, :])[0]


def conditional_moments(fm: FeatureMap, E: DemoSet, x, alpha: float, beta: float):
    """Predictive mean (one per action head) and shared variance at ``x``,
    conditioning a fresh prior on the subset ``E``."""
    if len(E) == 0:
        raise InvalidArgument("conditioning set is empty")
    Phi_E = fm.features(E.X)
    phi_x = embed(fm, x)
    prior = blr.make_prior(alpha, beta, fm.dim)
    mu = np.empty(E.action_dim)
    var = None
    for k in range(E.action_dim):
        pred = blr.predict(blr.update(prior, Phi_E, E.T[:, k]), phi_x)
        mu[k] = pred.mean
        var = pred.variance
    return mu, var


def _residual_weight(unhalved_residual: bool) -> float:
    # exact Gaussian NLL has r^2 / (2 var); the unhalved variant drops the 1/2
    return 1.0 if unhalved_residual else 0.5


def _loss_and_feature_grads(Phi_E, T_E, Phi_B, T_B, alpha, beta, unhalved_residual, need_grad=True):
    m = Phi_E.shape[1]
    A = alpha * np.eye(m) + blr._gram(beta, Phi_E)
    _, L = blr._cholesky(A)
    W = beta * cho_solve((L, True), Phi_E.T @ T_E)          # (M, K) posterior means
    Z = solve_triangular(L, Phi_B.T, lower=True, check_finite=False)
    var = 1.0 / beta + np.einsum("ij,ij->j", Z, Z)           # (B,)
    mu = Phi_B @ W                                           # (B, K)
    r = T_B - mu
    c = _residual_weight(unhalved_residual)
    n, k = T_B.shape
    loss = float(np.sum(0.5 * _LOG_2PI + 0.5 * np.log(var)[:, None] + c * r * r / var[:, None]) / n)
    if not need_grad:
        return loss, None, None
    g_mu = -2.0 * c * r / var[:, None] / n
    g_var = (0.5 * k / var - c * np.sum(r * r, axis=1) / var ** 2) / n
    S = cho_solve((L, True), np.eye(m))
    PhiB_S = Phi_B @ S
    d_Phi_B = g_mu @ W.T + 2.0 * g_var[:, None] * PhiB_S
    G_W = Phi_B.T @ g_mu
    G_S = Phi_B.T @ (g_var[:, None] * Phi_B) + beta * G_W @ (T_E.T @ Phi_E)
    G_A = -S @ G_S @ S
    d_Phi_E = beta * (T_E @ G_W.T) @ S + beta * Phi_E @ (G_A + G_A.T)
    return loss, d_Phi_E, d_Phi_B


def nll_loss_and_gradient(fm: FeatureMap, E: DemoSet, batch: DemoSet, alpha: float, beta: float,
                          unhalved_residual: bool = False, params: np.ndarray | None = None,
                          need_grad: bool = True):
    """Mean-over-rows, summed-over-heads predictive NLL and its parameter gradient."""
    if len(E) == 0 or len(batch) == 0:
        raise InvalidArgument("conditioning set and batch must be nonempty")
    if E.action_dim != batch.action_dim:
        raise InvalidArgument("conditioning set and batch have different action dimensions")
    params = fm.params if params is None else params
    Phi_E, cache_E = fm._forward(params, E.X)
    Phi_B, cache_B = fm._forward(params, batch.X)
    loss, d_E, d_B = _loss_and_feature_grads(
        Phi_E, E.T, Phi_B, batch.T, alpha, beta, unhalved_residual, need_grad
    )
    if not need_grad:
        return loss, None
    grad = fm.net.backward(params, cache_E, d_E[:, :-1]) + fm.net.backward(params, cache_B, d_B[:, :-1])
    return loss, grad


def nll_loss(fm: FeatureMap, E: DemoSet, batch: DemoSet, alpha: float, beta: float,
             unhalved_residual: bool = False) -> float:
    return nll_loss_and_gradient(fm, E, batch, alpha, beta, unhalved_residual, need_grad=False)[0]


def nll_gradient(fm: FeatureMap, E: DemoSet, batch: DemoSet, alpha: float, beta: float,
                 unhalved_residual: bool = False) -> np.ndarray:
    return nll_loss_and_gradient(fm, E, batch, alpha, beta, unhalved_residual)[1]


@dataclass(frozen=True)
class EmbedTrainConfig:
    latent_dim: int = 16
    hidden: tuple[int, ...] = (32, 32)
    subset_fraction: float = 0.25
    minibatch_size: int = 64
    learning_rate: float = 1e-3
    l2_weight: float = 1e-4
    max_epochs: int = 100
    convergence_window: int = 10
    convergence_tol: float = 1e-3
    alpha: float = 1e-4
    beta: float = 1e2
    seed: int = 0
    unhalved_residual: bool = False
    normalize: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 < self.subset_fraction <= 1.0:
            raise InvalidArgument(f"subset_fraction must lie in (0, 1], got {self.subset_fraction}")
        if self.minibatch_size < 1 or self.latent_dim < 1 or self.convergence_window < 1:
            raise InvalidArgument("minibatch_size, latent_dim and convergence_window must be positive")
        if self.learning_rate < 0 or self.l2_weight < 0 or self.convergence_tol < 0:
            raise InvalidArgument("learning_rate, l2_weight and convergence_tol must be nonnegative")
        if self.max_epochs < 0:
            raise InvalidArgument("max_epochs must be nonnegative")
        if self.seed < 0:
            raise InvalidArgument("seed must be unsigned")
        blr.BlrPrior(self.alpha, self.beta, 1)


def train_embedding(
    demos: DemoSet,
    cfg: EmbedTrainConfig = EmbedTrainConfig(),
    callback: Callable[[int, float], None] | None = None,
) -> FeatureMap:
    """Fit the feature map to ``demos``; ``callback(epoch, mean_nll)`` runs after each epoch."""
    n = len(demos)
    if n < 2:
        raise InvalidArgument("need at least two demonstrations")
    rng = np.random.default_rng(cfg.seed)
    if cfg.normalize:
        mean = demos.X.mean(axis=0)
        std = demos.X.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
    else:
        mean, std = None, None
    fm = init_feature_map(demos.obs_dim, cfg.latent_dim, cfg.hidden, rng, mean, std)
    params = fm.params.copy()
    opt = Adam(params.size, lr=cfg.learning_rate)
    n_subset = max(1, int(math.ceil(cfg.subset_fraction * n)))

    history: list[float] = []
    windowed: list[float] = []
    stalled = 0
    for epoch in range(cfg.max_epochs):
        E = demos.rows(rng.choice(n, size=n_subset, replace=False))
        order = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, cfg.minibatch_size)):
            batch = demos.rows(order[start:start + cfg.minibatch_size])
            loss, grad = nll_loss_and_gradient(
                fm, E, batch, cfg.alpha, cfg.beta, cfg.unhalved_residual, params=params
            )
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NumericalFailure(f"non-finite NLL at epoch {epoch}, minibatch {b}")
            params = opt.step(params, grad + cfg.l2_weight * params)
            if not np.all(np.isfinite(params)):
                raise NumericalFailure(f"non-finite parameters at epoch {epoch}, minibatch {b}")
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if callback is not None:
            callback(epoch, history[-1])
        windowed.append(float(np.mean(history[-cfg.convergence_window:])))
        if len(windowed) > cfg.convergence_window:
            stalled = stalled + 1 if windowed[-2] - windowed[-1] < cfg.convergence_tol else 0
            if stalled >= cfg.convergence_window:
                break
    return fm.with_params(params)


def generate_demos(env_id: str, n: int, noise_std: float = 0.1, seed: int = 0) -> DemoSet:
    """Roll out the scripted expert with Gaussian action noise until ``n`` rows exist.

    Each row pairs an observation with the clipped expert action *before*
    noise; the noisy action is what the environment executes.
    """
    if n < 1:
        raise InvalidArgument("n must be positive")
    if noise_std < 0:
        raise InvalidArgument("noise_std must be nonnegative")
    env = make_env(env_id)
    expert = get_expert(env_id)
    rng = np.random.default_rng(seed)
    X = np.empty((n, env.spec.obs_dim))
    T = np.empty((n, env.spec.action_dim))
    i = 0
    while i < n:
        obs = env.reset(seed=int(rng.integers(2**32)))
        while i < n:
            action = env.spec.clip_action(expert(obs))
            X[i], T[i] = obs, action
            i += 1
            executed = action + noise_std * rng.standard_normal(action.shape) if noise_std > 0 else action
            result = env.step(executed)
            obs = result.observation
            if result.terminal or result.truncated:
                break
    return DemoSet(X, T)
