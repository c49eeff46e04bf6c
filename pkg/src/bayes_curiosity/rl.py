"""REINFORCE with a diagonal Gaussian policy, plus behavior-cloning pre-training.

The learner sits behind a minimal algorithm interface (``policy`` attribute,
``update(batch) -> diagnostics``) so other policy-gradient methods can be
dropped into the harness without touching the environments or the
curiosity code.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .curiosity import CuriosityState, curiosity_rewards
from .embed import DemoSet
from .envs import ClassicControlEnv, EnvSpec
from .errors import InvalidArgument, NumericalFailure
from .nn import Adam, MLPSpec
from .paramfile import read_param_file, write_param_file

__all__ = [
    "LOG_STD_MIN",
    "LOG_STD_MAX",
    "GaussianPolicy",
    "Trajectory",
    "ReinforceConfig",
    "BCConfig",
    "Algorithm",
    "Reinforce",
    "sample_action",
    "log_prob",
    "rollout",
    "with_curiosity",
    "discounted_returns",
    "advantages",
    "surrogate_objective",
    "policy_gradient",
    "reinforce_update",
    "pretrain_bc",
]

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianPolicy:
    """``a ~ N(mean_net(scaled obs), diag(exp(log_std))^2)``.

    Observations are affinely scaled to roughly [-1, 1] using the
    environment's nominal ranges before entering the network.
    """

    net: MLPSpec
    params: np.ndarray
    log_std: np.ndarray
    obs_center: np.ndarray
    obs_scale: np.ndarray

    def __post_init__(self) -> None:
        for name in ("params", "log_std", "obs_center", "obs_scale"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.params.shape != (self.net.n_params,):
            raise InvalidArgument(f"expected {self.net.n_params} parameters, got {self.params.shape}")
        if self.log_std.shape != (self.net.output_dim,):
            raise InvalidArgument("log_std must have one entry per action dimension")
        if not (np.all(np.isfinite(self.params)) and np.all(np.isfinite(self.log_std))):
            raise NumericalFailure("policy parameters are not finite")

    @classmethod
    def init(cls, spec: EnvSpec, rng: np.random.Generator, hidden: Sequence[int] = (32, 32),
             log_std: float = 0.0) -> "GaussianPolicy":
        net = MLPSpec((spec.obs_dim, *hidden, spec.action_dim), output_activation="linear")
        params = net.init(rng)
        low = spec.obs_low if spec.obs_low is not None else -np.ones(spec.obs_dim)
        high = spec.obs_high if spec.obs_high is not None else np.ones(spec.obs_dim)
        return cls(net, params, np.full(spec.action_dim, float(log_std)),
                   0.5 * (high + low), 0.5 * (high - low))

    @property
    def action_dim(self) -> int:
        return self.net.output_dim

    @property
    def n_params(self) -> int:
        return self.params.size + self.log_std.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params, self.log_std])

    def from_flat(self, theta: np.ndarray) -> "GaussianPolicy":
        n = self.params.size
        return replace(self, params=theta[:n], log_std=theta[n:])

    def effective_log_std(self) -> np.ndarray:
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def scale(self, X: np.ndarray) -> np.ndarray:
        return (X - self.obs_center) / self.obs_scale

    def mean(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.net(self.params, self.scale(X))

    def save(self, path) -> None:
        header = {"sizes": list(self.net.sizes), "hidden_activation": "tanh",
                  "output_activation": self.net.output_activation}
        write_param_file(path, "policy", header, {
            "params": self.params, "log_std": self.log_std,
            "obs_center": self.obs_center, "obs_scale": self.obs_scale,
        })

    @classmethod
    def load(cls, path) -> "GaussianPolicy":
        header, arrays = read_param_file(path, "policy")
        net = MLPSpec(tuple(header["sizes"]), header["output_activation"])
        return cls(net, arrays["params"], arrays["log_std"], arrays["obs_center"], arrays["obs_scale"])


def _gaussian_log_prob(actions: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (actions - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def log_prob(pol: GaussianPolicy, X, actions) -> np.ndarray:
    """Log density of (unclipped) ``actions`` at observations ``X``."""
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    return _gaussian_log_prob(actions, pol.mean(X), pol.effective_log_std())


def sample_action(pol: GaussianPolicy, obs, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    mu = pol.mean(obs)[0]
    log_std = pol.effective_log_std()
    action = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
    return action, float(_gaussian_log_prob(action[None, :], mu[None, :], log_std)[0])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One episode.  Row ``t`` holds the observation acted on, the unclipped
    action, and the rewards received for it; curiosity at row ``t`` is
    evaluated on the observation that followed (``next_observations[t]``)."""

    observations: np.ndarray
    actions: np.ndarray
    extrinsic: np.ndarray
    log_probs: np.ndarray
    final_observation: np.ndarray
    terminal: bool = False
    success: bool = False
    curiosity: np.ndarray = field(default=None)  # type: ignore[assignment]
    combined: np.ndarray = field(default=None)  # type: ignore[assignment]
    eta: float = 0.0

    def __post_init__(self) -> None:
        n = len(self.extrinsic)
        if self.curiosity is None:
            object.__setattr__(self, "curiosity", np.zeros(n))
        if self.combined is None:
            object.__setattr__(self, "combined", self.extrinsic + self.eta * self.curiosity)

    def __len__(self) -> int:
        return len(self.extrinsic)

    @property
    def next_observations(self) -> np.ndarray:
        return np.vstack([self.observations[1:], self.final_observation[None, :]])

    @property
    def all_observations(self) -> np.ndarray:
        """o_0 .. o_T, including the terminal/last observation."""
        return np.vstack([self.observations, self.final_observation[None, :]])

    @property
    def extrinsic_return(self) -> float:
        return float(np.sum(self.extrinsic))

    def write_csv(self, writer, episode: int | None = None, header: bool = False) -> None:
        """Rows ``(t, obs..., action..., e_t, c_t, r_t)``, optionally prefixed by the episode index."""
        d, k = self.observations.shape[1], self.actions.shape[1]
        prefix = [] if episode is None else ["episode"]
        if header:
            writer.writerow(prefix + ["t"] + [f"obs_{i}" for i in range(d)]
                            + [f"action_{j}" for j in range(k)] + ["e_t", "c_t", "r_t"])
        ep = [] if episode is None else [episode]
        for t in range(len(self)):
            writer.writerow(ep + [t] + [repr(float(v)) for v in self.observations[t]]
                            + [repr(float(v)) for v in self.actions[t]]
                            + [repr(float(self.extrinsic[t])), repr(float(self.curiosity[t])),
                               repr(float(self.combined[t]))])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write_csv(csv.writer(fh), header=True)


def rollout(env: ClassicControlEnv, pol: GaussianPolicy, rng: np.random.Generator,
            seed: int | None = None) -> Trajectory:
    """Run one episode to termination or the horizon.  Curiosity is not applied here."""
    layers = pol.net.unpack(pol.params)
    last = len(layers) - 1
    std = np.exp(pol.effective_log_std())
    log_std = pol.effective_log_std()
    obs = env.reset(seed=seed)
    observations, actions, rewards, logps = [], [], [], []
    terminal = success = False
    while True:
        h = (obs - pol.obs_center) / pol.obs_scale
        for i, (W, b) in enumerate(layers):
            h = h @ W + b
            if i < last:
                h = np.tanh(h)
        noise = rng.standard_normal(h.shape)
        action = h + std * noise
        observations.append(obs)
        actions.append(action)
        logps.append(float(np.sum(-0.5 * noise * noise - log_std - _HALF_LOG_2PI)))
        result = env.step(action)
        rewards.append(result.extrinsic_reward)
        success = success or result.success
        obs = result.observation
        if result.terminal or result.truncated:
            terminal = result.terminal
            break
    return Trajectory(
        observations=np.array(observations),
        actions=np.array(actions),
        extrinsic=np.array(rewards),
        log_probs=np.array(logps),
        final_observation=obs,
        terminal=terminal,
        success=success,
    )


def with_curiosity(traj: Trajectory, cs: CuriosityState) -> Trajectory:
    """Attach curiosity rewards computed against ``cs`` (the pre-episode posterior)."""
    c = curiosity_rewards(cs, traj.next_observations)
    return replace(traj, curiosity=c, combined=traj.extrinsic + cs.eta * c, eta=cs.eta)


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """Returns-to-go ``G_t = sum_k gamma^(k-t) r_k``."""
    if not 0.0 < gamma <= 1.0:
        raise InvalidArgument(f"gamma must lie in (0, 1], got {gamma}")
    if isinstance(rewards, Trajectory):
        rewards = rewards.combined
    r = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


@dataclass(frozen=True)
class ReinforceConfig:
    gamma: float = 0.99
    learning_rate: float = 1e-3
    batch_episodes: int = 10
    standardize: bool = True
    log_std_init: float = 0.0
    hidden: tuple[int, ...] = (32, 32)

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 < self.gamma < 1.0:
            raise InvalidArgument(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.batch_episodes < 1 or self.learning_rate < 0:
            raise InvalidArgument("batch_episodes must be positive and learning_rate nonnegative")


def advantages(batch: Sequence[Trajectory], gamma: float, standardize: bool = True) -> np.ndarray:
    """Returns-to-go minus the batch-mean baseline, optionally scaled to unit variance."""
    G = np.concatenate([discounted_returns(traj.combined, gamma) for traj in batch])
    adv = G - G.mean()
    if standardize:
        adv = adv / (adv.std() + 1e-8)
    return adv


def _stack(batch: Sequence[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    return (np.concatenate([t.observations for t in batch]),
            np.concatenate([t.actions for t in batch]))


def surrogate_objective(pol: GaussianPolicy, X: np.ndarray, A: np.ndarray, adv: np.ndarray) -> float:
    """``mean_t log pi(a_t | o_t) * adv_t`` with ``adv`` held fixed."""
    return float(np.mean(log_prob(pol, X, A) * adv))


def policy_gradient(pol: GaussianPolicy, batch: Sequence[Trajectory], cfg: ReinforceConfig):
    """Gradient of the surrogate w.r.t. ``pol.flat()``; returns ``(grad, adv)``."""
    if len(batch) == 0:
        raise InvalidArgument("empty trajectory batch")
    X, A = _stack(batch)
    adv = advantages(batch, cfg.gamma, cfg.standardize)
    return _surrogate_grad(pol, X, A, adv), adv


def _surrogate_grad(pol: GaussianPolicy, X, A, adv) -> np.ndarray:
    n = X.shape[0]
    mu, cache = pol.net.forward(pol.params, pol.scale(X))
    log_std = pol.effective_log_std()
    inv_var = np.exp(-2.0 * log_std)
    diff = A - mu
    w = adv[:, None] / n
    g_mu = w * diff * inv_var
    g_log_std = np.sum(w * (diff * diff * inv_var - 1.0), axis=0)
    inside = (pol.log_std >= LOG_STD_MIN) & (pol.log_std <= LOG_STD_MAX)
    g_log_std = np.where(inside, g_log_std, 0.0)
    return np.concatenate([pol.net.backward(pol.params, cache, g_mu), g_log_std])


def reinforce_update(pol: GaussianPolicy, batch: Sequence[Trajectory], cfg: ReinforceConfig,
                     optimizer: Adam | None = None) -> tuple[GaussianPolicy, dict]:
    """One Adam ascent step on the REINFORCE surrogate.

    Pass the same ``optimizer`` across calls to keep moment estimates; a
    fresh one is created otherwise.
    """
    grad, adv = policy_gradient(pol, batch, cfg)
    grad_norm = float(np.linalg.norm(grad))
    if not np.isfinite(grad_norm):
        raise NumericalFailure(
            f"non-finite policy gradient (batch of {len(batch)}, "
            f"mean return {np.mean([t.extrinsic_return for t in batch])})"
        )
    if optimizer is None:
        optimizer = Adam(pol.n_params, lr=cfg.learning_rate)
    theta = optimizer.step(pol.flat(), -grad)
    diagnostics = {
        "mean_extrinsic_return": float(np.mean([t.extrinsic_return for t in batch])),
        "mean_curiosity": float(np.mean(np.concatenate([t.curiosity for t in batch]))),
        "grad_norm": grad_norm,
        "n_steps": int(adv.size),
    }
    return pol.from_flat(theta), diagnostics


class Algorithm(Protocol):
    policy: GaussianPolicy

    def update(self, batch: Sequence[Trajectory]) -> dict: ...


class Reinforce:
    """Stateful wrapper carrying the optimizer across updates."""

    def __init__(self, policy: GaussianPolicy, cfg: ReinforceConfig = ReinforceConfig()):
        self.policy = policy
        self.cfg = cfg
        self.optimizer = Adam(policy.n_params, lr=cfg.learning_rate)

    def update(self, batch: Sequence[Trajectory]) -> dict:
        self.policy, diagnostics = reinforce_update(self.policy, batch, self.cfg, self.optimizer)
        return diagnostics


ALGORITHMS = {"reinforce": Reinforce}


@dataclass(frozen=True)
class BCConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    minibatch_size: int = 64
    seed: int = 0


def pretrain_bc(pol: GaussianPolicy, demos: DemoSet, cfg: BCConfig = BCConfig()) -> GaussianPolicy:
    """Regress the policy mean onto demonstrated actions (MSE, Adam); ``log_std`` is kept."""
    n = len(demos)
    if n == 0:
        raise InvalidArgument("no demonstrations")
    if demos.obs_dim != pol.net.input_dim or demos.action_dim != pol.action_dim:
        raise InvalidArgument("demonstration shapes do not match the policy")
    rng = np.random.default_rng(cfg.seed)
    params = pol.params.copy()
    opt = Adam(params.size, lr=cfg.learning_rate)
    Xs = pol.scale(demos.X)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            mu, cache = pol.net.forward(params, Xs[idx])
            g = 2.0 * (mu - demos.T[idx]) / mu.size
            params = opt.step(params, pol.net.backward(params, cache, g))
    return replace(pol, params=params)
