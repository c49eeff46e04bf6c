"""Intrinsic reward from BLR predictive variance in a frozen latent space.

``c(o) = log(1/beta + phi(o)^T P^-1 phi(o))`` where ``P`` is the precision of
a posterior that has absorbed every observation of earlier episodes.  The
reward is bounded below by ``-log(beta)``.  The posterior is updated once per
episode, so rewards inside an episode are all measured against the state
at the start of that episode.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import blr
from .embed import FeatureMap
from .errors import InvalidArgument

__all__ = [
    "CuriosityState",
    "new_curiosity",
    "curiosity_reward",
    "curiosity_rewards",
    "combined_reward",
    "absorb_episode",
]


@dataclass(frozen=True, eq=False)
class CuriosityState:
    fm: FeatureMap
    post: blr.BlrPosterior
    eta: float = 1.0

    def __post_init__(self) -> None:
        if self.post.dim != self.fm.dim:
            raise InvalidArgument(
                f"posterior dimension {self.post.dim} != feature dimension {self.fm.dim}"
            )
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise InvalidArgument(f"eta must be nonnegative, got {self.eta}")

    @property
    def beta(self) -> float:
        return self.post.beta

    @property
    def lower_bound(self) -> float:
        return -math.log(self.beta)

    def save(self, directory) -> None:
        """Write feature map, posterior record and a manifest into ``directory``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.fm.save(d / "featuremap.bin")
        (d / "posterior.bin").write_bytes(self.post.to_bytes())
        manifest = {
            "format": "bayes-curiosity-checkpoint",
            "version": 1,
            "eta": self.eta,
            "beta": self.beta,
            "feature_map": "featuremap.bin",
            "posterior": "posterior.bin",
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "CuriosityState":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        fm = FeatureMap.load(d / manifest["feature_map"])
        post = blr.BlrPosterior.from_bytes((d / manifest["posterior"]).read_bytes())
        if post.beta != manifest["beta"]:
            raise InvalidArgument("manifest beta disagrees with posterior record")
        return cls(fm, post, float(manifest["eta"]))


def new_curiosity(fm: FeatureMap, alpha: float = 1e-4, beta: float = 1e2, eta: float = 1.0) -> CuriosityState:
    """Curiosity with a freshly reset BLR over ``fm``'s feature space."""
    return CuriosityState(fm, blr.make_prior(alpha, beta, fm.dim), eta)


def curiosity_rewards(cs: CuriosityState, observations) -> np.ndarray:
    """Vectorized curiosity reward for each row of ``observations``."""
    return np.log(blr.predictive_variance(cs.post, cs.fm.features(observations)))


def curiosity_reward(cs: CuriosityState, obs) -> float:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise InvalidArgument("curiosity_reward expects a single observation")
    return float(curiosity_rewards(cs, obs[None, :])[0])


def combined_reward(cs: CuriosityState, extrinsic: float, obs) -> float:
    return extrinsic + cs.eta * curiosity_reward(cs, obs)


def absorb_episode(cs: CuriosityState, observations) -> CuriosityState:
    """Variance-only BLR update with every observation of one episode."""
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] == 0:
        raise InvalidArgument("absorb_episode needs a nonempty (n, obs_dim) sequence")
    post = blr.update_variance_only(cs.post, cs.fm.features(obs))
    return CuriosityState(cs.fm, post, cs.eta)
