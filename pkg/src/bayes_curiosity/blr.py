"""Exact Bayesian linear regression over a fixed feature space.

The posterior is stored in information form: a precision matrix together
with its lower Cholesky factor, plus the posterior mean.  The prior is
``w ~ N(0, alpha^-1 I)`` and observations carry noise precision ``beta``.

Every operation returns a new :class:`BlrPosterior`; states are never
mutated, so they can be shared freely between threads.

Binary record format (little-endian), used by :meth:`BlrPosterior.to_bytes`::

    offset  type          content
    0       8 bytes       magic b"BLRPOST1"
    8       uint32        format version (1)
    12      uint32        dimension M
    16      uint64        n_obs
    24      float64       beta
    32      float64[M]    mean
    ...     float64[T]    precision lower triangle, row-major, T = M(M+1)/2
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import InvalidArgument, NumericalFailure

__all__ = [
    "BlrPrior",
    "BlrPosterior",
    "PredictivePosterior",
    "make_prior",
    "update",
    "update_variance_only",
    "predict",
    "predictive_variance",
    "predictive_mean",
]

_MAGIC = b"BLRPOST1"
_HEADER = struct.Struct("<8sIIQd")
_JITTER_SCALE = 1e-10


@dataclass(frozen=True)
class BlrPrior:
    """Isotropic Gaussian prior ``N(0, alpha^-1 I)`` with noise precision ``beta``."""

    alpha: float
    beta: float
    dim: int

    def __post_init__(self) -> None:
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidArgument(f"alpha must be positive, got {self.alpha}")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise InvalidArgument(f"beta must be positive, got {self.beta}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidArgument(f"dim must be a positive integer, got {self.dim}")

    def posterior(self) -> "BlrPosterior":
        return make_prior(self.alpha, self.beta, self.dim)


@dataclass(frozen=True)
class PredictivePosterior:
    mean: float
    variance: float


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _cholesky(precision: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor ``precision``; one jittered retry before giving up.

    Returns the (possibly jittered) precision and its lower factor.
    """
    try:
        return precision, np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        pass
    m = precision.shape[0]
    jitter = _JITTER_SCALE * np.trace(precision) / m
    jittered = precision + jitter * np.eye(m)
    try:
        return jittered, np.linalg.cholesky(jittered)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(
            f"precision matrix not positive definite after jitter {jitter:.3e}"
        ) from exc


@dataclass(frozen=True, eq=False)
class BlrPosterior:
    """Gaussian belief ``N(mean, precision^-1)`` over linear weights."""

    mean: np.ndarray
    precision: np.ndarray
    beta: float
    n_obs: int = 0
    chol: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        mean = _freeze(self.mean)
        precision = np.asarray(self.precision, dtype=np.float64)
        if precision.ndim != 2 or precision.shape != (mean.size, mean.size):
            raise InvalidArgument(
                f"precision shape {precision.shape} does not match mean length {mean.size}"
            )
        if self.chol is None:
            precision, chol = _cholesky(0.5 * (precision + precision.T))
        else:
            chol = self.chol
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", _freeze(precision))
        object.__setattr__(self, "chol", _freeze(chol))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "n_obs", int(self.n_obs))

    @property
    def dim(self) -> int:
        return self.mean.size

    def covariance(self) -> np.ndarray:
        """Dense weight covariance. Diagnostic only; predictions never form it."""
        return cho_solve((self.chol, True), np.eye(self.dim))

    def to_bytes(self) -> bytes:
        rows, cols = np.tril_indices(self.dim)
        head = _HEADER.pack(_MAGIC, 1, self.dim, self.n_obs, self.beta)
        body = np.concatenate([self.mean, self.precision[rows, cols]]).astype("<f8")
        return head + body.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "BlrPosterior":
        if len(data) < _HEADER.size:
            raise InvalidArgument("posterior record truncated")
        magic, version, dim, n_obs, beta = _HEADER.unpack_from(data)
        if magic != _MAGIC or version != 1:
            raise InvalidArgument(f"not a version-1 posterior record: {magic!r} v{version}")
        n_tri = dim * (dim + 1) // 2
        body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        if body.size != dim + n_tri:
            raise InvalidArgument(
                f"posterior record has {body.size} values, expected {dim + n_tri}"
            )
        precision = np.zeros((dim, dim))
        rows, cols = np.tril_indices(dim)
        precision[rows, cols] = body[dim:]
        precision[cols, rows] = body[dim:]
        return cls(mean=body[:dim].astype(np.float64), precision=precision, beta=beta, n_obs=n_obs)


def make_prior(alpha: float, beta: float, dim: int) -> BlrPosterior:
    """Posterior state with no data absorbed: mean 0, precision ``alpha * I``."""
    prior = BlrPrior(alpha, beta, dim)
    dim = int(prior.dim)
    return BlrPosterior(
        mean=np.zeros(dim),
        precision=prior.alpha * np.eye(dim),
        beta=prior.beta,
        n_obs=0,
        chol=np.sqrt(prior.alpha) * np.eye(dim),
    )


def _gram(beta: float, Phi: np.ndarray) -> np.ndarray:
    g = Phi.T @ Phi
    return beta * 0.5 * (g + g.T)


def _check_design(post: BlrPosterior, Phi) -> np.ndarray:
    Phi = np.asarray(Phi, dtype=np.float64)
    if Phi.ndim == 1 and Phi.size == 0:
        Phi = Phi.reshape(0, post.dim)
    if Phi.ndim != 2 or Phi.shape[1] != post.dim:
        raise InvalidArgument(f"feature matrix shape {Phi.shape} incompatible with dim {post.dim}")
    return Phi


def update(post: BlrPosterior, Phi, targets) -> BlrPosterior:
    """Absorb rows ``Phi`` with scalar ``targets`` into the posterior.

    ``precision' = precision + beta Phi^T Phi`` and the mean solves
    ``precision' mean' = precision mean + beta Phi^T t``.
    """
    Phi = _check_design(post, Phi)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if t.size != Phi.shape[0]:
        raise InvalidArgument(f"{t.size} targets for {Phi.shape[0]} feature rows")
    if Phi.shape[0] == 0:
        return post
    precision, chol = _cholesky(post.precision + _gram(post.beta, Phi))
    rhs = post.precision @ post.mean + post.beta * (Phi.T @ t)
    mean = cho_solve((chol, True), rhs)
    return BlrPosterior(mean, precision, post.beta, post.n_obs + Phi.shape[0], chol)


def update_variance_only(post: BlrPosterior, Phi) -> BlrPosterior:
    """Absorb rows ``Phi`` into the precision only; the mean is carried over unchanged."""
    Phi = _check_design(post, Phi)
    if Phi.shape[0] == 0:
        return post
    precision, chol = _cholesky(post.precision + _gram(post.beta, Phi))
    return BlrPosterior(post.mean, precision, post.beta, post.n_obs + Phi.shape[0], chol)


def predictive_variance(post: BlrPosterior, Phi) -> np.ndarray:
    """Predictive variance ``1/beta + phi^T precision^-1 phi`` for each row of ``Phi``."""
    Phi = _check_design(post, np.atleast_2d(Phi))
    z = solve_triangular(post.chol, Phi.T, lower=True, check_finite=False)
    return 1.0 / post.beta + np.einsum("ij,ij->j", z, z)


def predictive_mean(post: BlrPosterior, Phi) -> np.ndarray:
    Phi = _check_design(post, np.atleast_2d(Phi))
    return Phi @ post.mean


def predict(post: BlrPosterior, phi_x) -> PredictivePosterior:
    """Predictive distribution of the target at a single feature vector."""
    phi_x = np.asarray(phi_x, dtype=np.float64)
    if phi_x.ndim != 1 or phi_x.size != post.dim:
        raise InvalidArgument(f"feature vector shape {phi_x.shape} incompatible with dim {post.dim}")
    return PredictivePosterior(
        mean=float(phi_x @ post.mean),
        variance=float(predictive_variance(post, phi_x[None, :])[0]),
    )
