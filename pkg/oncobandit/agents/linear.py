"""Conjugate Bayesian linear regression with Thompson sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import invgamma

from oncobandit.core import DrugId, RngStream
from oncobandit.errors import PosteriorError

from .base import BanditAgent
from .spec import AgentSpec


def with_intercept(x: np.ndarray) -> np.ndarray:
    """Append the trailing intercept feature."""
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


@dataclass(frozen=True, eq=False)
class NigPosterior:
    """Normal-inverse-gamma posterior of one arm's linear reward model.

    beta | s2 ~ N(mean, s2 * precision^-1), s2 ~ InvGamma(a, b). The
    feature vector includes the trailing intercept.
    """

    precision: np.ndarray
    mean: np.ndarray
    a: float
    b: float
    count: int
    ridge: float
    a0: float
    b0: float

    @classmethod
    def prior(cls, dim: int, ridge: float, a0: float, b0: float) -> NigPosterior:
        """Prior over ``dim`` coefficients (intercept included)."""
        return cls(ridge * np.eye(dim), np.zeros(dim), a0, b0, 0, ridge, a0, b0)

    @classmethod
    def from_batch(
        cls, features: np.ndarray, targets: np.ndarray, ridge: float, a0: float, b0: float
    ) -> NigPosterior:
        """Closed-form posterior after all observations at once."""
        features = np.asarray(features, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        dim = features.shape[1]
        precision = ridge * np.eye(dim) + features.T @ features
        mean = np.linalg.solve(precision, features.T @ targets)
        b = b0 + 0.5 * (targets @ targets - mean @ precision @ mean)
        return cls(precision, mean, a0 + 0.5 * len(targets), b, len(targets), ridge, a0, b0)

    @property
    def dim(self) -> int:
        """Number of coefficients."""
        return self.mean.shape[0]


def nig_update(p: NigPosterior, x: np.ndarray, y: float) -> NigPosterior:
    """Fold one observation into the posterior.

    ``x`` already carries the trailing intercept. The recursion reproduces
    the batch posterior over everything seen, in any order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.dim,):
        raise PosteriorError(f"feature shape {x.shape} does not match posterior dim {p.dim}")
    if not (np.all(np.isfinite(x)) and np.isfinite(y)):
        raise PosteriorError("non-finite observation")
    precision = p.precision + np.outer(x, x)
    mean = np.linalg.solve(precision, p.precision @ p.mean + x * y)
    b = p.b + 0.5 * (y * y + p.mean @ p.precision @ p.mean - mean @ precision @ mean)
    return NigPosterior(precision, mean, p.a + 0.5, b, p.count + 1, p.ridge, p.a0, p.b0)


def nig_sample(p: NigPosterior, rng: RngStream) -> np.ndarray:
    """Draw one coefficient vector from the posterior."""
    try:
        lower = np.linalg.cholesky(p.precision)
    except np.linalg.LinAlgError as err:
        raise PosteriorError("precision matrix is not positive definite") from err
    variance = invgamma.rvs(p.a, scale=p.b, random_state=rng)
    z = rng.standard_normal(p.dim)
    # L^-T z has covariance precision^-1
    return p.mean + np.sqrt(variance) * solve_triangular(lower, z, trans="T", lower=True)


def nig_thompson_act(posteriors: list[NigPosterior], x: np.ndarray, rng: RngStream) -> DrugId:
    """Thompson step: argmax of sampled linear predictions; ties to lowest index."""
    features = with_intercept(x)
    scores = [nig_sample(p, rng) @ features for p in posteriors]
    return DrugId(int(np.argmax(scores)))


class LinearThompsonAgent(BanditAgent):
    """Exact Bayesian linear regression per arm."""

    def __init__(self, spec: AgentSpec, num_actions: int, context_dim: int, seed: int) -> None:
        """Initialize one prior per arm."""
        super().__init__(spec, num_actions, context_dim, seed)
        self.posteriors = [
            NigPosterior.prior(context_dim + 1, spec["ridge"], spec["a0"], spec["b0"])
            for _ in range(num_actions)
        ]

    def policy(self, context: np.ndarray) -> DrugId:
        """Sample every arm's posterior and act greedily on the draw."""
        return nig_thompson_act(self.posteriors, context, self.streams.explore)

    def observe(self, context: np.ndarray, action: DrugId, reward: float) -> None:
        """Update the played arm's posterior."""
        self.posteriors[action] = nig_update(
            self.posteriors[action], with_intercept(context), reward
        )
