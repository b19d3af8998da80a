"""Bayes by Backprop: mean-field Gaussian weights trained on the ELBO."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from oncobandit.core import DrugId, RngStream

from .mlp import (
    MlpParams,
    ReplayBuffer,
    TrainSchedule,
    TrainState,
    mlp_backward,
    mlp_forward,
    rms_step,
)
from .neural import NeuralGreedyAgent
from .spec import AgentSpec


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)), stable for large |x|."""
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Derivative of softplus."""
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(eq=False)
class VariationalParams:
    """Per-weight means and softplus-parameterized standard deviations."""

    means: MlpParams
    rhos: MlpParams

    @classmethod
    def around(cls, means: MlpParams, rho: float) -> VariationalParams:
        """Variational family centered on ``means`` with one initial rho."""
        return cls(means, means.map(lambda a: np.full_like(a, rho)))

    def stds(self) -> MlpParams:
        """Standard deviations softplus(rho)."""
        return self.rhos.map(softplus)

    def arrays(self) -> list[np.ndarray]:
        """Means then rhos, for the optimizer."""
        return [*self.means.arrays(), *self.rhos.arrays()]

    def sample(self, rng: RngStream) -> tuple[MlpParams, MlpParams]:
        """Reparameterized draw; returns (weights, standard-normal noise)."""
        noise = self.means.map(lambda a: rng.standard_normal(a.shape))
        weights = self.means.map(lambda m, s, e: m + s * e, self.stds(), noise)
        return weights, noise


def gaussian_kl(means: list[np.ndarray], stds: list[np.ndarray]) -> float:
    """KL(N(means, stds^2) || N(0, 1)) summed over every weight."""
    return float(
        sum(
            np.sum(-np.log(s) + 0.5 * (s * s + m * m) - 0.5)
            for m, s in zip(means, stds, strict=True)
        )
    )


def negative_elbo(
    vparams: VariationalParams,
    noise: MlpParams,
    contexts: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    noise_sigma: float,
    num_data: int,
) -> tuple[float, VariationalParams]:
    """Per-datapoint negative ELBO for one weight sample and its gradient.

    loss = mean_i (f_w(x_i)[a_i] - y_i)^2 / (2 sigma^2) + KL(q || p) / num_data,
    with w = mean + softplus(rho) * noise. Returns gradients with respect to
    the means and rhos.
    """
    stds = vparams.stds()
    weights = vparams.means.map(lambda m, s, e: m + s * e, stds, noise)
    cache = mlp_forward(weights, contexts)
    rows = np.arange(len(actions))
    errors = cache.outputs[rows, actions] - rewards
    variance = noise_sigma * noise_sigma
    grad_outputs = np.zeros_like(cache.outputs)
    grad_outputs[rows, actions] = errors / (variance * len(actions))
    grad_w, _ = mlp_backward(weights, cache, grad_outputs)
    data_term = float(np.sum(errors**2) / (2.0 * variance * len(actions)))
    kl = gaussian_kl(vparams.means.arrays(), stds.arrays())

    grad_means = grad_w.map(lambda g, m: g + m / num_data, vparams.means)
    grad_rhos = grad_w.map(
        lambda g, e, s, r: (g * e + (s - 1.0 / s) / num_data) * sigmoid(r),
        noise,
        stds,
        vparams.rhos,
    )
    return data_term + kl / num_data, VariationalParams(grad_means, grad_rhos)


def bbb_train_step(
    vparams: VariationalParams,
    buffer: ReplayBuffer,
    noise_sigma: float,
    rng: RngStream,
    *,
    batch: int,
    schedule: TrainSchedule,
    state: TrainState,
) -> float:
    """One reparameterized gradient step on the negative ELBO, in place.

    Returns the loss before the step.
    """
    rows = buffer.sample(batch, rng)
    noise = vparams.means.map(lambda a: rng.standard_normal(a.shape))
    loss, grads = negative_elbo(
        vparams,
        noise,
        buffer.contexts[rows],
        buffer.actions[rows],
        buffer.rewards[rows],
        noise_sigma,
        len(buffer),
    )
    rms_step(vparams.arrays(), grads.arrays(), schedule, state)
    return loss


def bbb_act(vparams: VariationalParams, x: np.ndarray, rng: RngStream) -> DrugId:
    """Greedy action of one sampled weight configuration."""
    weights, _ = vparams.sample(rng)
    return DrugId(int(np.argmax(mlp_forward(weights, x).outputs)))


class BayesByBackpropAgent(NeuralGreedyAgent):
    """Thompson sampling from a mean-field variational posterior."""

    def __init__(self, spec: AgentSpec, num_actions: int, context_dim: int, seed: int) -> None:
        """Center the variational family on the initialized network."""
        super().__init__(spec, num_actions, context_dim, seed)
        self.vparams = VariationalParams.around(self.params, spec["init_rho"])

    def policy(self, context: np.ndarray) -> DrugId:
        """Act on one posterior sample."""
        return bbb_act(self.vparams, context, self.streams.explore)

    def train(self) -> None:
        """Run one training period of ELBO steps."""
        if self.schedule.resets:
            self.train_state.clock = 0
        for _ in range(self.spec["training_steps"]):
            loss = bbb_train_step(
                self.vparams,
                self.buffer,
                self.spec["noise_sigma"],
                self.streams.train,
                batch=self.spec["batch_size"],
                schedule=self.schedule,
                state=self.train_state,
            )
        self.params = self.vparams.means
        self.logger.debug("t=%s negative ELBO %.6g", self.t, loss)
