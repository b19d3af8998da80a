"""Neural posterior approximations: greedy, dropout, parameter noise,
bootstrapped ensembles and neural-linear."""

from __future__ import annotations

import logging

import numpy as np

from oncobandit.const import PARAM_NOISE_ADAPT_FACTOR
from oncobandit.core import DrugId, RngStream

from .base import BanditAgent
from .linear import NigPosterior, nig_thompson_act, nig_update, with_intercept
from .mlp import (
    MlpParams,
    ReplayBuffer,
    TrainState,
    dropout_masks,
    greedy_act,
    mlp_forward,
    mlp_train,
)
from .spec import AgentSpec

_LOGGER = logging.getLogger(__name__)


class NeuralGreedyAgent(BanditAgent):
    """Acts greedily on a network retrained every training period.

    Also serves the RMS2 and RMS3 families, which differ only in schedule.
    """

    keep = 1.0

    def __init__(self, spec: AgentSpec, num_actions: int, context_dim: int, seed: int) -> None:
        """Initialize the network, optimizer state and buffer."""
        super().__init__(spec, num_actions, context_dim, seed)
        self.schedule = spec.schedule()
        self.widths = [context_dim, *spec.hidden_widths(), num_actions]
        self.params = MlpParams.initialize(self.widths, self.streams.init, spec["init_scale"])
        self.train_state = TrainState()
        self.buffer = self.make_buffer()

    def make_buffer(self) -> ReplayBuffer:
        """Create the replay buffer."""
        return ReplayBuffer(self.context_dim, self.num_actions)

    def policy(self, context: np.ndarray) -> DrugId:
        """Best predicted arm."""
        return greedy_act(self.params, context)

    def observe(self, context: np.ndarray, action: DrugId, reward: float) -> None:
        """Store the outcome and retrain at period boundaries."""
        self.buffer.add(context, action, reward)
        if self.due_for_training():
            self.train()

    def due_for_training(self) -> bool:
        """Whether this decision closes a training period after the prologue."""
        seen = self.t + 1
        return seen >= self.prologue and seen % self.spec["training_freq"] == 0

    def train(self) -> None:
        """Run one training period."""
        self.params = mlp_train(
            self.params,
            self.buffer,
            self.schedule,
            steps=self.spec["training_steps"],
            batch=self.spec["batch_size"],
            rng=self.streams.train,
            state=self.train_state,
            keep=self.keep,
        )
        self.logger.debug(
            "t=%s trained on %s rows, loss %.6g", self.t, len(self.buffer), self.train_state.last_loss
        )


def dropout_act(params: MlpParams, x: np.ndarray, keep: float, rng: RngStream) -> DrugId:
    """Greedy action under one freshly sampled dropout mask."""
    if not 0.0 < keep <= 1.0:
        raise ValueError(f"keep must be in (0, 1], got {keep}")
    outputs = mlp_forward(params, x, dropout_masks(params, keep, rng)).outputs
    return DrugId(int(np.argmax(outputs)))


class DropoutAgent(NeuralGreedyAgent):
    """Thompson sampling through dropout at decision and training time."""

    def __init__(self, spec: AgentSpec, num_actions: int, context_dim: int, seed: int) -> None:
        """Initialize and read the keep probability."""
        super().__init__(spec, num_actions, context_dim, seed)
        self.keep = spec["keep"]

    def policy(self, context: np.ndarray) -> DrugId:
        """Greedy action of a dropped-out network."""
        return dropout_act(self.params, context, self.keep, self.streams.explore)


def param_noise_act(
    params: MlpParams, x: np.ndarray, sigma: float, epsilon: float, rng: RngStream
) -> tuple[DrugId, float]:
    """Act on a perturbed copy of the network and adapt the noise scale.

    Sigma shrinks by 1% when the perturbed greedy action differs from the
    clean one and grows by 1% otherwise. ``epsilon`` is the prediction
    distance (root mean square) above which a perturbation is logged as
    large; it does not steer the adaptation.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    clean = mlp_forward(params, x).outputs
    noisy_params = params.map(lambda a: a + sigma * rng.standard_normal(a.shape))
    noisy = mlp_forward(noisy_params, x).outputs
    action = DrugId(int(np.argmax(noisy)))
    gap = float(np.sqrt(np.mean((noisy - clean) ** 2)))
    if gap > epsilon:
        _LOGGER.debug("Perturbation moved predictions by %.4g at sigma %.4g", gap, sigma)
    if action != int(np.argmax(clean)):
        return action, sigma / PARAM_NOISE_ADAPT_FACTOR
    return action, sigma * PARAM_NOISE_ADAPT_FACTOR


class ParamNoiseAgent(NeuralGreedyAgent):
    """Thompson sampling through Gaussian weight perturbations."""

    def __init__(self, spec: AgentSpec, num_actions: int, context_dim: int, seed: int) -> None:
        """Initialize with the starting noise scale."""
        super().__init__(spec, num_actions, context_dim, seed)
        self.sigma = spec["sigma"]

    def policy(self, context: np.ndarray) -> DrugId:
        """Greedy action of the perturbed network."""
        action, self.sigma = param_noise_act(
            self.params, context, self.sigma, self.spec["epsilon"], self.streams.explore
        )
        return action


def bootstrap_act(ensemble: list[MlpParams], x: np.ndarray, rng: RngStream) -> DrugId:
    """Greedy action of one uniformly chosen replica."""
    return greedy_act(ensemble[int(rng.integers(0, len(ensemble)))], x)


def inclusion_mask(q: int, p: float, rng: RngStream) -> np.ndarray:
    """Independent Bernoulli(p) inclusion per replica, forcing at least one."""
    mask = (rng.random(q) < p).astype(np.int8)
    if not mask.any():
        mask[int(rng.integers(0, q))] = 1
    return mask


class BootstrappedAgent(NeuralGreedyAgent):
    """Ensemble of q networks, each trained on its own bootstrap of the data.

    Replica 0 is the network the base class initializes and trains first,
    so a single replica with p = 1 behaves exactly like the greedy agent.
    """

    def __init__(self, spec: AgentSpec, num_actions: int, context_dim: int, seed: int) -> None:
        """Initialize q replicas from the shared init stream."""
        super().__init__(spec, num_actions, context_dim, seed)
        self.ensemble = [self.params] + [
            MlpParams.initialize(self.widths, self.streams.init, spec["init_scale"])
            for _ in range(spec["q"] - 1)
        ]
        self.train_states = [self.train_state] + [TrainState() for _ in range(spec["q"] - 1)]

    def make_buffer(self) -> ReplayBuffer:
        """Buffer with one inclusion bit per replica."""
        return ReplayBuffer(self.context_dim, self.num_actions, replicas=self.spec["q"])

    def policy(self, context: np.ndarray) -> DrugId:
        """Greedy action of a random replica."""
        return bootstrap_act(self.ensemble, context, self.streams.explore)

    def observe(self, context: np.ndarray, action: DrugId, reward: float) -> None:
        """Store the outcome in a random subset of replicas."""
        mask = inclusion_mask(self.spec["q"], self.spec["p"], self.streams.explore)
        self.buffer.add(context, action, reward, mask)
        if self.due_for_training():
            self.train()

    def train(self) -> None:
        """Train every replica on its own rows."""
        for replica, (params, state) in enumerate(
            zip(self.ensemble, self.train_states, strict=True)
        ):
            if not self.buffer.included(replica).size:
                continue
            self.ensemble[replica] = mlp_train(
                params,
                self.buffer,
                self.schedule,
                steps=self.spec["training_steps"],
                batch=self.spec["batch_size"],
                rng=self.streams.train,
                state=state,
                replica=replica,
            )
        self.params = self.ensemble[0]


def rebuild_posteriors(
    params: MlpParams,
    buffer: ReplayBuffer,
    ridge: float,
    a0: float,
    b0: float,
) -> list[NigPosterior]:
    """Per-arm posteriors from replaying the whole buffer through the network."""
    features = with_intercept(mlp_forward(params, buffer.contexts).hidden)
    posteriors = []
    for arm in range(buffer.num_actions):
        rows = buffer.actions == arm
        posteriors.append(
            NigPosterior.from_batch(features[rows], buffer.rewards[rows], ridge, a0, b0)
        )
    return posteriors


def neural_linear_act(
    params: MlpParams, posteriors: list[NigPosterior], x: np.ndarray, rng: RngStream
) -> DrugId:
    """Thompson step on the network's last hidden representation."""
    return nig_thompson_act(posteriors, mlp_forward(params, x).hidden, rng)


class NeuralLinearAgent(NeuralGreedyAgent):
    """Bayesian linear regression on a learned representation."""

    def __init__(self, spec: AgentSpec, num_actions: int, context_dim: int, seed: int) -> None:
        """Initialize the network and one prior per arm."""
        super().__init__(spec, num_actions, context_dim, seed)
        width = self.params.representation_width + 1
        self.posteriors = [
            NigPosterior.prior(width, spec["ridge"], spec["a0"], spec["b0"])
            for _ in range(num_actions)
        ]

    def policy(self, context: np.ndarray) -> DrugId:
        """Sample the posteriors over the representation."""
        return neural_linear_act(self.params, self.posteriors, context, self.streams.explore)

    def observe(self, context: np.ndarray, action: DrugId, reward: float) -> None:
        """Update the arm's posterior; on retrain rebuild every posterior."""
        self.buffer.add(context, action, reward)
        features = with_intercept(mlp_forward(self.params, context).hidden)
        self.posteriors[action] = nig_update(self.posteriors[action], features, reward)
        if self.spec["train_representation"] and self.due_for_training():
            self.train()
            self.posteriors = rebuild_posteriors(
                self.params, self.buffer, self.spec["ridge"], self.spec["a0"], self.spec["b0"]
            )
            self.logger.debug("t=%s rebuilt posteriors from %s rows", self.t, len(self.buffer))
