"""From-scratch multilayer perceptron, replay buffer and RMS-style training."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from itertools import pairwise
import logging
from typing import NamedTuple

import numpy as np

from oncobandit.const import (
    DEFAULT_FIXED_RATE,
    DEFAULT_INIT_SCALE,
    DEFAULT_MAX_GRAD_NORM,
    DEFAULT_RMS2_DECAY_TAU,
    DEFAULT_RMS3_DECAY_TAU,
    DEFAULT_RMS_EPSILON,
    DEFAULT_RMS_INITIAL_MOMENT,
    DEFAULT_RMS_SMOOTHING,
)
from oncobandit.core import DrugId, RngStream

_LOGGER = logging.getLogger(__name__)


@dataclass(eq=False)
class MlpParams:
    """Layer weights ``W_l`` of shape (in, out) and biases ``b_l`` of shape (out,).

    Hidden layers use a rectifier; the last layer is linear with one output
    per arm.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def initialize(
        cls, widths: list[int], rng: RngStream, scale: float = DEFAULT_INIT_SCALE
    ) -> MlpParams:
        """Gaussian weights scaled by 1/sqrt(fan-in), zero biases."""
        weights = [
            rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))
            for fan_in, fan_out in pairwise(widths)
        ]
        return cls(weights, [np.zeros(width) for width in widths[1:]])

    @classmethod
    def zeros_like(cls, other: MlpParams) -> MlpParams:
        """All-zero parameters with the same shapes."""
        return cls(
            [np.zeros_like(w) for w in other.weights],
            [np.zeros_like(b) for b in other.biases],
        )

    @property
    def widths(self) -> list[int]:
        """Input width followed by every layer's output width."""
        return [self.weights[0].shape[0], *(w.shape[1] for w in self.weights)]

    @property
    def num_hidden(self) -> int:
        """Number of rectified hidden layers."""
        return len(self.weights) - 1

    @property
    def representation_width(self) -> int:
        """Width of the representation handed to the output head."""
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        """Every parameter array, weights then biases."""
        return [*self.weights, *self.biases]

    def copy(self) -> MlpParams:
        """Deep copy."""
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def map(self, func, *others: MlpParams) -> MlpParams:
        """Apply ``func`` array-wise across this and ``others``."""
        return MlpParams(
            [func(*arrays) for arrays in zip(self.weights, *(o.weights for o in others), strict=True)],
            [func(*arrays) for arrays in zip(self.biases, *(o.biases for o in others), strict=True)],
        )

    def is_finite(self) -> bool:
        """Whether every parameter is finite."""
        return all(np.all(np.isfinite(a)) for a in self.arrays())


class ForwardPass(NamedTuple):
    """Cached intermediate values of one forward pass."""

    outputs: np.ndarray
    hidden: np.ndarray
    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    masks: list[np.ndarray | None]


def mlp_forward(
    params: MlpParams,
    x: np.ndarray,
    masks: list[np.ndarray | None] | None = None,
) -> ForwardPass:
    """Run the network on one context (d,) or a batch (B, d).

    ``masks`` holds one optional multiplier per hidden layer, applied after
    the rectifier (inverted dropout passes 0 or 1/keep). ``hidden`` is the
    representation feeding the output head; with no hidden layers it is the
    input itself.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.widths[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match network {params.widths[0]}")
    masks = masks or [None] * params.num_hidden
    inputs: list[np.ndarray] = []
    pre_activations: list[np.ndarray] = []
    activation = x
    for layer, (w, b) in enumerate(zip(params.weights, params.biases, strict=True)):
        inputs.append(activation)
        z = activation @ w + b
        pre_activations.append(z)
        if layer < params.num_hidden:
            activation = np.maximum(z, 0.0)
            if masks[layer] is not None:
                activation = activation * masks[layer]
        else:
            activation = z
    return ForwardPass(activation, inputs[-1], inputs, pre_activations, list(masks))


def mlp_backward(
    params: MlpParams, cache: ForwardPass, grad_outputs: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Backpropagate ``dL/d outputs``; return parameter and input gradients."""
    delta = np.asarray(grad_outputs, dtype=np.float64)
    batched = delta.ndim == 2
    grad_w: list[np.ndarray] = [np.empty(0)] * len(params.weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(params.biases)
    for layer in reversed(range(len(params.weights))):
        layer_input = cache.inputs[layer]
        if batched:
            grad_w[layer] = layer_input.T @ delta
            grad_b[layer] = delta.sum(axis=0)
        else:
            grad_w[layer] = np.outer(layer_input, delta)
            grad_b[layer] = delta.copy()
        delta = delta @ params.weights[layer].T
        if layer > 0:
            mask = cache.masks[layer - 1]
            if mask is not None:
                delta = delta * mask
            delta = delta * (cache.pre_activations[layer - 1] > 0.0)
    return MlpParams(grad_w, grad_b), delta


def dropout_masks(
    params: MlpParams, keep: float, rng: RngStream, batch: int | None = None
) -> list[np.ndarray | None]:
    """Inverted-dropout masks for every hidden layer; no draws when keep >= 1."""
    if keep >= 1.0:
        return [None] * params.num_hidden
    masks: list[np.ndarray | None] = []
    for width in params.widths[1:-1]:
        shape = (batch, width) if batch is not None else (width,)
        masks.append((rng.random(shape) < keep) / keep)
    return masks


def masked_loss(
    params: MlpParams,
    contexts: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    masks: list[np.ndarray | None] | None = None,
) -> tuple[float, MlpParams]:
    """Mean squared error on the chosen arm's output and its gradient.

    Outputs of arms that were not played receive zero gradient.
    """
    cache = mlp_forward(params, contexts, masks)
    rows = np.arange(len(actions))
    errors = cache.outputs[rows, actions] - rewards
    grad_outputs = np.zeros_like(cache.outputs)
    grad_outputs[rows, actions] = 2.0 * errors / len(actions)
    grads, _ = mlp_backward(params, cache, grad_outputs)
    return float(np.mean(errors**2)), grads


def greedy_act(params: MlpParams, x: np.ndarray) -> DrugId:
    """Arm with the highest predicted reward; ties go to the lowest index."""
    return DrugId(int(np.argmax(mlp_forward(params, x).outputs)))


class ScheduleKind(Enum):
    """Learning-rate schedules."""

    FIXED = "fixed"
    RMS2 = "rms2"
    RMS3 = "rms3"


# FIXED never decays; its entry only fills the field.
DECAY_TAUS: dict[ScheduleKind, float] = {
    ScheduleKind.FIXED: DEFAULT_RMS2_DECAY_TAU,
    ScheduleKind.RMS2: DEFAULT_RMS2_DECAY_TAU,
    ScheduleKind.RMS3: DEFAULT_RMS3_DECAY_TAU,
}


@dataclass(frozen=True)
class TrainSchedule:
    """RMS-style optimizer settings and the learning-rate law.

    The decaying kinds use rate(t) = rate / (1 + t / tau). RMS2 restarts t
    at every training call, RMS3 never does. ``tau`` left as None takes the
    kind's default from ``DECAY_TAUS``. Second moments start at
    ``initial_moment``.
    """

    kind: ScheduleKind = ScheduleKind.FIXED
    rate: float = DEFAULT_FIXED_RATE
    tau: float | None = None
    smoothing: float = DEFAULT_RMS_SMOOTHING
    epsilon: float = DEFAULT_RMS_EPSILON
    max_grad_norm: float = DEFAULT_MAX_GRAD_NORM
    initial_moment: float = DEFAULT_RMS_INITIAL_MOMENT

    def __post_init__(self) -> None:
        """Resolve the schedule's default decay constant."""
        if self.tau is None:
            object.__setattr__(self, "tau", DECAY_TAUS[self.kind])

    def rate_at(self, clock: int) -> float:
        """Learning rate after ``clock`` steps."""
        if self.kind is ScheduleKind.FIXED:
            return self.rate
        return self.rate / (1.0 + clock / self.tau)

    @property
    def resets(self) -> bool:
        """Whether the clock restarts at every training call."""
        return self.kind is ScheduleKind.RMS2


@dataclass
class TrainState:
    """Optimizer state that outlives one training call."""

    clock: int = 0
    second_moments: list[np.ndarray] | None = None
    last_rates: list[float] = field(default_factory=list)
    last_loss: float | None = None


def rms_step(
    arrays: list[np.ndarray],
    grads: list[np.ndarray],
    schedule: TrainSchedule,
    state: TrainState,
) -> float:
    """Apply one clipped RMSProp update in place; return the rate used."""
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > schedule.max_grad_norm:
        grads = [g * (schedule.max_grad_norm / norm) for g in grads]
    if state.second_moments is None:
        state.second_moments = [np.full_like(a, schedule.initial_moment) for a in arrays]
    rate = schedule.rate_at(state.clock)
    rho = schedule.smoothing
    for array, grad, moment in zip(arrays, grads, state.second_moments, strict=True):
        moment *= rho
        moment += (1.0 - rho) * grad * grad
        array -= rate * grad / (np.sqrt(moment) + schedule.epsilon)
    state.clock += 1
    return rate


class ReplayBuffer:
    """Append-only (context, action, reward) history.

    Each row carries an inclusion mask with one bit per replica; replica
    ``i`` only trains on rows whose bit ``i`` is set.
    """

    def __init__(self, context_dim: int, num_actions: int, replicas: int = 1) -> None:
        """Initialize an empty buffer."""
        self.context_dim = context_dim
        self.num_actions = num_actions
        self.replicas = replicas
        self._contexts: list[np.ndarray] = []
        self._actions: list[int] = []
        self._rewards: list[float] = []
        self._masks: list[np.ndarray] = []
        self._cache: tuple[np.ndarray, ...] | None = None

    def __len__(self) -> int:
        """Number of stored observations."""
        return len(self._actions)

    def add(
        self,
        context: np.ndarray,
        action: int,
        reward: float,
        mask: np.ndarray | None = None,
    ) -> None:
        """Append one observation, included in every replica unless masked."""
        context = np.asarray(context, dtype=np.float64)
        if context.shape != (self.context_dim,):
            raise ValueError(f"context shape {context.shape} != ({self.context_dim},)")
        if mask is None:
            mask = np.ones(self.replicas, dtype=np.int8)
        self._contexts.append(context)
        self._actions.append(int(action))
        self._rewards.append(float(reward))
        self._masks.append(np.asarray(mask, dtype=np.int8))
        self._cache = None

    def _arrays(self) -> tuple[np.ndarray, ...]:
        if self._cache is None:
            self._cache = (
                np.array(self._contexts).reshape(len(self), self.context_dim),
                np.array(self._actions, dtype=np.int64),
                np.array(self._rewards),
                np.array(self._masks, dtype=np.int8).reshape(len(self), self.replicas),
            )
        return self._cache

    @property
    def contexts(self) -> np.ndarray:
        """Stored contexts, shape (n, d)."""
        return self._arrays()[0]

    @property
    def actions(self) -> np.ndarray:
        """Stored actions."""
        return self._arrays()[1]

    @property
    def rewards(self) -> np.ndarray:
        """Stored rewards."""
        return self._arrays()[2]

    @property
    def masks(self) -> np.ndarray:
        """Inclusion masks, shape (n, replicas)."""
        return self._arrays()[3]

    def included(self, replica: int = 0) -> np.ndarray:
        """Row indices visible to one replica."""
        return np.flatnonzero(self.masks[:, replica])

    def sample(self, batch: int, rng: RngStream, replica: int = 0) -> np.ndarray:
        """Draw ``batch`` row indices with replacement from a replica's rows."""
        rows = self.included(replica)
        return rows[rng.integers(0, len(rows), size=batch)]

    def action_counts(self, replica: int | None = None) -> np.ndarray:
        """Number of stored rows per action."""
        actions = self.actions if replica is None else self.actions[self.included(replica)]
        return np.bincount(actions, minlength=self.num_actions)


def mlp_train(
    params: MlpParams,
    buffer: ReplayBuffer,
    schedule: TrainSchedule,
    *,
    steps: int,
    batch: int,
    rng: RngStream,
    state: TrainState | None = None,
    keep: float = 1.0,
    replica: int = 0,
) -> MlpParams:
    """Run ``steps`` mini-batch RMS steps on the masked squared error.

    Batches are drawn with replacement from the replica's rows. With
    ``keep`` below one, a fresh dropout mask is drawn for every batch.
    """
    if not buffer.included(replica).size:
        raise ValueError("cannot train on an empty buffer")
    state = state if state is not None else TrainState()
    if schedule.resets:
        state.clock = 0
    params = params.copy()
    contexts, actions, rewards = buffer.contexts, buffer.actions, buffer.rewards
    state.last_rates = []
    for _ in range(steps):
        rows = buffer.sample(batch, rng, replica)
        masks = dropout_masks(params, keep, rng, batch=batch)
        loss, grads = masked_loss(params, contexts[rows], actions[rows], rewards[rows], masks)
        state.last_rates.append(rms_step(params.arrays(), grads.arrays(), schedule, state))
        state.last_loss = loss
    _LOGGER.debug(
        "Trained %s steps on %s rows, last loss %.6g, rate %.4g",
        steps,
        len(buffer),
        state.last_loss,
        state.last_rates[-1] if state.last_rates else float("nan"),
    )
    return params
