"""Base class shared by every bandit agent."""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from oncobandit.const import STREAM_AGENT, STREAM_EXPLORE, STREAM_INIT, STREAM_TRAIN
from oncobandit.core import DrugId, RngSeed, RngStream, UnitId, derive_stream

from .spec import AgentSpec

_LOGGER = logging.getLogger(__name__)


class AgentStreams(NamedTuple):
    """Named sub-streams of one agent's randomness."""

    init: RngStream
    train: RngStream
    explore: RngStream

    @classmethod
    def derive(cls, seed: RngSeed | int) -> AgentStreams:
        """Derive the ``agent/...`` streams for a run seed."""
        return cls(
            derive_stream(seed, f"{STREAM_AGENT}/{STREAM_INIT}"),
            derive_stream(seed, f"{STREAM_AGENT}/{STREAM_TRAIN}"),
            derive_stream(seed, f"{STREAM_AGENT}/{STREAM_EXPLORE}"),
        )


class BanditAgent:
    """Sequential act / update loop with a forced round-robin prologue.

    Learning agents play arm ``t % k`` for the first ``initial_pulls * k``
    decisions; afterwards :meth:`policy` decides. Subclasses implement
    :meth:`policy` and :meth:`observe`.
    """

    # reference agents read the unit itself rather than its context
    needs_unit = False

    def __init__(
        self, spec: AgentSpec, num_actions: int, context_dim: int, seed: RngSeed | int
    ) -> None:
        """Initialize the agent."""
        if num_actions < 1:
            raise ValueError("an agent needs at least one action")
        self.spec = spec
        self.num_actions = num_actions
        self.context_dim = context_dim
        self.seed = seed
        self.streams = AgentStreams.derive(seed)
        self.t = 0
        self.logger = _LOGGER.getChild(spec.name)
        prologue = spec.params.get("initial_pulls", 0) if spec.family.learns else 0
        self.prologue = prologue * num_actions

    def act(self, context: np.ndarray, unit: UnitId | None = None) -> DrugId:
        """Choose an arm for the next unit."""
        if self.t < self.prologue:
            return DrugId(self.t % self.num_actions)
        return self.policy(context, unit) if self.needs_unit else self.policy(context)

    def update(self, context: np.ndarray, action: DrugId, reward: float) -> None:
        """Record the outcome of the last decision."""
        self.observe(np.asarray(context, dtype=np.float64), DrugId(int(action)), float(reward))
        self.t += 1

    def policy(self, context: np.ndarray) -> DrugId:
        """Choose an arm once the prologue is over."""
        raise NotImplementedError

    def observe(self, context: np.ndarray, action: DrugId, reward: float) -> None:
        """Learn from one outcome; non-learning agents ignore it."""
