"""Non-learning reference agents: uniform, clinical guideline and oracle."""

from __future__ import annotations

import numpy as np

from oncobandit.core import DrugId, RewardKind, RngStream, UnitId
from oncobandit.guidelines import RuleSet, guideline_act
from oncobandit.ingest import Dataset
from oncobandit.rewards import optimal_action

from .base import BanditAgent
from .spec import AgentSpec


def uniform_act(k: int, rng: RngStream) -> DrugId:
    """Each arm with probability 1/k."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return DrugId(int(rng.integers(0, k)))


class UniformAgent(BanditAgent):
    """Random assignment."""

    def policy(self, context: np.ndarray) -> DrugId:
        """Draw an arm from the exploration stream."""
        return uniform_act(self.num_actions, self.streams.explore)


class GuidelineAgent(BanditAgent):
    """Applies the protocol rules to the unit's biomarker flags."""

    needs_unit = True

    def __init__(
        self,
        spec: AgentSpec,
        num_actions: int,
        context_dim: int,
        seed: int,
        *,
        dataset: Dataset,
        rules: RuleSet,
    ) -> None:
        """Bind the rules to the dataset up front."""
        super().__init__(spec, num_actions, context_dim, seed)
        self.dataset = dataset
        self.rules = rules
        rules.bind(dataset)

    def policy(self, context: np.ndarray, unit: UnitId) -> DrugId:
        """Highest-priority firing rule, else the default drug."""
        return guideline_act(self.rules, self.dataset, unit)


class OracleAgent(BanditAgent):
    """Plays the optimal action; exists to check the regret plumbing."""

    needs_unit = True

    def __init__(
        self,
        spec: AgentSpec,
        num_actions: int,
        context_dim: int,
        seed: int,
        *,
        dataset: Dataset,
        reward: RewardKind,
    ) -> None:
        """Remember the dataset and reward kind."""
        super().__init__(spec, num_actions, context_dim, seed)
        self.dataset = dataset
        self.reward = reward

    def policy(self, context: np.ndarray, unit: UnitId) -> DrugId:
        """Best drug for the unit under the run's reward."""
        return optimal_action(self.dataset, unit, self.reward)
