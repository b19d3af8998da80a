"""Bandit agents, one module per posterior approximation."""

from __future__ import annotations

from oncobandit.core import RewardKind, RngSeed
from oncobandit.errors import ConfigError
from oncobandit.guidelines import RuleSet
from oncobandit.ingest import Dataset

from .base import AgentStreams, BanditAgent
from .linear import LinearThompsonAgent, NigPosterior, nig_thompson_act, nig_update
from .neural import (
    BootstrappedAgent,
    DropoutAgent,
    NeuralGreedyAgent,
    NeuralLinearAgent,
    ParamNoiseAgent,
)
from .reference import GuidelineAgent, OracleAgent, UniformAgent, uniform_act
from .spec import LEARNING_FAMILIES, AgentFamily, AgentSpec
from .variational import BayesByBackpropAgent

AGENT_CLASSES: dict[AgentFamily, type[BanditAgent]] = {
    AgentFamily.UNIFORM: UniformAgent,
    AgentFamily.LINEAR_TS: LinearThompsonAgent,
    AgentFamily.NEURAL_GREEDY: NeuralGreedyAgent,
    AgentFamily.RMS2: NeuralGreedyAgent,
    AgentFamily.RMS3: NeuralGreedyAgent,
    AgentFamily.DROPOUT: DropoutAgent,
    AgentFamily.PARAM_NOISE: ParamNoiseAgent,
    AgentFamily.BOOTSTRAPPED: BootstrappedAgent,
    AgentFamily.NEURAL_LINEAR: NeuralLinearAgent,
    AgentFamily.BAYES_BY_BACKPROP: BayesByBackpropAgent,
    AgentFamily.GUIDELINE: GuidelineAgent,
    AgentFamily.ORACLE: OracleAgent,
}

__all__ = [
    "AGENT_CLASSES",
    "LEARNING_FAMILIES",
    "AgentFamily",
    "AgentSpec",
    "AgentStreams",
    "BanditAgent",
    "NigPosterior",
    "make_agent",
    "nig_thompson_act",
    "nig_update",
    "uniform_act",
]


def make_agent(
    spec: AgentSpec,
    *,
    num_actions: int,
    context_dim: int,
    seed: RngSeed | int,
    dataset: Dataset | None = None,
    rules: RuleSet | None = None,
    reward: RewardKind | None = None,
) -> BanditAgent:
    """Instantiate the agent a spec describes."""
    cls = AGENT_CLASSES[spec.family]
    if spec.family is AgentFamily.GUIDELINE:
        if dataset is None or rules is None:
            raise ConfigError("the guideline agent needs a dataset and a rule file")
        return GuidelineAgent(spec, num_actions, context_dim, seed, dataset=dataset, rules=rules)
    if spec.family is AgentFamily.ORACLE:
        if dataset is None or reward is None:
            raise ConfigError("the oracle agent needs a dataset and a reward kind")
        return OracleAgent(spec, num_actions, context_dim, seed, dataset=dataset, reward=reward)
    return cls(spec, num_actions, context_dim, seed)
