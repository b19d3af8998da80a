"""Agent families and their validated hyperparameters."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any

import voluptuous as vol

from oncobandit.const import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_BBB_INIT_RHO,
    DEFAULT_BBB_NOISE_SIGMA,
    DEFAULT_BOOTSTRAP_P,
    DEFAULT_BOOTSTRAP_Q,
    DEFAULT_DROPOUT_KEEP,
    DEFAULT_FIXED_RATE,
    DEFAULT_HIDDEN_WIDTH,
    DEFAULT_INIT_SCALE,
    DEFAULT_INITIAL_PULLS,
    DEFAULT_LINEAR_A0,
    DEFAULT_LINEAR_B0,
    DEFAULT_MAX_GRAD_NORM,
    DEFAULT_NEURAL_LINEAR_A0,
    DEFAULT_NEURAL_LINEAR_B0,
    DEFAULT_PARAM_NOISE_EPSILON,
    DEFAULT_PARAM_NOISE_SIGMA,
    DEFAULT_RIDGE_LAMBDA,
    DEFAULT_RMS2_RATE,
    DEFAULT_RMS3_RATE,
    DEFAULT_RMS_EPSILON,
    DEFAULT_RMS_INITIAL_MOMENT,
    DEFAULT_RMS_SMOOTHING,
    DEFAULT_TRAINING_FREQ,
    DEFAULT_TRAINING_STEPS,
)
from oncobandit.errors import ConfigError

from .mlp import DECAY_TAUS, ScheduleKind, TrainSchedule


class AgentFamily(Enum):
    """Posterior approximations; the value is the CLI and config name."""

    UNIFORM = "uniform"
    LINEAR_TS = "linear"
    NEURAL_GREEDY = "greedy"
    RMS2 = "rms2"
    RMS3 = "rms3"
    DROPOUT = "dropout"
    PARAM_NOISE = "param-noise"
    BOOTSTRAPPED = "bootstrap"
    NEURAL_LINEAR = "neural-linear"
    BAYES_BY_BACKPROP = "bbb"
    GUIDELINE = "guideline"
    ORACLE = "oracle"

    @property
    def learns(self) -> bool:
        """Whether the family learns from rewards (and so runs the prologue)."""
        return self not in (AgentFamily.UNIFORM, AgentFamily.GUIDELINE, AgentFamily.ORACLE)

    @property
    def neural(self) -> bool:
        """Whether the family trains a network."""
        return self.learns and self is not AgentFamily.LINEAR_TS


LEARNING_FAMILIES = tuple(family for family in AgentFamily if family.learns)

_PROBABILITY = vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False, max=1.0))
_POSITIVE = vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False))
_NON_NEGATIVE = vol.All(vol.Coerce(float), vol.Range(min=0.0))
_COUNT = vol.All(vol.Coerce(int), vol.Range(min=1))

PROLOGUE = {
    vol.Optional("initial_pulls", default=DEFAULT_INITIAL_PULLS): vol.All(
        vol.Coerce(int), vol.Range(min=0)
    ),
}


def _posterior(a0: float, b0: float) -> dict:
    return {
        vol.Optional("a0", default=a0): _POSITIVE,
        vol.Optional("b0", default=b0): _POSITIVE,
        vol.Optional("ridge", default=DEFAULT_RIDGE_LAMBDA): _POSITIVE,
    }


def _network(schedule: ScheduleKind, rate: float) -> dict:
    return PROLOGUE | {
        vol.Optional("hidden_width", default=DEFAULT_HIDDEN_WIDTH): _COUNT,
        vol.Optional("hidden_layers", default=1): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional("init_scale", default=DEFAULT_INIT_SCALE): _POSITIVE,
        vol.Optional("training_freq", default=DEFAULT_TRAINING_FREQ): _COUNT,
        vol.Optional("training_steps", default=DEFAULT_TRAINING_STEPS): _COUNT,
        vol.Optional("batch_size", default=DEFAULT_BATCH_SIZE): _COUNT,
        vol.Optional("schedule", default=schedule.value): vol.In(
            [kind.value for kind in ScheduleKind]
        ),
        vol.Optional("rate", default=rate): _POSITIVE,
        vol.Optional("decay_tau", default=None): vol.Any(None, _POSITIVE),
        vol.Optional("rms_smoothing", default=DEFAULT_RMS_SMOOTHING): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, max=1.0, max_included=False)
        ),
        vol.Optional("rms_epsilon", default=DEFAULT_RMS_EPSILON): _POSITIVE,
        vol.Optional("max_grad_norm", default=DEFAULT_MAX_GRAD_NORM): _POSITIVE,
        vol.Optional("rms_initial_moment", default=DEFAULT_RMS_INITIAL_MOMENT): _NON_NEGATIVE,
    }


RMS2_NET = _network(ScheduleKind.RMS2, DEFAULT_RMS2_RATE)
RMS3_NET = _network(ScheduleKind.RMS3, DEFAULT_RMS3_RATE)

FAMILY_SCHEMAS: dict[AgentFamily, vol.Schema] = {
    AgentFamily.UNIFORM: vol.Schema({}),
    AgentFamily.GUIDELINE: vol.Schema({}),
    AgentFamily.ORACLE: vol.Schema({}),
    AgentFamily.LINEAR_TS: vol.Schema(
        PROLOGUE | _posterior(DEFAULT_LINEAR_A0, DEFAULT_LINEAR_B0)
    ),
    AgentFamily.NEURAL_GREEDY: vol.Schema(_network(ScheduleKind.FIXED, DEFAULT_FIXED_RATE)),
    AgentFamily.RMS2: vol.Schema(RMS2_NET),
    AgentFamily.RMS3: vol.Schema(RMS3_NET),
    AgentFamily.DROPOUT: vol.Schema(
        RMS3_NET | {vol.Optional("keep", default=DEFAULT_DROPOUT_KEEP): _PROBABILITY}
    ),
    AgentFamily.PARAM_NOISE: vol.Schema(
        RMS2_NET
        | {
            vol.Optional("sigma", default=DEFAULT_PARAM_NOISE_SIGMA): _NON_NEGATIVE,
            vol.Optional("epsilon", default=DEFAULT_PARAM_NOISE_EPSILON): _POSITIVE,
        }
    ),
    AgentFamily.BOOTSTRAPPED: vol.Schema(
        RMS3_NET
        | {
            vol.Optional("q", default=DEFAULT_BOOTSTRAP_Q): _COUNT,
            vol.Optional("p", default=DEFAULT_BOOTSTRAP_P): _PROBABILITY,
        }
    ),
    AgentFamily.NEURAL_LINEAR: vol.Schema(
        RMS2_NET
        | _posterior(DEFAULT_NEURAL_LINEAR_A0, DEFAULT_NEURAL_LINEAR_B0)
        | {vol.Optional("train_representation", default=True): vol.Boolean()}
    ),
    AgentFamily.BAYES_BY_BACKPROP: vol.Schema(
        _network(ScheduleKind.FIXED, DEFAULT_FIXED_RATE)
        | {
            vol.Optional("noise_sigma", default=DEFAULT_BBB_NOISE_SIGMA): _POSITIVE,
            vol.Optional("init_rho", default=DEFAULT_BBB_INIT_RHO): vol.Coerce(float),
        }
    ),
}


@dataclass(frozen=True)
class AgentSpec:
    """An agent family plus its fully resolved hyperparameters."""

    family: AgentFamily
    params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_config(
        cls, family: AgentFamily | str, overrides: Mapping[str, Any] | None = None
    ) -> AgentSpec:
        """Validate overrides and fill every other key with its default."""
        try:
            family = AgentFamily(family)
        except ValueError as err:
            known = ", ".join(f.value for f in AgentFamily)
            raise ConfigError(f"unknown agent {family!r}; expected one of {known}") from err
        try:
            params = FAMILY_SCHEMAS[family](dict(overrides or {}))
        except vol.Invalid as err:
            raise ConfigError(f"invalid {family.value} hyperparameters: {err}") from err
        if "decay_tau" in params and params["decay_tau"] is None:
            params["decay_tau"] = DECAY_TAUS[ScheduleKind(params["schedule"])]
        return cls(family, MappingProxyType(params))

    @property
    def name(self) -> str:
        """Serialized family name."""
        return self.family.value

    def __getitem__(self, key: str) -> Any:
        """Look up one hyperparameter."""
        return self.params[key]

    def schedule(self) -> TrainSchedule:
        """Training schedule of a neural family."""
        return TrainSchedule(
            kind=ScheduleKind(self["schedule"]),
            rate=self["rate"],
            tau=self["decay_tau"],
            smoothing=self["rms_smoothing"],
            epsilon=self["rms_epsilon"],
            max_grad_norm=self["max_grad_norm"],
            initial_moment=self["rms_initial_moment"],
        )

    def hidden_widths(self) -> list[int]:
        """Widths of the hidden layers."""
        return [self["hidden_width"]] * self["hidden_layers"]

    def as_dict(self) -> dict[str, Any]:
        """JSON-friendly view used in manifests."""
        return {"family": self.name, "params": dict(sorted(self.params.items()))}
