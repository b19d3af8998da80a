"""Contexts, the sequential assignment loop and the experiment grid."""

from __future__ import annotations

import asyncio
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import logging
import math
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
import voluptuous as vol

from .agents import AgentFamily, AgentSpec, make_agent
from .const import (
    DEFAULT_PLANTED_BONUS,
    DEFAULT_SYNTH_NOISE,
    DEFAULT_WINDOW,
    REWARD_DIFF,
    REWARD_PERCENTILE,
    REWARD_RANK,
    STATE_MODES,
    STREAM_SHUFFLE,
)
from .core import (
    Context,
    RewardKind,
    RngSeed,
    StateMode,
    UnitId,
    context_length,
    derive_stream,
)
from .errors import ConfigError, OncoBanditError
from .guidelines import RuleSet, parse_rules, recommendation_vector
from .ingest import Dataset, load_dataset, pca_reduce
from .rewards import reward_table
from .synthetic import planted_rules, synthesize_dataset

_LOGGER = logging.getLogger(__name__)

_COUNT = vol.All(vol.Coerce(int), vol.Range(min=1))
_SEED = vol.All(vol.Coerce(int), vol.Range(min=0, max=2**64 - 1))


def build_context(
    ds: Dataset, rs: RuleSet | None, unit: UnitId, mode: StateMode
) -> Context:
    """Context for one unit: embedding, recommendations, or both in that order."""
    if mode is StateMode.GENOMIC:
        return Context(ds.embedding(unit), mode, ds.num_drugs, ds.features.width)
    if rs is None:
        raise ConfigError(f"state mode {mode.value!r} needs a rule file")
    recommendations = recommendation_vector(rs, ds, unit)
    if mode is StateMode.GUIDELINE:
        return Context(recommendations, mode, ds.num_drugs, ds.features.width)
    return Context(
        np.concatenate([ds.embedding(unit), recommendations]), mode, ds.num_drugs, ds.features.width
    )


def context_matrix(ds: Dataset, rs: RuleSet | None, mode: StateMode) -> np.ndarray:
    """Contexts of every unit, shape (n, context length)."""
    width = context_length(mode, ds.features.width, ds.num_drugs)
    matrix = np.empty((ds.num_units, width))
    for unit in range(ds.num_units):
        matrix[unit] = build_context(ds, rs, UnitId(unit), mode).values
    return matrix


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a planted-signal synthetic cohort."""

    n: int = 1000
    k: int = 7
    dim: int = 20
    seed: int = 0
    noise: float = DEFAULT_SYNTH_NOISE
    bonus: float = DEFAULT_PLANTED_BONUS


@dataclass(frozen=True)
class CohortSource:
    """Where a run's dataset and rules come from: three CSVs or a synthetic spec."""

    responses: Path | None = None
    features: Path | None = None
    biomarkers: Path | None = None
    rules: Path | None = None
    synthetic: SyntheticSpec | None = None
    reduce: int | None = None

    def __post_init__(self) -> None:
        """Require exactly one data source."""
        files = (self.responses, self.features, self.biomarkers)
        if self.synthetic is None and not all(files):
            raise ConfigError("need --responses, --features and --biomarkers or a synthetic cohort")
        if self.synthetic is not None and any(files):
            raise ConfigError("cohort files and a synthetic cohort are mutually exclusive")

    @property
    def has_rules(self) -> bool:
        """Whether runs will have a rule set."""
        return self.rules is not None or self.synthetic is not None

    def load(self) -> tuple[Dataset, RuleSet | None]:
        """Read or generate the dataset and its rule set."""
        rules = None
        if self.rules is not None:
            try:
                rules = parse_rules(Path(self.rules).read_text(encoding="utf-8"))
            except OSError as err:
                raise ConfigError(f"cannot read rule file {self.rules}: {err}") from err
        if self.synthetic is not None:
            spec = self.synthetic
            rules = rules or planted_rules(spec.k)
            dataset, _ = synthesize_dataset(
                spec.n, spec.k, spec.dim, rules, spec.seed, noise=spec.noise, bonus=spec.bonus
            )
        else:
            try:
                dataset = load_dataset(self.responses, self.features, self.biomarkers)
            except FileNotFoundError as err:
                raise ConfigError(f"cohort file not found: {err.filename}") from err
        if self.reduce is not None:
            try:
                dataset = replace(dataset, features=pca_reduce(dataset.features, self.reduce))
            except ValueError as err:
                raise ConfigError(str(err)) from err
        if rules is not None:
            rules.bind(dataset)
        return dataset, rules

    def as_dict(self) -> dict[str, Any]:
        """JSON-friendly echo."""
        return {
            "responses": str(self.responses) if self.responses else None,
            "features": str(self.features) if self.features else None,
            "biomarkers": str(self.biomarkers) if self.biomarkers else None,
            "rules": str(self.rules) if self.rules else None,
            "synthetic": vars(self.synthetic).copy() if self.synthetic else None,
            "reduce": self.reduce,
        }


RUN_SCHEMA = vol.Schema(
    {
        vol.Required("state"): vol.In(STATE_MODES),
        vol.Required("reward"): vol.In([REWARD_DIFF, REWARD_RANK, REWARD_PERCENTILE]),
        vol.Required("agent"): str,
        vol.Optional("seed", default=0): _SEED,
        vol.Optional("horizon", default=None): vol.Any(None, _COUNT),
        vol.Optional("params", default={}): dict,
    }
)


@dataclass(frozen=True)
class RunConfig:
    """One cell: cohort, state mode, reward kind, agent and seed."""

    cohort: CohortSource
    state: StateMode
    reward: RewardKind
    agent: AgentSpec
    seed: RngSeed | int = 0
    horizon: int | None = None

    def __post_init__(self) -> None:
        """Check that rule-dependent modes and agents have rules."""
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}")
        needs_rules = (
            self.state is not StateMode.GENOMIC or self.agent.family is AgentFamily.GUIDELINE
        )
        if needs_rules and not self.cohort.has_rules:
            raise ConfigError(
                f"state {self.state.value!r} with agent {self.agent.name!r} needs a rule file"
            )

    @classmethod
    def from_mapping(cls, cohort: CohortSource, values: Mapping[str, Any]) -> RunConfig:
        """Validate loosely typed values, e.g. from the command line."""
        try:
            checked = RUN_SCHEMA(dict(values))
        except vol.Invalid as err:
            raise ConfigError(f"invalid run configuration: {err}") from err
        return cls(
            cohort=cohort,
            state=StateMode(checked["state"]),
            reward=RewardKind(checked["reward"]),
            agent=AgentSpec.from_config(checked["agent"], checked["params"]),
            seed=checked["seed"],
            horizon=checked["horizon"],
        )

    @property
    def label(self) -> str:
        """File-name friendly cell label."""
        return f"{self.state.value}-{self.reward.value}-{self.agent.name}-s{self.seed}"

    def as_dict(self) -> dict[str, Any]:
        """JSON-friendly echo."""
        return {
            "state": self.state.value,
            "reward": self.reward.value,
            "agent": self.agent.as_dict(),
            "seed": int(self.seed),
            "horizon": self.horizon,
        }


class StepRecord(NamedTuple):
    """One decision of a run."""

    t: int
    unit: str
    action: int
    drug: str
    reward: float
    regret: float
    cumulative_reward: float
    cumulative_regret: float
    score: float

    def as_dict(self) -> dict[str, Any]:
        """JSON-friendly view."""
        return self._asdict()


@dataclass(frozen=True, eq=False)
class RunResult:
    """Outcome of one run.

    ``regret`` is ``optimal_reward - cumulative_reward``. ``normalized`` is
    filled in by the grid once the uniform baseline is known.
    """

    config: RunConfig
    drugs: tuple[str, ...]
    cumulative_reward: float
    optimal_reward: float
    regret: float
    action_counts: tuple[int, ...]
    mean_score: float
    steps: tuple[StepRecord, ...] = field(repr=False)
    normalized: float | None = None

    @property
    def horizon(self) -> int:
        """Number of decisions."""
        return len(self.steps)

    def summary(self) -> dict[str, Any]:
        """One summary-table row."""
        return {
            "mode": self.config.state.value,
            "reward": self.config.reward.value,
            "agent": self.config.agent.name,
            "seed": int(self.config.seed),
            "r": self.cumulative_reward,
            "r_star": self.optimal_reward,
            "regret": self.regret,
            "normalized": math.nan if self.normalized is None else self.normalized,
            "mean_score": self.mean_score,
        }


def run_single(
    cfg: RunConfig, *, dataset: Dataset | None = None, rules: RuleSet | None = None
) -> RunResult:
    """Assign treatments to units one at a time and account rewards.

    Units are visited in a permutation drawn from the ``shuffle`` stream,
    reshuffled each time the horizon wraps around the cohort. The whole run
    is a deterministic function of the configuration and seed.
    """
    if dataset is None:
        dataset, rules = cfg.cohort.load()
    if cfg.state is not StateMode.GENOMIC and rules is None:
        raise ConfigError(f"state mode {cfg.state.value!r} needs a rule file")
    n, k = dataset.num_units, dataset.num_drugs
    horizon = cfg.horizon or n
    contexts = context_matrix(dataset, rules, cfg.state)
    rewards = reward_table(dataset, cfg.reward)
    best = rewards.max(axis=1)
    agent = make_agent(
        cfg.agent,
        num_actions=k,
        context_dim=contexts.shape[1],
        seed=cfg.seed,
        dataset=dataset,
        rules=rules,
        reward=cfg.reward,
    )
    shuffle = derive_stream(cfg.seed, STREAM_SHUFFLE)
    order = np.empty(0, dtype=np.int64)
    steps: list[StepRecord] = []
    counts = np.zeros(k, dtype=np.int64)
    total_reward = total_regret = optimal = total_score = 0.0
    _LOGGER.info("Starting run %s over %s steps", cfg.label, horizon)
    for t in range(horizon):
        if t % n == 0:
            order = shuffle.permutation(n)
        unit = UnitId(int(order[t % n]))
        context = contexts[unit]
        action = agent.act(context, unit)
        reward = float(rewards[unit, action])
        regret = float(best[unit] - reward)
        agent.update(context, action, reward)
        total_reward += reward
        total_regret += regret
        optimal += float(best[unit])
        score = dataset.score(unit, action)
        total_score += score
        counts[action] += 1
        steps.append(
            StepRecord(
                t,
                dataset.units[unit],
                int(action),
                dataset.drugs[action],
                reward,
                regret,
                total_reward,
                total_regret,
                score,
            )
        )
    _LOGGER.info(
        "Finished run %s: reward %.6g, optimal %.6g, regret %.6g",
        cfg.label,
        total_reward,
        optimal,
        optimal - total_reward,
    )
    return RunResult(
        config=cfg,
        drugs=dataset.drugs,
        cumulative_reward=total_reward,
        optimal_reward=optimal,
        regret=optimal - total_reward,
        action_counts=tuple(int(c) for c in counts),
        mean_score=total_score / horizon,
        steps=tuple(steps),
    )


class CellKey(NamedTuple):
    """Coordinates of one grid cell."""

    state: str
    reward: str
    agent: str
    seed: int

    def __str__(self) -> str:
        """Compact label."""
        return f"{self.state}/{self.reward}/{self.agent}/seed={self.seed}"


def cell_key(cfg: RunConfig) -> CellKey:
    """Grid coordinates of a run configuration."""
    return CellKey(cfg.state.value, cfg.reward.value, cfg.agent.name, int(cfg.seed))


class CellFailure(NamedTuple):
    """A grid cell that raised instead of producing a result."""

    key: CellKey
    message: str


def normalized_score(r: float, r_uniform: float, r_star: float) -> float:
    """(r - r_uniform) / (r_star - r_uniform); NaN when the denominator is 0."""
    denominator = r_star - r_uniform
    if denominator == 0.0:
        return math.nan
    return (r - r_uniform) / denominator


def attach_normalized_scores(
    results: list[RunResult], baselines: Mapping[tuple[str, str, int], RunResult]
) -> list[RunResult]:
    """Fill ``normalized`` using the uniform run of the same mode, reward and seed."""
    scored = []
    for result in results:
        key = cell_key(result.config)
        baseline = baselines.get((key.state, key.reward, key.seed))
        if baseline is None:
            scored.append(result)
            continue
        value = normalized_score(
            result.cumulative_reward, baseline.cumulative_reward, result.optimal_reward
        )
        if math.isnan(value):
            _LOGGER.warning("Normalized score undefined for %s: r* equals uniform reward", key)
        scored.append(replace(result, normalized=value))
    return scored


@dataclass(frozen=True)
class GridSpec:
    """State modes x reward kinds x agents x seeds over one cohort."""

    cohort: CohortSource
    states: tuple[StateMode, ...]
    rewards: tuple[RewardKind, ...]
    agents: tuple[AgentSpec, ...]
    seeds: tuple[int, ...]
    horizon: int | None = None
    window: int = DEFAULT_WINDOW
    out: Path | None = None

    def cells(self) -> list[RunConfig]:
        """Every cell, in a fixed order."""
        return [
            RunConfig(self.cohort, state, reward, agent, seed, self.horizon)
            for state in self.states
            for reward in self.rewards
            for agent in self.agents
            for seed in self.seeds
        ]

    def as_dict(self) -> dict[str, Any]:
        """JSON-friendly echo."""
        return {
            "cohort": self.cohort.as_dict(),
            "states": [s.value for s in self.states],
            "rewards": [r.value for r in self.rewards],
            "agents": [a.as_dict() for a in self.agents],
            "seeds": list(self.seeds),
            "horizon": self.horizon,
            "window": self.window,
        }


def _split(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


GRID_SCHEMA = vol.Schema(
    {
        vol.Required("states"): vol.All(_split, [vol.In(STATE_MODES)], vol.Length(min=1)),
        vol.Required("rewards"): vol.All(
            _split, [vol.In([REWARD_DIFF, REWARD_RANK, REWARD_PERCENTILE])], vol.Length(min=1)
        ),
        vol.Required("agents"): vol.All(_split, vol.Length(min=1)),
        vol.Required("seeds"): vol.All(_split, [_SEED], vol.Length(min=1)),
        vol.Optional("responses"): str,
        vol.Optional("features"): str,
        vol.Optional("biomarkers"): str,
        vol.Optional("rules"): str,
        vol.Optional("reduce"): _COUNT,
        vol.Optional("synthetic.n"): _COUNT,
        vol.Optional("synthetic.k"): _COUNT,
        vol.Optional("synthetic.dim"): _COUNT,
        vol.Optional("synthetic.seed"): _SEED,
        vol.Optional("synthetic.noise"): vol.All(vol.Coerce(float), vol.Range(min=0.0)),
        vol.Optional("synthetic.bonus"): vol.Coerce(float),
        vol.Optional("horizon"): _COUNT,
        vol.Optional("window", default=DEFAULT_WINDOW): _COUNT,
        vol.Optional("out"): str,
    }
)


def parse_grid(text: str, base_dir: Path | str = ".") -> GridSpec:
    """Parse a ``key = value`` grid file.

    Keys of the form ``<agent>.<param>`` override that agent's
    hyperparameters in every cell; relative paths resolve against
    ``base_dir``.
    """
    base_dir = Path(base_dir)
    values: dict[str, str] = {}
    overrides: dict[str, dict[str, str]] = {}
    families = {family.value for family in AgentFamily}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"grid line {number}: expected 'key = value', got {raw!r}")
        agent, dot, param = key.partition(".")
        if dot and agent in families:
            overrides.setdefault(agent, {})[param] = value
        elif key in values:
            raise ConfigError(f"grid line {number}: duplicate key {key!r}")
        else:
            values[key] = value
    try:
        checked = GRID_SCHEMA(values)
    except vol.Invalid as err:
        raise ConfigError(f"invalid grid file: {err}") from err

    def _path(key: str) -> Path | None:
        return base_dir / checked[key] if key in checked else None

    synthetic = None
    synth_keys = {
        key.split(".", 1)[1]: val for key, val in checked.items() if key.startswith("synthetic.")
    }
    if synth_keys:
        synthetic = SyntheticSpec(**synth_keys)
    cohort = CohortSource(
        responses=_path("responses"),
        features=_path("features"),
        biomarkers=_path("biomarkers"),
        rules=_path("rules"),
        synthetic=synthetic,
        reduce=checked.get("reduce"),
    )
    unknown = set(overrides) - set(checked["agents"])
    if unknown:
        raise ConfigError(f"overrides for agents not in the grid: {', '.join(sorted(unknown))}")
    return GridSpec(
        cohort=cohort,
        states=tuple(StateMode(s) for s in checked["states"]),
        rewards=tuple(RewardKind(r) for r in checked["rewards"]),
        agents=tuple(
            AgentSpec.from_config(name, overrides.get(name)) for name in checked["agents"]
        ),
        seeds=tuple(checked["seeds"]),
        horizon=checked.get("horizon"),
        window=checked["window"],
        out=_path("out"),
    )


@dataclass
class GridOutcome:
    """Results and failures of a grid, in cell order."""

    results: list[RunResult]
    failures: list[CellFailure]


class GridRunner:
    """Runs every cell of a grid over one shared, immutable dataset."""

    def __init__(self, grid: GridSpec, jobs: int = 1) -> None:
        """Initialize the runner."""
        if jobs < 1:
            raise ConfigError(f"jobs must be at least 1, got {jobs}")
        self.grid = grid
        self.jobs = jobs
        self.logger = _LOGGER.getChild("grid")
        self.dataset: Dataset | None = None
        self.rules: RuleSet | None = None

    def _run_cell(self, cfg: RunConfig) -> RunResult | CellFailure:
        """Run one cell, converting any error into a failure record."""
        try:
            return run_single(cfg, dataset=self.dataset, rules=self.rules)
        except OncoBanditError as err:
            self.logger.warning("Cell %s failed: %s", cell_key(cfg), err)
            return CellFailure(cell_key(cfg), str(err))
        except Exception as err:
            self.logger.exception("Unexpected error in cell %s", cell_key(cfg))
            return CellFailure(cell_key(cfg), f"{type(err).__name__}: {err}")

    async def async_run(self) -> GridOutcome:
        """Execute the grid on a thread pool and attach normalized scores."""
        self.dataset, self.rules = self.grid.cohort.load()
        cells = self.grid.cells()
        baseline_cells = self._baseline_cells(cells)
        self.logger.info(
            "Running %s cells (+%s uniform baselines) with %s jobs",
            len(cells),
            len(baseline_cells),
            self.jobs,
        )
        loop = asyncio.get_running_loop()
        with ThreadPoolExecutor(max_workers=self.jobs) as executor:
            outcomes = await asyncio.gather(
                *(
                    loop.run_in_executor(executor, self._run_cell, cfg)
                    for cfg in cells + baseline_cells
                )
            )
        results = [o for o in outcomes[: len(cells)] if isinstance(o, RunResult)]
        failures = [o for o in outcomes if isinstance(o, CellFailure)]
        baselines = {
            (key.state, key.reward, key.seed): outcome
            for outcome in outcomes
            if isinstance(outcome, RunResult)
            and (key := cell_key(outcome.config)).agent == AgentFamily.UNIFORM.value
        }
        self.logger.info("Grid done: %s results, %s failures", len(results), len(failures))
        return GridOutcome(attach_normalized_scores(results, baselines), failures)

    def _baseline_cells(self, cells: list[RunConfig]) -> list[RunConfig]:
        """Uniform runs needed for normalization that the grid lacks."""
        present = {
            (cfg.state, cfg.reward, cfg.seed)
            for cfg in cells
            if cfg.agent.family is AgentFamily.UNIFORM
        }
        uniform = AgentSpec.from_config(AgentFamily.UNIFORM)
        wanted = dict.fromkeys((cfg.state, cfg.reward, cfg.seed) for cfg in cells)
        return [
            RunConfig(self.grid.cohort, state, reward, uniform, seed, self.grid.horizon)
            for state, reward, seed in wanted
            if (state, reward, seed) not in present
        ]


async def async_run_grid(grid: GridSpec, jobs: int = 1) -> GridOutcome:
    """Run a grid; cells execute concurrently on ``jobs`` worker threads."""
    return await GridRunner(grid, jobs).async_run()


def run_grid(grid: GridSpec, jobs: int = 1) -> GridOutcome:
    """Blocking wrapper around :func:`async_run_grid`."""
    return asyncio.run(async_run_grid(grid, jobs))
