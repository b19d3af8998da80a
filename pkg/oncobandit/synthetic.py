"""Planted-signal synthetic cohorts for desk-scale experiments."""

from __future__ import annotations

from dataclasses import dataclass
import json
import logging
from pathlib import Path

import aiofiles
import numpy as np

from .const import (
    DEFAULT_PLANTED_BONUS,
    DEFAULT_SYNTH_NOISE,
    PLANTED_FLAG_THRESHOLD,
    RULES_FILE,
    STREAM_FEATURES,
    STREAM_REWARD_NOISE,
    TRUTH_FILE,
)
from .core import RngSeed, derive_stream
from .errors import ConfigError
from .guidelines import Rule, RuleSet
from .ingest import (
    BiomarkerTable,
    Dataset,
    FeatureTable,
    RawResponseTable,
    assemble_dataset,
    async_export_cohort,
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PlantedTruth:
    """Ground truth behind a synthetic cohort.

    ``coefficients`` and ``intercepts`` are indexed by dataset drug order.
    """

    coefficients: np.ndarray
    intercepts: np.ndarray
    flag_columns: dict[str, int]
    best_arms: np.ndarray
    noise: float
    bonus: float

    def to_json(self, dataset: Dataset) -> dict:
        """Serializable view keyed by drug and unit names."""
        return {
            "bonus": self.bonus,
            "noise": self.noise,
            "flag_columns": dict(sorted(self.flag_columns.items())),
            "drugs": {
                drug: {
                    "intercept": float(self.intercepts[index]),
                    "coefficients": self.coefficients[index].tolist(),
                }
                for index, drug in enumerate(dataset.drugs)
            },
            "best_arms": {
                unit: dataset.drugs[int(arm)]
                for unit, arm in zip(dataset.units, self.best_arms, strict=True)
            },
        }


def planted_rules(k: int) -> RuleSet:
    """One single-flag rule per non-default drug.

    ``MUT:GENE{j}`` recommends ``D{j}`` with priority ``j``; ``D0`` is the default.
    """
    return RuleSet(
        tuple(
            Rule(f"gene{j}", (f"MUT:GENE{j}",), f"D{j}", j, line=j) for j in range(1, k)
        ),
        "D0",
    )


def _drug_names(k: int, rules: RuleSet | None) -> list[str]:
    if rules is None:
        return [f"D{j}" for j in range(k)]
    names: list[str] = []
    for drug in (rules.default_drug, *(rule.drug for rule in rules.rules)):
        if drug not in names:
            names.append(drug)
    if len(names) > k:
        raise ConfigError(f"rules name {len(names)} drugs but only {k} were requested")
    index = 0
    while len(names) < k:
        if f"D{index}" not in names:
            names.append(f"D{index}")
        index += 1
    return names


def _flag_names(rules: RuleSet | None) -> list[str]:
    flags: list[str] = []
    for rule in rules.rules if rules else ():
        for flag in rule.predicate:
            if flag not in flags:
                flags.append(flag)
    return flags


def synthesize_dataset(
    n: int,
    k: int,
    dim: int,
    rules: RuleSet | None = None,
    seed: RngSeed | int = 0,
    *,
    noise: float = DEFAULT_SYNTH_NOISE,
    bonus: float = DEFAULT_PLANTED_BONUS,
) -> tuple[Dataset, PlantedTruth]:
    """Generate a cohort whose log-IC50 is linear in the features.

    ln IC50(u, d) = x_u . w_d + c_d + noise, minus ``bonus`` for every rule
    that fires for u and recommends d. Each rule flag is tied to one feature
    column and set where that column exceeds the flag threshold, so the
    rules carry real but partial signal.
    """
    if not n >= k >= 2:
        raise ConfigError(f"need n >= k >= 2, got n={n}, k={k}")
    if dim < 1:
        raise ConfigError(f"dim must be at least 1, got {dim}")
    if noise < 0:
        raise ConfigError(f"noise must be non-negative, got {noise}")
    rng = derive_stream(seed, STREAM_FEATURES)
    features = rng.standard_normal((n, dim))
    weights = rng.normal(0.0, np.sqrt(1.0 / dim), size=(k, dim))
    intercepts = rng.standard_normal(k)
    jitter = derive_stream(seed, STREAM_REWARD_NOISE).normal(0.0, 1.0, size=(n, k)) * noise

    names = _drug_names(k, rules)
    flags = _flag_names(rules)
    flag_columns = {flag: position % dim for position, flag in enumerate(flags)}
    flag_values = np.zeros((n, len(flags)), dtype=np.int8)
    for column, flag in enumerate(flags):
        flag_values[:, column] = features[:, flag_columns[flag]] > PLANTED_FLAG_THRESHOLD

    signal = features @ weights.T + intercepts
    if rules is not None:
        position = {drug: column for column, drug in enumerate(names)}
        for rule in rules.rules:
            fires = np.all(
                flag_values[:, [flags.index(flag) for flag in rule.predicate]] == 1, axis=1
            )
            signal[fires, position[rule.drug]] -= bonus
    log_ic50 = signal + jitter

    units = [f"U{i:05d}" for i in range(n)]
    rows = [
        (unit, drug, float(np.exp(log_ic50[row, column])))
        for row, unit in enumerate(units)
        for column, drug in enumerate(names)
    ]
    dataset = assemble_dataset(
        RawResponseTable.from_rows(rows),
        FeatureTable(tuple(units), features, provenance=f"synthetic N(0, I) features ({dim})"),
        BiomarkerTable(tuple(units), tuple(flags), flag_values),
    )

    # dataset drugs are sorted by name; reorder ground truth to match
    order = [names.index(drug) for drug in dataset.drugs]
    centered = signal - np.median(signal, axis=0)
    truth = PlantedTruth(
        coefficients=weights[order],
        intercepts=intercepts[order],
        flag_columns=flag_columns,
        best_arms=np.argmin(centered[:, order], axis=1),
        noise=noise,
        bonus=bonus,
    )
    _LOGGER.debug(
        "Synthesized %s units x %s drugs (dim=%s, noise=%s, %s planted flags)",
        n,
        k,
        dim,
        noise,
        len(flags),
    )
    return dataset, truth


async def async_export_synthetic(
    dataset: Dataset,
    truth: PlantedTruth,
    directory: Path | str,
    rules: RuleSet | None = None,
) -> list[Path]:
    """Write a synthetic cohort with its rule file and ground truth."""
    directory = Path(directory)
    written = await async_export_cohort(dataset, directory)
    if rules is not None:
        async with aiofiles.open(directory / RULES_FILE, "w", encoding="utf-8") as fh:
            await fh.write(rules.to_text())
        written.append(directory / RULES_FILE)
    async with aiofiles.open(directory / TRUTH_FILE, "w", encoding="utf-8") as fh:
        await fh.write(json.dumps(truth.to_json(dataset), indent=4, sort_keys=True))
    written.append(directory / TRUTH_FILE)
    return written
