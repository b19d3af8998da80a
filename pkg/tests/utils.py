"""Assists in executing tests by making it easy to load cohort dumps."""

import json
import math
import os
from pathlib import Path
from typing import Any

import numpy as np

from oncobandit.guidelines import RuleSet, parse_rules
from oncobandit.ingest import (
    BiomarkerTable,
    Dataset,
    FeatureTable,
    RawResponseTable,
    assemble_dataset,
)

current_path: Path = Path(__file__.rsplit(os.sep, 1)[0])


def get_cohort_dump(file_name: str) -> Any:
    """Load and parse a JSON cohort dump from the cohort_dumps directory.

    A dump lists drug and unit names, a units x drugs matrix of ln IC50
    values, a units x features embedding matrix, biomarker flag columns and
    the lines of a rule file.

    :param file_name: Name of the file to load from cohort_dumps directory
    :return: Parsed JSON data
    """
    with Path(current_path / "cohort_dumps" / file_name).open() as fh:
        return json.load(fh)


def response_rows(dump: dict) -> list[tuple[str, str, float]]:
    """Long-format (unit, drug, ic50) rows of a dump.

    :param dump: Loaded cohort dump
    """
    return [
        (unit, drug, math.exp(value))
        for unit, row in zip(dump["units"], dump["log_ic50"], strict=True)
        for drug, value in zip(dump["drugs"], row, strict=True)
    ]


def rules_text(dump: dict) -> str:
    """Rule file contents of a dump."""
    return "\n".join(dump["rules"]) + "\n"


def dataset_from_dump(dump: dict) -> Dataset:
    """Assemble a dataset straight from a dump, skipping CSV parsing."""
    units = tuple(dump["units"])
    flags = dump["biomarkers"]
    return assemble_dataset(
        RawResponseTable.from_rows(response_rows(dump)),
        FeatureTable(units, np.array(dump["features"])),
        BiomarkerTable(units, tuple(flags), np.array(list(flags.values())).T),
    )


def rules_from_dump(dump: dict) -> RuleSet:
    """Parse the rule file embedded in a dump."""
    return parse_rules(rules_text(dump))


def write_cohort_csvs(dump: dict, directory: Path) -> dict[str, Path]:
    """Write a dump as the three cohort CSVs plus its rule file.

    :param dump: Loaded cohort dump
    :param directory: Target directory, created if needed
    :return: Paths keyed by ``responses``, ``features``, ``biomarkers`` and ``rules``
    """
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "responses": directory / "responses.csv",
        "features": directory / "features.csv",
        "biomarkers": directory / "biomarkers.csv",
        "rules": directory / "rules.txt",
    }
    lines = ["unit,drug,ic50"]
    lines.extend(f"{unit},{drug},{ic50!r}" for unit, drug, ic50 in response_rows(dump))
    paths["responses"].write_text("\n".join(lines) + "\n")

    width = len(dump["features"][0])
    lines = ["unit," + ",".join(f"f{i}" for i in range(width))]
    lines.extend(
        unit + "," + ",".join(repr(value) for value in row)
        for unit, row in zip(dump["units"], dump["features"], strict=True)
    )
    paths["features"].write_text("\n".join(lines) + "\n")

    flags = dump["biomarkers"]
    lines = ["unit," + ",".join(flags)]
    lines.extend(
        unit + "," + ",".join(str(flags[flag][row]) for flag in flags)
        for row, unit in enumerate(dump["units"])
    )
    paths["biomarkers"].write_text("\n".join(lines) + "\n")
    paths["rules"].write_text(rules_text(dump))
    return paths


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-relative difference used by the finite-difference checks."""
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)
