"""Cohort ingestion: parse, validate, normalize and assemble datasets."""

from __future__ import annotations

from dataclasses import dataclass, field
import io
import logging
from pathlib import Path
import re

import aiofiles
import numpy as np
import pandas as pd

from .const import (
    BIOMARKER_KEY_PATTERN,
    BIOMARKERS_FILE,
    CSV_DRUG,
    CSV_IC50,
    CSV_UNIT,
    DEFAULT_EMBEDDING_WIDTH,
    EMBEDDING_PROVENANCE,
    FEATURES_FILE,
    RESPONSES_FILE,
)
from .core import DrugId, ResponseMatrix, UnitId
from .errors import CohortParseError, CohortValidationError

_LOGGER = logging.getLogger(__name__)

_BIOMARKER_KEY = re.compile(rf"^{BIOMARKER_KEY_PATTERN}$")
_PANDAS_LINE = re.compile(r"line (\d+)")


@dataclass(frozen=True, eq=False)
class RawResponseTable:
    """Long-format (unit, drug, IC50) rows on the linear concentration scale."""

    frame: pd.DataFrame

    def __post_init__(self) -> None:
        """Normalize column types and reject duplicate pairs."""
        frame = self.frame.loc[:, [CSV_UNIT, CSV_DRUG, CSV_IC50]].copy()
        frame[CSV_UNIT] = frame[CSV_UNIT].astype(str)
        frame[CSV_DRUG] = frame[CSV_DRUG].astype(str)
        frame[CSV_IC50] = frame[CSV_IC50].astype(np.float64)
        duplicated = frame.duplicated(subset=[CSV_UNIT, CSV_DRUG])
        if duplicated.any():
            first = frame.loc[duplicated].iloc[0]
            raise CohortValidationError(
                f"duplicate response for unit {first[CSV_UNIT]!r}, drug {first[CSV_DRUG]!r}"
            )
        object.__setattr__(self, "frame", frame.reset_index(drop=True))

    @classmethod
    def from_rows(cls, rows: list[tuple[str, str, float]]) -> RawResponseTable:
        """Build a table from (unit, drug, ic50) tuples."""
        return cls(pd.DataFrame(rows, columns=[CSV_UNIT, CSV_DRUG, CSV_IC50]))

    @property
    def units(self) -> list[str]:
        """Unit names, sorted."""
        return sorted(self.frame[CSV_UNIT].unique())

    @property
    def drugs(self) -> list[str]:
        """Drug names, sorted."""
        return sorted(self.frame[CSV_DRUG].unique())

    def complete_units(self) -> list[str]:
        """Units that have a response for every drug, sorted."""
        counts = self.frame.groupby(CSV_UNIT)[CSV_DRUG].nunique()
        return sorted(counts.index[counts == len(self.drugs)])

    def restrict(self, units: list[str]) -> RawResponseTable:
        """Return the rows belonging to the given units."""
        return RawResponseTable(self.frame[self.frame[CSV_UNIT].isin(units)])


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Per-unit real vectors (precomputed embedding)."""

    units: tuple[str, ...]
    values: np.ndarray
    provenance: str = EMBEDDING_PROVENANCE
    explained_variance: np.ndarray | None = None

    def __post_init__(self) -> None:
        """Check shape and finiteness."""
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] != len(self.units):
            raise CohortValidationError(
                f"feature table shape {values.shape} does not match {len(self.units)} units"
            )
        if not np.all(np.isfinite(values)):
            raise CohortValidationError("feature table has non-finite entries")
        if len(set(self.units)) != len(self.units):
            raise CohortValidationError("feature table lists a unit twice")
        values.setflags(write=False)
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        """Embedding width."""
        return self.values.shape[1]

    def select(self, units: list[str]) -> np.ndarray:
        """Rows for the given units, in that order."""
        index = {name: row for row, name in enumerate(self.units)}
        return self.values[[index[name] for name in units]]


@dataclass(frozen=True, eq=False)
class BiomarkerTable:
    """Per-unit binary flags keyed by namespaced names such as ``MUT:BRAF_V600E``."""

    units: tuple[str, ...]
    flags: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        """Check flag names and binary values."""
        values = np.array(self.values, dtype=np.int8, copy=True).reshape(
            len(self.units), len(self.flags)
        )
        for flag in self.flags:
            if not _BIOMARKER_KEY.match(flag):
                raise CohortValidationError(f"invalid biomarker key {flag!r}")
        if not np.all((values == 0) | (values == 1)):
            raise CohortValidationError("biomarker values must be 0 or 1")
        if len(set(self.units)) != len(self.units):
            raise CohortValidationError("biomarker table lists a unit twice")
        values.setflags(write=False)
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "flags", tuple(self.flags))
        object.__setattr__(self, "values", values)

    def select(self, units: list[str]) -> np.ndarray:
        """Rows for the given units, in that order."""
        index = {name: row for row, name in enumerate(self.units)}
        return self.values[[index[name] for name in units]]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable cohort assembled from responses, embeddings and biomarkers."""

    drugs: tuple[str, ...]
    units: tuple[str, ...]
    responses: ResponseMatrix
    features: FeatureTable
    biomarkers: BiomarkerTable
    sorted_scores: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Check coverage and precompute the per-drug sorted score arrays."""
        if len(self.drugs) < 2:
            raise CohortValidationError(f"need at least 2 drugs, got {len(self.drugs)}")
        if len(set(self.drugs)) != len(self.drugs):
            raise CohortValidationError("duplicate drug names")
        if self.responses.scores.shape != (len(self.units), len(self.drugs)):
            raise CohortValidationError("response matrix does not match units x drugs")
        if self.features.units != self.units or self.biomarkers.units != self.units:
            raise CohortValidationError("tables do not cover the same units in order")
        ordered = np.sort(self.responses.scores, axis=0)
        ordered.setflags(write=False)
        object.__setattr__(self, "sorted_scores", ordered)
        object.__setattr__(self, "_drug_index", {d: i for i, d in enumerate(self.drugs)})

    @classmethod
    def from_scores(
        cls,
        scores: np.ndarray,
        *,
        drugs: list[str] | None = None,
        features: np.ndarray | None = None,
        flags: dict[str, list[int]] | None = None,
    ) -> Dataset:
        """Build a dataset straight from a score matrix (no normalization)."""
        scores = np.asarray(scores, dtype=np.float64)
        n, k = scores.shape
        units = tuple(f"U{i:05d}" for i in range(n))
        drugs = drugs or [f"D{j}" for j in range(k)]
        if features is None:
            features = np.zeros((n, 1))
        flags = flags or {}
        flag_values = (
            np.array([flags[name] for name in flags], dtype=np.int8).T
            if flags
            else np.zeros((n, 0), dtype=np.int8)
        )
        return cls(
            drugs=tuple(drugs),
            units=units,
            responses=ResponseMatrix(scores),
            features=FeatureTable(units, features),
            biomarkers=BiomarkerTable(units, tuple(flags), flag_values),
        )

    @property
    def num_units(self) -> int:
        """Number of units (n)."""
        return len(self.units)

    @property
    def num_drugs(self) -> int:
        """Number of drugs (k)."""
        return len(self.drugs)

    @property
    def scores(self) -> np.ndarray:
        """The frozen response-score matrix."""
        return self.responses.scores

    def drug_id(self, name: str) -> DrugId:
        """Look up a drug index by name."""
        try:
            return DrugId(self._drug_index[name])
        except KeyError:
            raise KeyError(f"unknown drug {name!r}") from None

    def score(self, unit: UnitId, drug: DrugId) -> float:
        """Response score of one unit under one drug."""
        return float(self.responses.scores[unit, drug])

    def embedding(self, unit: UnitId) -> np.ndarray:
        """Embedding row of a unit."""
        return self.features.values[unit]

    def active_flags(self, unit: UnitId) -> frozenset[str]:
        """Names of biomarker flags set for a unit."""
        row = self.biomarkers.values[unit]
        return frozenset(
            name for name, value in zip(self.biomarkers.flags, row, strict=True) if value
        )


def normalize_scores(raw: RawResponseTable) -> ResponseMatrix:
    """Turn IC50 values into median-centered log response scores.

    Rows are the table's units and columns its drugs, both sorted by name.
    score(u, d) = ln IC50(u, d) - median_u ln IC50(., d).
    """
    frame = raw.frame
    bad = frame[~(frame[CSV_IC50] > 0.0)]
    if not bad.empty:
        listed = ", ".join(
            f"({row[CSV_UNIT]}, {row[CSV_DRUG]}, {row[CSV_IC50]})"
            for _, row in bad.head(5).iterrows()
        )
        raise CohortValidationError(
            f"{len(bad)} non-positive IC50 value(s), first: {listed}"
        )
    wide = frame.pivot(index=CSV_UNIT, columns=CSV_DRUG, values=CSV_IC50)
    wide = wide.reindex(index=raw.units, columns=raw.drugs)
    if wide.isna().to_numpy().any():
        missing = wide.index[wide.isna().any(axis=1)].tolist()
        raise CohortValidationError(f"units without a complete response set: {missing[:5]}")
    log_ic50 = np.log(wide.to_numpy(dtype=np.float64))
    return ResponseMatrix(log_ic50 - np.median(log_ic50, axis=0))


def assemble_dataset(
    raw: RawResponseTable, feats: FeatureTable, flags: BiomarkerTable
) -> Dataset:
    """Assemble a dataset from the three cohort tables.

    Units missing any drug response are dropped with a warning; complete
    units that lack features or biomarker flags are an error.
    """
    folded: dict[str, str] = {}
    for drug in raw.drugs:
        key = drug.strip().casefold()
        if key in folded:
            raise CohortValidationError(
                f"duplicate drug names {folded[key]!r} and {drug!r}"
            )
        folded[key] = drug
    complete = raw.complete_units()
    dropped = sorted(set(raw.units) - set(complete))
    for unit in dropped:
        _LOGGER.warning("Dropping unit %s: incomplete drug responses", unit)
    if not complete:
        raise CohortValidationError("no unit has a complete response set")
    for table, label in ((feats, "features"), (flags, "biomarkers")):
        covered = set(table.units)
        missing = [unit for unit in complete if unit not in covered]
        if missing:
            raise CohortValidationError(
                f"unit {missing[0]!r} has responses but no {label}"
                + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else "")
            )
    extra = set(feats.units) - set(complete)
    if extra:
        _LOGGER.debug("Ignoring %s feature rows without complete responses", len(extra))
    if feats.width != DEFAULT_EMBEDDING_WIDTH:
        _LOGGER.info(
            "Embedding width is %s rather than %s; contexts adapt",
            feats.width,
            DEFAULT_EMBEDDING_WIDTH,
        )
    responses = normalize_scores(raw.restrict(complete))
    dataset = Dataset(
        drugs=tuple(raw.drugs),
        units=tuple(complete),
        responses=responses,
        features=FeatureTable(
            tuple(complete),
            feats.select(complete),
            feats.provenance,
            feats.explained_variance,
        ),
        biomarkers=BiomarkerTable(tuple(complete), flags.flags, flags.select(complete)),
    )
    _LOGGER.info(
        "Assembled dataset with %s units, %s drugs, %s features, %s flags",
        dataset.num_units,
        dataset.num_drugs,
        feats.width,
        len(flags.flags),
    )
    return dataset


def percentile_of(dataset: Dataset, drug: DrugId, score: float) -> float:
    """Fraction of units whose score for ``drug`` is at least ``score``.

    Strong responses (low scores) map to high values. Observed scores always
    give a value >= 1/n.
    """
    column = dataset.sorted_scores[:, drug]
    below = int(np.searchsorted(column, score, side="left"))
    return (column.shape[0] - below) / column.shape[0]


def pca_reduce(feats: FeatureTable, dim: int) -> FeatureTable:
    """Project features onto their top ``dim`` principal components.

    Fallback reducer for synthetic data. Component signs are fixed so the
    largest-magnitude loading of every component is positive, which makes
    the projection deterministic and idempotent.
    """
    if dim > feats.width:
        raise ValueError(f"cannot reduce {feats.width} features to {dim} dimensions")
    if dim < 1:
        raise ValueError("dim must be at least 1")
    centered = feats.values - feats.values.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    pivots = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(vt.shape[0]), pivots])
    signs[signs == 0] = 1.0
    components = vt[:dim] * signs[:dim, None]
    dof = max(centered.shape[0] - 1, 1)
    return FeatureTable(
        feats.units,
        centered @ components.T,
        provenance=f"principal components ({dim}) of {feats.provenance}",
        explained_variance=singular[:dim] ** 2 / dof,
    )


def _read_csv(path: Path) -> pd.DataFrame:
    """Read a CSV as strings, translating pandas failures into located errors."""
    try:
        return pd.read_csv(
            path, dtype=str, keep_default_na=False, encoding="utf-8", skipinitialspace=True
        )
    except pd.errors.EmptyDataError as err:
        raise CohortParseError(path, 1, 1, "file is empty") from err
    except pd.errors.ParserError as err:
        match = _PANDAS_LINE.search(str(err))
        line = int(match.group(1)) if match else 0
        raise CohortParseError(path, line, 0, str(err)) from err
    except UnicodeDecodeError as err:
        raise CohortParseError(path, 0, 0, f"not UTF-8: {err}") from err


def _numeric_column(frame: pd.DataFrame, column: str, path: Path) -> np.ndarray:
    """Convert one column to floats, naming the first bad cell."""
    position = frame.columns.get_loc(column) + 1
    converted = pd.to_numeric(frame[column], errors="coerce")
    bad = converted.isna() | ~np.isfinite(converted.fillna(0.0))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise CohortParseError(
            path,
            row + 2,
            position,
            f"column {column!r}: expected a number, got {frame[column].iloc[row]!r}",
        )
    return converted.to_numpy(dtype=np.float64)


def _check_header(frame: pd.DataFrame, expected: list[str], path: Path) -> None:
    """Check the leading header fields."""
    header = list(frame.columns)
    for position, name in enumerate(expected, start=1):
        if len(header) < position or header[position - 1] != name:
            found = header[position - 1] if len(header) >= position else None
            raise CohortParseError(
                path, 1, position, f"expected header field {name!r}, found {found!r}"
            )


def _check_units(frame: pd.DataFrame, path: Path) -> None:
    """Reject empty or repeated unit names."""
    units = frame[CSV_UNIT]
    for row, value in enumerate(units):
        if not value:
            raise CohortParseError(path, row + 2, 1, "empty unit name")
    repeated = units.duplicated()
    if repeated.any():
        row = int(np.flatnonzero(repeated.to_numpy())[0])
        raise CohortParseError(path, row + 2, 1, f"unit {units.iloc[row]!r} repeated")


def read_responses(path: Path | str) -> RawResponseTable:
    """Parse ``unit,drug,ic50`` rows."""
    path = Path(path)
    frame = _read_csv(path)
    _check_header(frame, [CSV_UNIT, CSV_DRUG, CSV_IC50], path)
    for column, position in ((CSV_UNIT, 1), (CSV_DRUG, 2)):
        empty = frame[column] == ""
        if empty.any():
            row = int(np.flatnonzero(empty.to_numpy())[0])
            raise CohortParseError(path, row + 2, position, f"empty {column} name")
    ic50 = _numeric_column(frame, CSV_IC50, path)
    pairs = frame.duplicated(subset=[CSV_UNIT, CSV_DRUG])
    if pairs.any():
        row = int(np.flatnonzero(pairs.to_numpy())[0])
        raise CohortParseError(
            path,
            row + 2,
            2,
            f"duplicate response for ({frame[CSV_UNIT].iloc[row]}, {frame[CSV_DRUG].iloc[row]})",
        )
    _LOGGER.debug("Read %s response rows from %s", len(frame), path)
    return RawResponseTable(
        pd.DataFrame({CSV_UNIT: frame[CSV_UNIT], CSV_DRUG: frame[CSV_DRUG], CSV_IC50: ic50})
    )


def read_features(path: Path | str) -> FeatureTable:
    """Parse ``unit,f0,f1,...`` embedding rows."""
    path = Path(path)
    frame = _read_csv(path)
    _check_header(frame, [CSV_UNIT], path)
    if frame.shape[1] < 2:
        raise CohortParseError(path, 1, 2, "no feature columns")
    _check_units(frame, path)
    columns = [_numeric_column(frame, name, path) for name in frame.columns[1:]]
    return FeatureTable(tuple(frame[CSV_UNIT]), np.column_stack(columns))


def read_biomarkers(path: Path | str) -> BiomarkerTable:
    """Parse ``unit,<flag>,...`` rows of 0/1 cells."""
    path = Path(path)
    frame = _read_csv(path)
    _check_header(frame, [CSV_UNIT], path)
    _check_units(frame, path)
    for position, name in enumerate(frame.columns[1:], start=2):
        if not _BIOMARKER_KEY.match(name):
            raise CohortParseError(path, 1, position, f"invalid biomarker key {name!r}")
    columns = []
    for position, name in enumerate(frame.columns[1:], start=2):
        cells = frame[name]
        bad = ~cells.isin(["0", "1"])
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise CohortParseError(
                path, row + 2, position, f"flag {name!r}: expected 0 or 1, got {cells.iloc[row]!r}"
            )
        columns.append(cells.astype(np.int8).to_numpy())
    values = (
        np.column_stack(columns) if columns else np.zeros((len(frame), 0), dtype=np.int8)
    )
    return BiomarkerTable(tuple(frame[CSV_UNIT]), tuple(frame.columns[1:]), values)


def load_dataset(
    responses: Path | str, features: Path | str, biomarkers: Path | str
) -> Dataset:
    """Read the three cohort files and assemble a dataset."""
    return assemble_dataset(
        read_responses(responses), read_features(features), read_biomarkers(biomarkers)
    )


def cohort_frames(dataset: Dataset) -> dict[str, pd.DataFrame]:
    """Render a dataset as the three cohort CSV frames.

    IC50 values are written as exp(score), which re-ingests to the same scores.
    """
    units = list(dataset.units)
    responses = pd.DataFrame(
        {
            CSV_UNIT: np.repeat(units, dataset.num_drugs),
            CSV_DRUG: np.tile(list(dataset.drugs), dataset.num_units),
            CSV_IC50: np.exp(dataset.scores).reshape(-1),
        }
    )
    features = pd.DataFrame(
        dataset.features.values, columns=[f"f{i}" for i in range(dataset.features.width)]
    )
    features.insert(0, CSV_UNIT, units)
    biomarkers = pd.DataFrame(dataset.biomarkers.values, columns=list(dataset.biomarkers.flags))
    biomarkers.insert(0, CSV_UNIT, units)
    return {RESPONSES_FILE: responses, FEATURES_FILE: features, BIOMARKERS_FILE: biomarkers}


async def async_export_cohort(dataset: Dataset, directory: Path | str) -> list[Path]:
    """Write the three cohort CSVs into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, frame in cohort_frames(dataset).items():
        target = directory / name
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
        _LOGGER.debug("Writing %s rows to %s", len(frame), target)
        async with aiofiles.open(target, "w", encoding="utf-8") as fh:
            await fh.write(buffer.getvalue())
        written.append(target)
    return written
