"""Helper functions when executing pytest."""

import logging

import pytest

from oncobandit.synthetic import planted_rules, synthesize_dataset

from .utils import dataset_from_dump, get_cohort_dump, rules_from_dump, write_cohort_csvs


@pytest.fixture
def tiny_dump():
    """Five cell lines, seven drugs and an illustrative protocol."""
    return get_cohort_dump("tiny-cohort.json")


@pytest.fixture
def tiny_dataset(tiny_dump):
    """Dataset assembled from the tiny cohort."""
    return dataset_from_dump(tiny_dump)


@pytest.fixture
def tiny_rules(tiny_dump):
    """Rule set of the tiny cohort."""
    return rules_from_dump(tiny_dump)


@pytest.fixture
def tiny_files(tmp_path, tiny_dump):
    """The tiny cohort written out as CSVs and a rule file."""
    return write_cohort_csvs(tiny_dump, tmp_path / "cohort")


@pytest.fixture(scope="session")
def planted():
    """A 500 x 7 planted-signal cohort with 20 features: (dataset, rules, truth)."""
    rules = planted_rules(7)
    dataset, truth = synthesize_dataset(500, 7, 20, rules, seed=11)
    return dataset, rules, truth


@pytest.fixture(autouse=True)
def set_debug_mode(caplog):
    """Ensure all tests run in debug."""
    # Force capture of all debug logging. This is useful if you want to verify
    # log messages with `<message> in caplog.text`. If you run
    # pytest -rP it will display all log messages, including passing tests.
    caplog.set_level(logging.DEBUG)
