"""Protocol rules, recommendation features and the clinical-guideline policy.

Rule files are line oriented::

    # comment
    RULE braf WHEN MUT:BRAF_V600E THEN Dabrafenib PRIORITY 1
    RULE her2 WHEN CNA:ERBB2_AMP AND MUT:PIK3CA_H1047R THEN Lapatinib PRIORITY 2
    DEFAULT Cisplatin
"""

from __future__ import annotations

from dataclasses import dataclass
import functools
import logging
import re
from typing import Any

import numpy as np
from parsimonious.exceptions import ParseError
from parsimonious.grammar import Grammar
from parsimonious.nodes import Node, NodeVisitor

from .const import BIOMARKER_KEY_PATTERN
from .core import DrugId, UnitId
from .errors import RuleBindingError, RuleParseError
from .ingest import Dataset

_LOGGER = logging.getLogger(__name__)

RULE_GRAMMAR = Grammar(
    rf"""
    line      = ws statement? ws comment?
    statement = rule / default
    rule      = "RULE" _ name _ "WHEN" _ predicate _ "THEN" _ drug _ "PRIORITY" _ integer
    default   = "DEFAULT" _ drug
    predicate = flag more_flag*
    more_flag = _ "AND" _ flag
    flag      = ~r"{BIOMARKER_KEY_PATTERN}"
    name      = ~r"[A-Za-z0-9_.\-]+"
    drug      = ~r"[^\s#]+"
    integer   = ~r"[0-9]+"
    comment   = ~r"#.*"
    _         = ~r"[ \t]+"
    ws        = ~r"[ \t]*"
    """
)

_PREDICATE_SEGMENT = re.compile(r"\bWHEN\b(.*?)(?:\bTHEN\b|$)")
_FLAG = re.compile(rf"^{BIOMARKER_KEY_PATTERN}$")


@dataclass(frozen=True)
class Rule:
    """One biomarker conjunction recommending one drug."""

    name: str
    predicate: tuple[str, ...]
    drug: str
    priority: int
    line: int = 0

    def fires(self, active: frozenset[str]) -> bool:
        """Whether every flag of the predicate is set."""
        return all(flag in active for flag in self.predicate)


@dataclass(frozen=True)
class RuleSet:
    """Ordered rules plus the mandatory fallback drug."""

    rules: tuple[Rule, ...]
    default_drug: str

    def __post_init__(self) -> None:
        """Reject duplicate rule names."""
        seen: set[str] = set()
        for rule in self.rules:
            if rule.name in seen:
                raise RuleParseError(rule.line, f"duplicate rule name {rule.name!r}")
            seen.add(rule.name)

    def bind(self, ds: Dataset) -> BoundRuleSet:
        """Resolve drug names against a dataset; cached per dataset."""
        return _bind(self, ds)

    def to_text(self) -> str:
        """Render the rule set in the rule-file grammar."""
        lines = [
            f"RULE {rule.name} WHEN {' AND '.join(rule.predicate)} "
            f"THEN {rule.drug} PRIORITY {rule.priority}"
            for rule in self.rules
        ]
        lines.append(f"DEFAULT {self.default_drug}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class BoundRuleSet:
    """A rule set whose drugs are resolved to dataset indices."""

    rule_set: RuleSet
    rule_drugs: tuple[DrugId, ...]
    default: DrugId

    def firing(self, ds: Dataset, unit: UnitId) -> list[int]:
        """Indices of the rules that fire for a unit, in file order."""
        active = ds.active_flags(unit)
        return [i for i, rule in enumerate(self.rule_set.rules) if rule.fires(active)]


@functools.lru_cache(maxsize=32)
def _bind(rs: RuleSet, ds: Dataset) -> BoundRuleSet:
    known = set(ds.drugs)
    for drug in (rs.default_drug, *(rule.drug for rule in rs.rules)):
        if drug not in known:
            raise RuleBindingError(f"rule drug {drug!r} is not in the dataset")
    flags = set(ds.biomarkers.flags)
    for rule in rs.rules:
        unknown = [flag for flag in rule.predicate if flag not in flags]
        if unknown:
            _LOGGER.warning(
                "Rule %s uses flags absent from the cohort and never fires: %s",
                rule.name,
                ", ".join(unknown),
            )
    return BoundRuleSet(
        rs,
        tuple(ds.drug_id(rule.drug) for rule in rs.rules),
        ds.drug_id(rs.default_drug),
    )


class _LineVisitor(NodeVisitor):
    """Turn one parsed line into a Rule, a default drug name, or None."""

    unwrapped_exceptions = (RuleParseError,)

    def __init__(self, line: int) -> None:
        """Remember the line number for error reports."""
        self.line = line

    def visit_line(self, node: Node, visited_children: list[Any]) -> Rule | tuple[str, str] | None:
        """Statement of the line; None for blank and comment-only lines."""
        _, statement, _, _ = visited_children
        return statement[0] if isinstance(statement, list) else None

    def visit_statement(self, node: Node, visited_children: list[Any]) -> Rule | tuple[str, str]:
        """The single rule or default alternative."""
        return visited_children[0]

    def visit_rule(self, node: Node, visited_children: list[Any]) -> Rule:
        """Build a rule; priorities start at 1."""
        (_, _, name, _, _, _, predicate, _, _, _, drug, _, _, _, priority) = visited_children
        if priority < 1:
            raise RuleParseError(self.line, f"rule {name!r}: priority must be >= 1")
        return Rule(name, predicate, drug, priority, self.line)

    def visit_default(self, node: Node, visited_children: list[Any]) -> tuple[str, str]:
        """Tagged default drug name."""
        return ("DEFAULT", visited_children[2])

    def visit_predicate(self, node: Node, visited_children: list[Any]) -> tuple[str, ...]:
        """Flags of an AND-joined predicate, in order."""
        first, more = visited_children
        rest = more if isinstance(more, list) else []
        return (first, *rest)

    def visit_more_flag(self, node: Node, visited_children: list[Any]) -> str:
        """Flag following an AND."""
        return visited_children[3]

    def visit_flag(self, node: Node, visited_children: list[Any]) -> str:
        """Biomarker flag text."""
        return node.text

    def visit_name(self, node: Node, visited_children: list[Any]) -> str:
        """Rule name text."""
        return node.text

    def visit_drug(self, node: Node, visited_children: list[Any]) -> str:
        """Drug name text."""
        return node.text

    def visit_integer(self, node: Node, visited_children: list[Any]) -> int:
        """Priority as an int."""
        return int(node.text)

    def generic_visit(self, node: Node, visited_children: list[Any]) -> list[Any] | Node:
        """Pass children through; leaves stay nodes."""
        return visited_children or node


def _diagnose(text: str, line: int) -> RuleParseError:
    """Build the most specific error for a line that failed to parse."""
    stripped = text.split("#", 1)[0].strip()
    if stripped.startswith("RULE"):
        segment = _PREDICATE_SEGMENT.search(stripped)
        if segment is None:
            return RuleParseError(line, "malformed rule: missing WHEN clause")
        parts = segment.group(1).split()
        well_formed = (
            len(parts) % 2 == 1
            and all(_FLAG.match(flag) for flag in parts[::2])
            and all(joiner == "AND" for joiner in parts[1::2])
        )
        if not well_formed:
            return RuleParseError(line, f"malformed predicate {segment.group(1).strip()!r}")
        return RuleParseError(line, f"malformed rule {stripped!r}")
    if stripped.startswith("DEFAULT"):
        return RuleParseError(line, f"malformed DEFAULT line {stripped!r}")
    return RuleParseError(line, f"unrecognized line {stripped!r}")


def parse_rules(text: str) -> RuleSet:
    """Parse a rule file, preserving rule order."""
    rules: list[Rule] = []
    default: str | None = None
    lines = text.splitlines()
    for number, raw in enumerate(lines, start=1):
        try:
            result = _LineVisitor(number).visit(RULE_GRAMMAR.parse(raw))
        except ParseError:
            raise _diagnose(raw, number) from None
        if result is None:
            continue
        if isinstance(result, Rule):
            if any(rule.name == result.name for rule in rules):
                raise RuleParseError(number, f"duplicate rule name {result.name!r}")
            rules.append(result)
        else:
            if default is not None:
                raise RuleParseError(number, "duplicate DEFAULT")
            default = result[1]
    if default is None:
        raise RuleParseError(len(lines) + 1, "missing DEFAULT")
    _LOGGER.debug("Parsed %s rules with default %s", len(rules), default)
    return RuleSet(tuple(rules), default)


def recommendation_vector(rs: RuleSet, ds: Dataset, unit: UnitId) -> np.ndarray:
    """Multi-hot vector of drugs recommended by firing rules.

    If no rule fires the vector is one-hot at the default drug.
    """
    bound = rs.bind(ds)
    vector = np.zeros(ds.num_drugs)
    firing = bound.firing(ds, unit)
    for index in firing:
        vector[bound.rule_drugs[index]] = 1.0
    if not firing:
        vector[bound.default] = 1.0
    return vector


def guideline_act(rs: RuleSet, ds: Dataset, unit: UnitId) -> DrugId:
    """Drug of the highest-priority firing rule, else the default drug.

    Equal priorities resolve by file order.
    """
    bound = rs.bind(ds)
    firing = bound.firing(ds, unit)
    if not firing:
        return bound.default
    chosen = min(firing, key=lambda i: (rs.rules[i].priority, i))
    return bound.rule_drugs[chosen]
