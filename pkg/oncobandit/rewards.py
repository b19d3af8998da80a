"""Reward metrics, per-unit optimal actions and regret accounting.

All three kinds are maximized: the diff reward is the negated gap to the
unit's best score, the rank reward gives k to the strongest response and
the percentile reward is high for strong responses within a drug's
distribution.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .core import DrugId, RewardKind, RewardValue, UnitId
from .ingest import Dataset

__all__ = [
    "RewardKind",
    "compute_reward",
    "instant_regret",
    "optimal_action",
    "reward_table",
    "unit_rewards",
]


def unit_rewards(ds: Dataset, unit: UnitId, kind: RewardKind) -> np.ndarray:
    """Rewards of every drug for one unit."""
    row = ds.scores[unit]
    if kind is RewardKind.DIFF_BEST:
        return -(row - row.min())
    if kind is RewardKind.RANK:
        # rankdata ranks ascending with tied positions averaged
        return ds.num_drugs + 1.0 - rankdata(row, method="average")
    sorted_scores = ds.sorted_scores
    n = sorted_scores.shape[0]
    below = np.array(
        [
            np.searchsorted(sorted_scores[:, drug], row[drug], side="left")
            for drug in range(ds.num_drugs)
        ]
    )
    return (n - below) / n


def reward_table(ds: Dataset, kind: RewardKind) -> np.ndarray:
    """Rewards for every (unit, drug) pair, shape (n, k)."""
    return np.vstack([unit_rewards(ds, UnitId(unit), kind) for unit in range(ds.num_units)])


def compute_reward(ds: Dataset, unit: UnitId, drug: DrugId, kind: RewardKind) -> RewardValue:
    """Reward for giving ``drug`` to ``unit``."""
    return RewardValue(
        float(unit_rewards(ds, unit, kind)[drug]), kind, num_drugs=ds.num_drugs
    )


def optimal_action(ds: Dataset, unit: UnitId, kind: RewardKind) -> DrugId:
    """Drug with the highest reward for a unit; ties go to the lowest index."""
    return DrugId(int(np.argmax(unit_rewards(ds, unit, kind))))


def instant_regret(ds: Dataset, unit: UnitId, chosen: DrugId, kind: RewardKind) -> float:
    """Reward of the optimal action minus reward of ``chosen``; never negative."""
    rewards = unit_rewards(ds, unit, kind)
    return float(rewards[np.argmax(rewards)] - rewards[chosen])
