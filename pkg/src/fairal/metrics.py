"""Dice and group-fairness metrics (disparity and equity-scaled performance)."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

from .volume import check_mask


class MissingGroup(ValueError):
    """A declared group has no scored cases."""


@dataclass(frozen=True, order=True)
class GroupId:
    id: int
    name: str

    def __post_init__(self):
        if int(self.id) != self.id or self.id < 0:
            raise ValueError(f"group id must be a nonnegative integer, got {self.id!r}")


G1 = GroupId(0, "G1")
G2 = GroupId(1, "G2")
DEFAULT_GROUPS = (G1, G2)


@dataclass(frozen=True)
class CaseScore:
    case_id: Hashable
    group: GroupId
    dice: float

    def __post_init__(self):
        if not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"dice must lie in [0, 1], got {self.dice}")


@dataclass(frozen=True)
class GroupPerformance:
    group: GroupId
    mean_dice: float
    count: int


@dataclass(frozen=True)
class FairnessReport:
    overall_dice: float
    per_group: tuple[GroupPerformance, ...]
    delta: float
    essp: float

    def group_dice(self, group: GroupId) -> float:
        for gp in self.per_group:
            if gp.group == group:
                return gp.mean_dice
        raise KeyError(group)


def dice(pred: np.ndarray, truth: np.ndarray) -> float:
    """2|A∩B| / (|A|+|B|). Two empty masks agree perfectly and score 1.0."""
    a = check_mask(pred)
    b = check_mask(truth)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def group_means(
    scores: Iterable[CaseScore], groups: Sequence[GroupId] | None = None
) -> list[GroupPerformance]:
    """Per-group mean dice, ordered by group id.

    If ``groups`` is given, every one of them must have at least one score;
    otherwise the groups present in ``scores`` are used.
    """
    buckets: dict[GroupId, list[float]] = defaultdict(list)
    for s in scores:
        buckets[s.group].append(s.dice)
    wanted = sorted(groups) if groups is not None else sorted(buckets)
    out = []
    for g in wanted:
        vals = buckets.get(g)
        if not vals:
            raise MissingGroup(f"no scores for group {g.name}")
        out.append(GroupPerformance(g, float(np.mean(vals)), len(vals)))
    return out


def delta(overall: float, per_group: Sequence[GroupPerformance]) -> float:
    return float(sum(abs(overall - gp.mean_dice) for gp in per_group))


def essp(overall: float, delta_value: float) -> float:
    if delta_value < 0:
        raise ValueError("delta must be nonnegative")
    return overall / (1.0 + delta_value)


def fairness_report(
    scores: Sequence[CaseScore], groups: Sequence[GroupId] | None = None
) -> FairnessReport:
    scores = list(scores)
    if not scores:
        raise ValueError("fairness_report needs at least one case score")
    # pooled over cases, not the mean of group means
    overall = float(np.mean([s.dice for s in scores]))
    per_group = group_means(scores, groups)
    d = delta(overall, per_group)
    return FairnessReport(overall, tuple(per_group), d, essp(overall, d))
