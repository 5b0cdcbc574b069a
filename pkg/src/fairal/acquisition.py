"""Acquisition strategies for pool-based active learning on segmentation volumes.

Four strategies are available:

* ``RANDOM``: seeded uniform scores.
* ``MEAN_ENTROPY``: voxel entropy averaged over the whole volume.
* ``LOCALIZED_ENTROPY``: voxel entropy averaged over a dilated predicted ROI.
* ``WEIGHTED_LOCALIZED_ENTROPY``: localized entropy multiplied by a softmax
  weight that grows as the candidate's group segments worse on the labeled set.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, NamedTuple, Sequence

import numpy as np
from scipy.special import softmax

from .metrics import CaseScore, GroupId, group_means
from .volume import bernoulli_entropy_map, dilate, masked_mean, threshold

SIGMA_FLOOR = 1e-9


class StrategyKind(str, enum.Enum):
    RANDOM = "random"
    MEAN_ENTROPY = "mean_entropy"
    LOCALIZED_ENTROPY = "localized_entropy"
    WEIGHTED_LOCALIZED_ENTROPY = "weighted_localized_entropy"

    @classmethod
    def parse(cls, value: "str | StrategyKind") -> "StrategyKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown strategy {value!r}; expected one of {choices}") from None


class BudgetExceedsPool(ValueError):
    pass


class RegionEntropy(NamedTuple):
    entropy: float
    region_size: int
    fallback: bool


@dataclass(frozen=True)
class GroupWeightTable:
    groups: tuple[GroupId, ...]
    z: tuple[float, ...]
    w: tuple[float, ...]

    def weight(self, group: GroupId) -> float:
        return self.w[self.groups.index(group)]

    def as_dict(self) -> dict[str, float]:
        return {g.name: w for g, w in zip(self.groups, self.w)}


@dataclass(frozen=True)
class AcquisitionScore:
    case_id: Hashable
    group: GroupId
    strategy: StrategyKind
    raw_entropy: float
    region_size: int
    weight_applied: float
    score: float
    fallback_used: bool = False


def compute_localized_entropy(
    probs: np.ndarray, dilation_radius: int = 2, threshold_value: float = 0.5
) -> RegionEntropy:
    """Mean voxel entropy inside the dilated predicted foreground.

    An empty prediction falls back to the whole-volume mean so that an
    untrained model can still rank candidates; ``fallback`` reports it.
    """
    h = bernoulli_entropy_map(probs)
    region = dilate(threshold(probs, threshold_value), dilation_radius)
    n = int(region.sum())
    if n == 0:
        return RegionEntropy(float(h.mean()), h.size, True)
    return RegionEntropy(masked_mean(h, region), n, False)


def compute_group_weights(
    labeled_scores: Sequence[CaseScore], groups: Sequence[GroupId] | None = None
) -> GroupWeightTable:
    """Softmax of standardized dice deficits per group.

    ``z_g = (mean_all - mean_g) / sigma_all`` with the pooled mean and the
    population standard deviation over all labeled cases. A spread below
    ``SIGMA_FLOOR`` yields uniform weights.
    """
    per_group = group_means(labeled_scores, groups)
    dices = np.array([s.dice for s in labeled_scores], dtype=float)
    mean_all = float(dices.mean())
    sigma_all = float(dices.std(ddof=0))
    if sigma_all < SIGMA_FLOOR:
        z = np.zeros(len(per_group))
    else:
        z = np.array([(mean_all - gp.mean_dice) / sigma_all for gp in per_group])
    w = softmax(z)
    return GroupWeightTable(
        tuple(gp.group for gp in per_group),
        tuple(float(v) for v in z),
        tuple(float(v) for v in w),
    )


def score_candidates(
    strategy: StrategyKind | str,
    pool: Sequence[tuple[Hashable, GroupId, np.ndarray]],
    weights: GroupWeightTable | None = None,
    rng_seed: int | Sequence[int] | None = None,
    *,
    dilation_radius: int = 2,
    threshold_value: float = 0.5,
) -> list[AcquisitionScore]:
    strategy = StrategyKind.parse(strategy)
    weighted = strategy is StrategyKind.WEIGHTED_LOCALIZED_ENTROPY
    if weighted and weights is None:
        raise ValueError("weighted_localized_entropy requires a GroupWeightTable")
    if not weighted and weights is not None:
        raise ValueError(f"group weights are only valid for the weighted strategy, not {strategy.value}")

    if strategy is StrategyKind.RANDOM:
        if rng_seed is None:
            raise ValueError("random strategy requires rng_seed")
        rng = np.random.default_rng(rng_seed)
        # draws are assigned in case_id order so pool ordering cannot change them
        order = sorted(range(len(pool)), key=lambda i: pool[i][0])
        draws = rng.random(len(pool))
        by_index = {i: float(d) for i, d in zip(order, draws)}
        return [
            AcquisitionScore(cid, g, strategy, by_index[i], 0, 1.0, by_index[i])
            for i, (cid, g, _) in enumerate(pool)
        ]

    out = []
    for cid, g, probs in pool:
        if strategy is StrategyKind.MEAN_ENTROPY:
            h = bernoulli_entropy_map(probs)
            out.append(AcquisitionScore(cid, g, strategy, float(h.mean()), h.size, 1.0, float(h.mean())))
            continue
        reg = compute_localized_entropy(probs, dilation_radius, threshold_value)
        w = weights.weight(g) if weighted else 1.0
        out.append(
            AcquisitionScore(cid, g, strategy, reg.entropy, reg.region_size, w, w * reg.entropy, reg.fallback)
        )
    return out


def select_batch(scores: Sequence[AcquisitionScore], b: int) -> list[Hashable]:
    """The ``b`` highest scores; equal scores go to the smaller case id."""
    if b < 1:
        raise ValueError(f"batch size must be positive, got {b}")
    if b > len(scores):
        raise BudgetExceedsPool(f"batch size {b} exceeds pool of {len(scores)}")
    ranked = sorted(scores, key=lambda s: s.case_id)
    ranked.sort(key=lambda s: s.score, reverse=True)
    return [s.case_id for s in ranked[:b]]


SCORE_DUMP_COLUMNS = (
    "case_id", "group", "strategy", "raw_entropy", "region_size",
    "weight_applied", "score", "fallback_used",
)


def write_score_dump(path: str | Path, scores: Sequence[AcquisitionScore]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_DUMP_COLUMNS)
        for s in scores:
            writer.writerow([
                s.case_id, s.group.name, s.strategy.value, repr(s.raw_entropy),
                s.region_size, repr(s.weight_applied), repr(s.score), int(s.fallback_used),
            ])
