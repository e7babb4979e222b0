"""Rollout rewards (classification, localization, tool utility) and group advantages."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .assignment import linear_assignment
from .core import BoundingBox, ForensicsError, Label, box_iou_exact
from .parser import ParsedAnswer


class EmptyGroundTruth(ForensicsError):
    pass


class EmptyGroup(ForensicsError):
    pass


DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class RewardWeights:
    lambda_cls: float = 1.0
    lambda_loc: float = 2.0
    lambda_tool: float = 0.5

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_loc, self.lambda_tool) < 0:
            raise ValueError("reward weights must be non-negative")


@dataclass(frozen=True)
class RewardBreakdown:
    r_cls: float
    r_loc: float
    r_tool: float
    r_total: float
    hungarian_iou: Optional[float] = None


@dataclass(frozen=True)
class GroundTruth:
    label: Label
    boxes: tuple[BoundingBox, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "label", Label.parse(self.label))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.label is Label.FAKE and not self.boxes:
            raise EmptyGroundTruth("a fake sample needs at least one ground-truth box")


@dataclass(frozen=True)
class GroupSample:
    completion: ParsedAnswer
    ground_truth: GroundTruth


def hungarian_iou_exact(pred: Sequence[BoundingBox], gt: Sequence[BoundingBox]) -> Fraction:
    if not gt:
        raise EmptyGroundTruth("hungarian_iou needs at least one ground-truth box")
    if not pred:
        return Fraction(0)
    ious = [[box_iou_exact(p, g) for g in gt] for p in pred]
    cost = [[1 - v for v in row] for row in ious]
    pairs = linear_assignment(cost, pad_value=Fraction(1))
    return sum((ious[i][j] for i, j in pairs), Fraction(0)) / len(pairs)


def hungarian_iou(pred: Sequence[BoundingBox], gt: Sequence[BoundingBox]) -> float:
    """Mean IoU over an optimal one-to-one matching of predicted to ground-truth boxes.

    Only the ``min(len(pred), len(gt))`` matched pairs enter the mean; surplus
    boxes on either side are ignored. An empty prediction scores 0.
    """
    return float(hungarian_iou_exact(pred, gt))


def r_cls(pred: ParsedAnswer, gt_label: Label) -> int:
    gt_label = Label.parse(gt_label)
    if pred.label is not gt_label:
        return 0
    if gt_label is Label.REAL:
        return 1
    return int(len(pred.boxes) > 0)


def r_loc(pred: ParsedAnswer, gt: GroundTruth) -> float:
    if gt.label is Label.REAL:
        return 0.0
    return hungarian_iou(pred.boxes, gt.boxes)


def r_tool(tool_used: bool, gt_label: Label, r_cls_value: int, h_iou: float, tau_iou: float = 0.5) -> int:
    if not tool_used:
        return 0
    if Label.parse(gt_label) is Label.REAL:
        return int(r_cls_value)
    return int(h_iou > tau_iou)


def r_total(r_cls_value: float, r_loc_value: float, r_tool_value: float,
            weights: RewardWeights = RewardWeights()) -> float:
    return (
        weights.lambda_cls * r_cls_value
        + weights.lambda_loc * r_loc_value
        + weights.lambda_tool * r_tool_value
    )


def score(pred: ParsedAnswer, gt: GroundTruth, weights: RewardWeights = RewardWeights(),
          tau_iou: float = 0.5) -> RewardBreakdown:
    cls = r_cls(pred, gt.label)
    h_iou = None if gt.label is Label.REAL else hungarian_iou(pred.boxes, gt.boxes)
    loc = 0.0 if h_iou is None else h_iou
    tool = r_tool(pred.tool_used, gt.label, cls, loc, tau_iou)
    return RewardBreakdown(cls, loc, tool, r_total(cls, loc, tool, weights), h_iou)


def grpo_advantages(rewards: Sequence[float]) -> list[float]:
    """Group z-scores ``(R_i - mean) / std`` with the population std.

    A group whose std is below 1e-12 carries no signal and gets all-zero advantages.
    """
    n = len(rewards)
    if n == 0:
        raise EmptyGroup("cannot normalize an empty group")
    mean = math.fsum(rewards) / n
    std = math.sqrt(math.fsum((r - mean) ** 2 for r in rewards) / n)
    if std < DEGENERATE_STD:
        return [0.0] * n
    return [(r - mean) / std for r in rewards]


def score_group(samples: Sequence[GroupSample], weights: RewardWeights = RewardWeights(),
                tau_iou: float = 0.5) -> list[tuple[RewardBreakdown, float]]:
    truths = {s.ground_truth for s in samples}
    if len(truths) > 1:
        raise ValueError("all samples of a group must share one ground truth")
    breakdowns = [score(s.completion, s.ground_truth, weights, tau_iou) for s in samples]
    advantages = grpo_advantages([b.r_total for b in breakdowns])
    return list(zip(breakdowns, advantages))
