"""Gain-driven tool selection and multi-trajectory synthesis for SFT data.

Stage 1 drops samples no model gets right (``Rejected``) and ranks the tools
that beat both the tool-free baseline and the validity threshold. Stage 2
expands the ranking into the no-tool path, every single-tool path, and every
ranked prefix of length two or more, after top-K truncation.
"""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .core import (
    TOOL_ORDER,
    BoundingBox,
    ForensicsError,
    Label,
    RasterImage,
    RawBox,
    ToolId,
    clamp_box,
)
from .files import load_image, read_jsonl, save_image, save_map, write_jsonl
from .manifest import ManifestEntry, ManifestMismatch
from .parser import Role, ToolCall, Trajectory, Turn, format_answer, trajectory_to_record
from .toolbox import run_tool

log = logging.getLogger(__name__)

USER_PROMPT = (
    "Determine if this image is real or fake. "
    "If manipulation is found, highlight the tampered regions with bounding boxes."
)

ZOOM_MARGIN = 0.10


class MissingGtBox(ForensicsError):
    pass


@dataclass(frozen=True)
class SampleScoreRecord:
    sample_id: str
    label: Label
    p_base: float
    tool_scores: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "label", Label.parse(self.label))
        scores = {ToolId.parse(k): float(v) for k, v in dict(self.tool_scores).items()}
        for v in [self.p_base, *scores.values()]:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{self.sample_id}: score {v} outside [0, 1]")
        object.__setattr__(self, "p_base", float(self.p_base))
        object.__setattr__(self, "tool_scores", scores)

    @classmethod
    def from_record(cls, rec: dict) -> "SampleScoreRecord":
        return cls(str(rec["sample_id"]), rec["label"], rec["p_base"], rec.get("tools", {}))


@dataclass(frozen=True)
class SelectionConfig:
    tau: float = 0.5
    k_fake: int = 4
    k_real: int = 2

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if self.k_fake < 0 or self.k_real < 0:
            raise ValueError("truncation values must be >= 0")

    def k_for(self, label: Label) -> int:
        return self.k_fake if Label.parse(label) is Label.FAKE else self.k_real


@dataclass(frozen=True)
class Rejected:
    sample_id: str = ""


@dataclass(frozen=True)
class Ranked:
    tools: tuple[ToolId, ...] = ()


SelectionOutcome = Union[Rejected, Ranked]


@dataclass(frozen=True)
class TrajectoryPlan:
    sample_id: str
    paths: tuple[tuple[ToolId, ...], ...]


def select_and_rank(rec: SampleScoreRecord, cfg: SelectionConfig = SelectionConfig()) -> SelectionOutcome:
    scores = rec.tool_scores
    p_max = max([rec.p_base, *scores.values()])
    if p_max < cfg.tau:
        return Rejected(rec.sample_id)
    bar = max(rec.p_base, cfg.tau)
    chosen = [t for t in TOOL_ORDER if t in scores and scores[t] > bar]
    # stable sort: equal scores keep the fixed tool order
    chosen.sort(key=lambda t: -scores[t])
    return Ranked(tuple(chosen))


def synthesize_paths(outcome: Ranked, label: Label, cfg: SelectionConfig = SelectionConfig(),
                     sample_id: str = "") -> TrajectoryPlan:
    if not isinstance(outcome, Ranked):
        raise TypeError("only ranked samples can be expanded into trajectories")
    top = outcome.tools[: cfg.k_for(label)]
    paths: list[tuple[ToolId, ...]] = [()]
    paths += [(t,) for t in top]
    paths += [top[:k] for k in range(2, len(top) + 1)]
    return TrajectoryPlan(sample_id, tuple(paths))


def zoom_box(width: int, height: int, gt_boxes: Iterable[BoundingBox]) -> BoundingBox:
    """Union of the ground-truth boxes grown by 10% of its size on every side.

    Without ground-truth boxes (authentic images) the whole frame is used.
    """
    gt_boxes = list(gt_boxes)
    if not gt_boxes:
        return BoundingBox(0, 0, width, height)
    x1 = min(b.x1 for b in gt_boxes)
    y1 = min(b.y1 for b in gt_boxes)
    x2 = max(b.x2 for b in gt_boxes)
    y2 = max(b.y2 for b in gt_boxes)
    mx = -(-(x2 - x1) // 10)
    my = -(-(y2 - y1) // 10)
    return clamp_box(RawBox(x1 - mx, y1 - my, x2 + mx, y2 + my), width, height)


@dataclass
class Sample:
    sample_id: str
    image_ref: str
    image: RasterImage
    label: Label
    gt_boxes: tuple[BoundingBox, ...] = ()


class ToolRenderer:
    """Runs tools on a sample once and hands back the stored output path.

    ``ref_base`` is the folder that recorded paths are made relative to, so a
    corpus can be moved together with its tool outputs.
    """

    def __init__(self, out_dir, ref_base=None, tool_args: Optional[Callable] = None):
        self.out_dir = Path(out_dir)
        self.ref_base = Path(ref_base) if ref_base is not None else None
        self.tool_args = tool_args or default_tool_args
        self._cache: dict[tuple[str, ToolId], str] = {}

    def __call__(self, tool: ToolId, sample: Sample) -> tuple[dict, str]:
        args = self.tool_args(tool, sample)
        key = (sample.sample_id, tool)
        if key not in self._cache:
            out = run_tool(tool, sample.image, args)
            path = self.out_dir / f"{_safe(sample.sample_id)}_{tool.value}.png"
            if tool is ToolId.ZOOM_IN:
                save_image(out.map, path)
            else:
                save_map(out.map, path)
            ref = os.path.relpath(path, self.ref_base) if self.ref_base else str(path)
            self._cache[key] = Path(ref).as_posix()
        return args, self._cache[key]


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def default_tool_args(tool: ToolId, sample: Sample) -> dict:
    if tool is ToolId.ZOOM_IN:
        box = zoom_box(sample.image.width, sample.image.height, sample.gt_boxes)
        return {"bbox": box.as_list()}
    return {}


def materialize_trajectory(path: Iterable[ToolId], sample: Sample, render: ToolRenderer,
                           trajectory_id: Optional[str] = None) -> Trajectory:
    if sample.label is Label.FAKE and not sample.gt_boxes:
        raise MissingGtBox(f"{sample.sample_id}: fake sample without ground-truth boxes")
    turns = [Turn(Role.USER, USER_PROMPT, (sample.image_ref,))]
    for tool in path:
        tool = ToolId.parse(tool)
        args, ref = render(tool, sample)
        turns.append(Turn(Role.ASSISTANT, "", (), (ToolCall(tool, args),)))
        turns.append(Turn(Role.TOOL, "", (ref,)))
    turns.append(Turn(Role.ASSISTANT, format_answer(sample.label, sample.gt_boxes)))
    return Trajectory(trajectory_id or sample.sample_id, tuple(turns))


@dataclass
class BuildReport:
    kept: int = 0
    rejected: int = 0
    unscored: int = 0
    trajectories_real: int = 0
    trajectories_fake: int = 0
    tool_usage: dict = field(default_factory=lambda: {"real": {}, "fake": {}})
    chain_lengths: dict = field(default_factory=lambda: {"real": {}, "fake": {}})

    def record(self, label: Label, plan: TrajectoryPlan) -> None:
        key = label.value
        if label is Label.FAKE:
            self.trajectories_fake += len(plan.paths)
        else:
            self.trajectories_real += len(plan.paths)
        usage = Counter(self.tool_usage[key])
        lengths = Counter(self.chain_lengths[key])
        for p in plan.paths:
            usage.update(t.value for t in p)
            lengths[str(len(p))] += 1
        self.tool_usage[key] = {t.value: usage[t.value] for t in TOOL_ORDER if usage[t.value]}
        self.chain_lengths[key] = dict(sorted(lengths.items(), key=lambda kv: int(kv[0])))

    def to_dict(self) -> dict:
        return {
            "kept": self.kept,
            "rejected": self.rejected,
            "unscored": self.unscored,
            "trajectories_real": self.trajectories_real,
            "trajectories_fake": self.trajectories_fake,
            "tool_usage": self.tool_usage,
            "chain_lengths": self.chain_lengths,
        }


def load_scores(path) -> list[SampleScoreRecord]:
    out = []
    for lineno, rec in read_jsonl(path):
        try:
            out.append(SampleScoreRecord.from_record(rec))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestMismatch(f"{path}:{lineno}: bad score record ({exc})") from exc
    return out


def build_corpus(scores: Iterable[SampleScoreRecord], manifest: dict[str, ManifestEntry],
                 out_path, cfg: SelectionConfig = SelectionConfig(), tool_dir=None) -> BuildReport:
    """Run both stages for every scored sample and write the trajectory JSONL.

    Output order follows the manifest, whatever order the scores arrive in.
    Tool outputs go to ``tool_dir`` (default: ``<out stem>_tools`` next to the
    corpus) and are referenced relative to the corpus file.
    """
    out_path = Path(out_path)
    by_id: dict[str, SampleScoreRecord] = {}
    for rec in scores:
        if rec.sample_id not in manifest:
            raise ManifestMismatch(f"score record {rec.sample_id!r} has no manifest entry")
        if rec.label is not manifest[rec.sample_id].label:
            raise ManifestMismatch(f"{rec.sample_id}: label differs between scores and manifest")
        if rec.sample_id in by_id:
            raise ManifestMismatch(f"duplicate score record {rec.sample_id!r}")
        by_id[rec.sample_id] = rec

    tool_dir = Path(tool_dir) if tool_dir is not None else out_path.with_name(out_path.stem + "_tools")
    render = ToolRenderer(tool_dir, ref_base=out_path.parent)
    report = BuildReport()

    def records():
        for sid, entry in manifest.items():
            rec = by_id.get(sid)
            if rec is None:
                report.unscored += 1
                continue
            outcome = select_and_rank(rec, cfg)
            if isinstance(outcome, Rejected):
                report.rejected += 1
                continue
            report.kept += 1
            plan = synthesize_paths(outcome, entry.label, cfg, sid)
            report.record(entry.label, plan)
            sample = Sample(sid, entry.image, load_image(entry.image_path), entry.label, entry.gt_boxes())
            for i, path in enumerate(plan.paths):
                traj = materialize_trajectory(path, sample, render, f"{sid}#{i}")
                yield trajectory_to_record(traj)

    n = write_jsonl(out_path, records())
    log.info("wrote %d trajectories to %s", n, out_path)
    return report


def write_report(report: BuildReport, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
