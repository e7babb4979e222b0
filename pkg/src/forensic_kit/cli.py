"""Command-line entry point: ``forensic-kit <command> ...``.

Every flag can also come from a JSON file passed with ``--config``; keys use
the flag's destination name (``--k-fake`` -> ``k_fake``). Flags given on the
command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .core import BoundingBox, DegenerateBox, ForensicsError, Label, RasterImage, ShapeMismatch
from .evalkit import (
    DegradeOp,
    DetectionRecord,
    binarize_map,
    box_fill_mask,
    degrade,
    detection_metrics,
    map_to_detection,
    mask_to_boxes,
    pixel_metrics,
    weighted_average,
)
from .files import (
    load_image,
    load_map,
    load_mask,
    read_jsonl,
    save_image,
    save_map,
    write_jsonl,
)
from .manifest import ManifestEntry, ManifestMismatch, load_manifest
from .parser import ParseError, parse_completion
from .rewards import GroundTruth, RewardWeights, grpo_advantages, hungarian_iou, score
from .toolbox import run_tool
from .trajectory import SelectionConfig, build_corpus, load_scores, write_report

log = logging.getLogger("forensic_kit")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


class CliError(ForensicsError):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=False))


# -- tool ---------------------------------------------------------------------------


def cmd_tool(args) -> int:
    img = load_image(args.input)
    tool_args = {}
    name = args.tool
    if name.upper() == "ELA":
        tool_args = {"quality": args.quality, "amplification": args.amplification}
    elif name.upper() == "FFT":
        tool_args = {"mode": args.mode, "block_size": args.block_size, "radial_cutoff": args.cutoff}
    elif name.upper() == "NPP" and args.npp_map:
        tool_args = {"external_map": args.npp_map}
    elif name.lower().replace("-", "_") == "zoom_in":
        if args.bbox is None:
            raise CliError("zoom_in requires --bbox x1,y1,x2,y2")
        tool_args = {"bbox": args.bbox, "min_side": args.min_side}
    out = run_tool(name, img, tool_args)
    if isinstance(out.map, RasterImage):
        save_image(out.map, args.output)
    else:
        save_map(out.map, args.output)
    _emit(out.params_echo)
    return 0


# -- rewards ------------------------------------------------------------------------


def _ground_truth(entry: ManifestEntry) -> GroundTruth:
    boxes = entry.gt_boxes()
    if entry.label is Label.FAKE and not boxes:
        raise ManifestMismatch(f"{entry.sample_id}: fake sample has no ground-truth boxes")
    return GroundTruth(entry.label, boxes if entry.label is Label.FAKE else ())


def _completion_turns(rec: dict) -> list[str]:
    if "turns" in rec:
        turns = rec["turns"]
        if not isinstance(turns, list) or not all(isinstance(t, str) for t in turns):
            raise ValueError("'turns' must be a list of strings")
        return turns
    text = rec.get("completion")
    if not isinstance(text, str):
        raise ValueError("record needs a 'completion' string or a 'turns' list")
    return [text]


def reward_report(completions_path, manifest: dict[str, ManifestEntry],
                  weights: RewardWeights, tau_iou: float, group_size=None) -> list[dict]:
    rows = []
    by_sample: "OrderedDict[str, list[int]]" = OrderedDict()
    truths: dict[str, GroundTruth] = {}
    for lineno, rec in read_jsonl(completions_path):
        sid = rec.get("sample_id")
        if not isinstance(sid, str):
            raise CliError(f"{completions_path}:{lineno}: missing sample_id")
        if sid not in manifest:
            raise ManifestMismatch(f"{completions_path}:{lineno}: unknown sample_id {sid!r}")
        try:
            turns = _completion_turns(rec)
        except ValueError as exc:
            raise CliError(f"{completions_path}:{lineno}: {exc}") from None
        if sid not in truths:
            truths[sid] = _ground_truth(manifest[sid])
        gt = truths[sid]
        error = None
        try:
            pred = parse_completion(turns)
        except ParseError as exc:
            error = f"{type(exc).__name__}: {exc}"
            pred = None
        if pred is None:
            h_iou = None if gt.label is Label.REAL else 0.0
            row = {"sample_id": sid, "r_cls": 0, "r_loc": 0.0, "r_tool": 0, "r_total": 0.0,
                   "hungarian_iou": h_iou}
        else:
            b = score(pred, gt, weights, tau_iou)
            row = {"sample_id": sid, "r_cls": b.r_cls, "r_loc": b.r_loc, "r_tool": b.r_tool,
                   "r_total": b.r_total, "hungarian_iou": b.hungarian_iou}
        row["advantage"] = None
        if error:
            row["parse_error"] = error
        row["_line"] = lineno
        by_sample.setdefault(sid, []).append(len(rows))
        rows.append(row)

    for sid, idxs in by_sample.items():
        size = group_size or len(idxs)
        if len(idxs) % size:
            raise CliError(f"{sid}: {len(idxs)} completions do not split into groups of {size}")
        for g, start in enumerate(range(0, len(idxs), size)):
            chunk = idxs[start : start + size]
            for i, adv in zip(chunk, grpo_advantages([rows[i]["r_total"] for i in chunk])):
                rows[i]["advantage"] = adv
                rows[i]["group"] = g
    for row in rows:
        del row["_line"]
    return rows


REPORT_DIGITS = 12


def _report_row(row: dict) -> dict:
    # fixed decimal places keep reports byte-stable across summation orders
    return {k: round(v, REPORT_DIGITS) + 0.0 if isinstance(v, float) else v for k, v in row.items()}


def cmd_rewards(args) -> int:
    manifest = load_manifest(args.manifest)
    weights = RewardWeights(args.lambda_cls, args.lambda_loc, args.lambda_tool)
    rows = reward_report(args.completions, manifest, weights, args.tau_iou, args.group_size)
    write_jsonl(args.out, (_report_row(r) for r in rows))
    mean = math.fsum(r["r_total"] for r in rows) / len(rows) if rows else 0.0
    _emit({
        "completions": len(rows),
        "mean_r_total": mean,
        "parse_errors": sum("parse_error" in r for r in rows),
    })
    return 0


# -- build-traj ---------------------------------------------------------------------


def cmd_build_traj(args) -> int:
    cfg = SelectionConfig(tau=args.tau, k_fake=args.k_fake, k_real=args.k_real)
    manifest = load_manifest(args.manifest)
    report = build_corpus(load_scores(args.scores), manifest, args.out, cfg, args.tool_dir)
    report_path = args.report or str(Path(args.out).with_suffix(".report.json"))
    write_report(report, report_path)
    _emit(report.to_dict())
    return 0


# -- eval ---------------------------------------------------------------------------


def _pred_boxes(raw) -> list[BoundingBox]:
    boxes = []
    for b in raw or []:
        try:
            boxes.append(BoundingBox.from_seq(b))
        except (DegenerateBox, TypeError, ValueError):
            continue
    return boxes


def _gt_mask(entry: ManifestEntry):
    if entry.mask is not None:
        return load_mask(entry.mask_path)
    img = load_image(entry.image_path)
    return box_fill_mask(entry.gt_boxes(), img.width, img.height)


def _pred_mask(pred: dict, base: Path, size, threshold: float):
    if pred.get("mask"):
        p = Path(pred["mask"])
        return binarize_map(load_map(p if p.is_absolute() else base / p), threshold)
    label = Label.parse(pred.get("pred_label", "real"))
    boxes = _pred_boxes(pred.get("boxes")) if label is Label.FAKE else []
    kept = []
    for b in boxes:
        try:
            box_fill_mask([b], *size)
            kept.append(b)
        except DegenerateBox:
            continue
    return box_fill_mask(kept, *size)


def _pred_label(pred: dict, base: Path, threshold: float) -> Label:
    if "pred_label" in pred:
        return Label.parse(pred["pred_label"])
    if pred.get("mask"):
        p = Path(pred["mask"])
        return map_to_detection(load_map(p if p.is_absolute() else base / p), threshold)
    raise CliError(f"{pred.get('sample_id')}: prediction has neither pred_label nor mask")


def evaluate(mode: str, predictions_path, manifest: dict[str, ManifestEntry],
             threshold: float = 0.5) -> dict:
    base = Path(predictions_path).parent
    preds: dict[str, dict] = {}
    for lineno, rec in read_jsonl(predictions_path):
        sid = rec.get("sample_id")
        if sid not in manifest:
            raise ManifestMismatch(f"{predictions_path}:{lineno}: unknown sample_id {sid!r}")
        preds[sid] = rec
    missing = [sid for sid in manifest if sid not in preds]
    if missing:
        raise ManifestMismatch(f"no prediction for {len(missing)} samples, e.g. {missing[0]!r}")

    groups: "OrderedDict[str, list[ManifestEntry]]" = OrderedDict()
    for entry in manifest.values():
        groups.setdefault(entry.dataset, []).append(entry)

    per_dataset = {}
    for name, entries in groups.items():
        if mode == "det":
            records = [DetectionRecord(e.sample_id, e.label, _pred_label(preds[e.sample_id], base, threshold))
                       for e in entries]
            m = detection_metrics(records)
            per_dataset[name] = {"f1": m.f1, "accuracy": m.accuracy, "tp": m.tp, "fp": m.fp,
                                 "tn": m.tn, "fn": m.fn, "n": len(records)}
            continue
        fakes = [e for e in entries if e.label is Label.FAKE]
        if not fakes:
            continue
        if mode == "loc":
            f1s, ious = [], []
            for e in fakes:
                gt = _gt_mask(e)
                pm = _pred_mask(preds[e.sample_id], base, (gt.width, gt.height), threshold)
                try:
                    pix = pixel_metrics(pm, gt)
                except ShapeMismatch as exc:
                    raise ShapeMismatch(f"{e.sample_id}: {exc}") from None
                f1s.append(pix.f1)
                ious.append(pix.iou)
            per_dataset[name] = {"f1": math.fsum(f1s) / len(f1s), "iou": math.fsum(ious) / len(ious),
                                 "n": len(fakes)}
        else:
            scores = []
            for e in fakes:
                gt = e.gt_boxes()
                if not gt:
                    raise ManifestMismatch(f"{e.sample_id}: fake sample has no ground-truth boxes")
                scores.append(hungarian_iou(_pred_boxes(preds[e.sample_id].get("boxes")), gt))
            per_dataset[name] = {"bbox_iou": math.fsum(scores) / len(scores), "n": len(fakes)}

    keys = {"det": ("f1", "accuracy"), "loc": ("f1", "iou"), "bbox": ("bbox_iou",)}[mode]
    weighted = {}
    if per_dataset:
        for k in keys:
            weighted[k] = weighted_average([(d[k], d["n"]) for d in per_dataset.values()])
    return {"mode": mode, "per_dataset": per_dataset, "weighted_avg": weighted}


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    report = evaluate(args.mode, args.predictions, manifest, args.threshold)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


# -- degrade ------------------------------------------------------------------------


def file_seed(seed: int, rel_path: str) -> int:
    """Per-file noise seed derived from the run seed and the file's relative path."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(rel_path.encode("utf-8"))])
    return int(ss.generate_state(1)[0])


def _fmt_param(p: float) -> str:
    return str(int(p)) if float(p).is_integer() else str(p)


def degrade_tree(op_name: str, param: float, seed, in_dir: Path, out_dir: Path,
                 continue_on_error: bool = False) -> tuple[dict[Path, Path], int]:
    """Degrade every image under ``in_dir`` into the mirrored tree under ``out_dir``.

    Outputs are lossless PNG. Returns the input->output path map and the failure count.
    """
    DegradeOp(op_name, param, seed)  # validate once up front
    done: dict[Path, Path] = {}
    failures = 0
    for src in sorted(p for p in in_dir.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES):
        rel = src.relative_to(in_dir)
        dst = (out_dir / rel).with_suffix(".png")
        try:
            img = load_image(src)
            s = None if seed is None else file_seed(seed, rel.as_posix())
            save_image(degrade(img, DegradeOp(op_name, param, s)), dst)
        except ForensicsError as exc:
            if not continue_on_error:
                raise ForensicsError(f"{src}: {type(exc).__name__}: {exc}") from exc
            failures += 1
            print(f"error: {src}: {type(exc).__name__}: {exc}", file=sys.stderr)
            continue
        done[src.resolve()] = dst
    return done, failures


def _rewrite_manifest(manifest_path, mapping: dict[Path, Path], out_dir: Path) -> Path:
    entries = load_manifest(manifest_path)
    out_manifest = out_dir / "manifest.jsonl"
    rows = []
    for e in entries.values():
        rec = e.to_record()
        new = mapping.get(e.image_path.resolve())
        if new is not None:
            rec["image"] = Path(new).relative_to(out_dir).as_posix()
        else:
            rec["image"] = str(e.image_path.resolve())
        if e.mask is not None:
            rec["mask"] = str(e.mask_path.resolve())
        rows.append(rec)
    write_jsonl(out_manifest, rows)
    return out_manifest


def cmd_degrade(args) -> int:
    in_dir, out_root = Path(args.input), Path(args.output)
    params = args.param
    failures = 0
    summary = []
    for p in params:
        out_dir = out_root if len(params) == 1 else out_root / f"{args.op}_{_fmt_param(p)}"
        mapping, failed = degrade_tree(args.op, p, args.seed, in_dir, out_dir, args.continue_on_error)
        failures += failed
        item = {"op": args.op, "param": p, "out": str(out_dir), "images": len(mapping), "failed": failed}
        if args.manifest:
            item["manifest"] = str(_rewrite_manifest(args.manifest, mapping, out_dir))
        summary.append(item)
    _emit({"runs": summary, "failed": failures})
    return 1 if failures else 0


# -- mask2box -----------------------------------------------------------------------


def cmd_mask2box(args) -> int:
    boxes = [b.as_list() for b in mask_to_boxes(load_mask(args.mask))]
    _emit({"boxes": boxes})
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="forensic-kit", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON file with default values for the command's flags")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tool", help="render one forensic tool output")
    p.add_argument("tool", help="ELA, FFT, NPP or zoom_in")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--quality", type=int, default=90)
    p.add_argument("--amplification", type=float, default=10.0)
    p.add_argument("--mode", choices=["global", "heatmap"], default="heatmap")
    p.add_argument("--block-size", type=int, default=32)
    p.add_argument("--cutoff", type=float, default=0.25)
    p.add_argument("--bbox", type=_int_list)
    p.add_argument("--min-side", type=int, default=224)
    p.add_argument("--npp-map", help="precomputed grayscale NPP map to load instead")
    p.set_defaults(func=cmd_tool)

    p = sub.add_parser("rewards", help="score completions and compute group advantages")
    p.add_argument("--completions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda-cls", type=float, default=1.0)
    p.add_argument("--lambda-loc", type=float, default=2.0)
    p.add_argument("--lambda-tool", type=float, default=0.5)
    p.add_argument("--tau-iou", type=float, default=0.5)
    p.add_argument("--group-size", type=int, help="completions per group (default: all of a sample)")
    p.set_defaults(func=cmd_rewards)

    p = sub.add_parser("build-traj", help="select tools and synthesize SFT trajectories")
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--tool-dir")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--k-fake", type=int, default=4)
    p.add_argument("--k-real", type=int, default=2)
    p.set_defaults(func=cmd_build_traj)

    p = sub.add_parser("eval", help="detection, pixel localization or bbox evaluation")
    p.add_argument("--mode", choices=["det", "loc", "bbox"], required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("degrade", help="apply a degradation to every image of a tree")
    p.add_argument("--op", choices=["jpeg", "noise", "blur", "resize"], required=True)
    p.add_argument("--param", type=float, nargs="+", required=True,
                   help="quality, sigma, kernel size or rate; several values run a sweep")
    p.add_argument("--seed", type=int)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--manifest", help="manifest to rewrite with the degraded image paths")
    p.add_argument("--continue-on-error", action="store_true")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("mask2box", help="print the filtered component boxes of a mask")
    p.add_argument("--mask", required=True)
    p.set_defaults(func=cmd_mask2box)
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse ``argv`` with values from ``--config`` as defaults; explicit flags win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            conf = json.loads(Path(known.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read config {known.config}: {exc}") from None
        if not isinstance(conf, dict):
            raise CliError("config file must hold a JSON object")
        conf = {k.replace("-", "_"): v for k, v in conf.items()}
        sub_action = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
        for sub in sub_action.choices.values():
            dests = {a.dest for a in sub._actions}
            sub.set_defaults(**{k: v for k, v in conf.items() if k in dests})
            for action in sub._actions:
                if action.dest in conf:
                    action.required = False
    return ap.parse_args(argv)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = _apply_config(ap, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except ForensicsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
