"""Build the bundled end-to-end corpus and its golden outputs.

Run once from the repository root (``python3 tests/data/make_e2e.py``); the
results are committed. The golden files come from the recomputation oracle
below, which reads the fixture with PIL/json only and never imports the
toolkit, so the smoke test compares two independent implementations.
"""

from __future__ import annotations

import json
import math
import random
import re
import statistics
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from _helpers import brute_force_matching_iou, oracle_boxes, pink_texture, scripted_sample  # noqa: E402

OUT = HERE / "e2e"
SIZE = 64
N_SAMPLES = 20
GROUP = 4
SUPPORTED = {"ELA", "FFT", "NPP", "zoom_in"}


def dump(rec) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(", ", ": "))


def write_lines(path: Path, recs) -> None:
    path.write_text("".join(dump(r) + "\n" for r in recs), encoding="utf-8")


# -- fixture ----------------------------------------------------------------------------


def random_rect(rng: random.Random):
    w, h = rng.randint(12, 28), rng.randint(12, 28)
    x, y = rng.randint(0, SIZE - w), rng.randint(0, SIZE - h)
    return [x, y, x + w, y + h]


def box_text(b, pair=False, pad=""):
    if pair:
        return f"<|box_start|>({b[0]}, {b[1]}), ({b[2]}, {b[3]})<|box_end|>"
    return "<|box_start|>" + ",".join(f"{pad}{v}{pad}" for v in b) + "<|box_end|>"


def jitter(rng, b):
    x1 = max(0, b[0] + rng.randint(-4, 4))
    y1 = max(0, b[1] + rng.randint(-4, 4))
    return [x1, y1, max(x1 + 1, b[2] + rng.randint(-4, 4)), max(y1 + 1, b[3] + rng.randint(-4, 4))]


def call(name, bbox=None):
    args = {"bbox": bbox} if bbox else {}
    return "<tool_call>\n" + json.dumps({"name": name, "arguments": args}) + "\n</tool_call>"


def completion(rng, label, boxes):
    kind = rng.choice(["exact", "exact_tool", "jitter", "jitter_tool", "wrong", "no_box", "malformed",
                       "pair", "unknown_tool", "no_keyword"])
    shown = boxes if label == "fake" else [random_rect(rng)]
    if kind in ("jitter", "jitter_tool"):
        shown = [jitter(rng, b) for b in shown]
    if label == "fake" or kind in ("wrong",):
        body = "fake, " + ", ".join(box_text(b, pad=rng.choice(["", " "])) for b in shown)
    else:
        body = "real"
    if kind == "wrong":
        body = "real" if label == "fake" else body
    if kind == "no_box":
        body = "fake"
    if kind == "pair":
        body = "fake, " + ", ".join(box_text(b, pair=True) for b in shown)
    if kind == "no_keyword":
        body = "unclear"
    answer = f"<answer>{body}</answer>"
    if kind == "malformed":
        answer = body
    if kind in ("exact_tool", "jitter_tool"):
        tool = rng.choice(sorted(SUPPORTED))
        bbox = [0, 0, 32, 32] if tool == "zoom_in" else None
        return {"turns": [call(tool, bbox), "<tool_response><image></tool_response>", answer]}
    if kind == "unknown_tool":
        return {"completion": call("DCT") + answer}
    return {"completion": answer}


def build_fixture():
    rng = random.Random(2024)
    nrng = np.random.default_rng(2024)
    (OUT / "images").mkdir(parents=True, exist_ok=True)
    (OUT / "masks").mkdir(exist_ok=True)
    (OUT / "pred_masks").mkdir(exist_ok=True)
    manifest, scores, plans, completions, predictions = [], [], [], [], []
    for i in range(N_SAMPLES):
        sid = f"e{i:02d}"
        label = "fake" if i % 2 == 0 else "real"
        dataset = "alpha" if i < 12 else "beta"
        img = pink_texture(nrng, SIZE)
        rec = {"sample_id": sid, "image": f"images/{sid}.png", "label": label, "dataset": dataset}
        boxes = []
        if label == "fake":
            donor = pink_texture(nrng, SIZE)
            mask = np.zeros((SIZE, SIZE), bool)
            for _ in range(rng.choice([1, 1, 2])):
                r = random_rect(rng)
                mask[r[1] : r[3], r[0] : r[2]] = True
            img[mask] = donor[mask]
            if i % 4 == 0:
                Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(OUT / "masks" / f"{sid}.png")
                rec["mask"] = f"masks/{sid}.png"
            else:
                rec["boxes"] = [list(b) for b in oracle_boxes(mask)]
            boxes = [list(b) for b in oracle_boxes(mask)]
        Image.fromarray(img).save(OUT / "images" / f"{sid}.png")
        manifest.append(rec)

        score_rec, ranked = scripted_sample(rng, sid, label)
        scores.append(score_rec)
        plans.append((label, ranked))

        for _ in range(GROUP):
            completions.append({"sample_id": sid, **completion(rng, label, boxes)})

        pred = {"sample_id": sid}
        correct = rng.random() < 0.75
        pred["pred_label"] = label if correct else ("real" if label == "fake" else "fake")
        if pred["pred_label"] == "fake":
            src = boxes if boxes and correct else [random_rect(rng)]
            pred["boxes"] = [jitter(rng, b) for b in src]
        if label == "fake" and rng.random() < 0.5:
            prob = np.zeros((SIZE, SIZE))
            for b in boxes:
                jb = jitter(rng, b)
                prob[jb[1] : jb[3], jb[0] : jb[2]] = rng.uniform(0.4, 1.0)
            prob += nrng.random((SIZE, SIZE)) * 0.3
            Image.fromarray(np.floor(np.clip(prob, 0, 1) * 255 + 0.5).astype(np.uint8), mode="L").save(
                OUT / "pred_masks" / f"{sid}.png")
            pred["mask"] = f"pred_masks/{sid}.png"
        predictions.append(pred)

    write_lines(OUT / "manifest.jsonl", manifest)
    write_lines(OUT / "scores.jsonl", scores)
    write_lines(OUT / "completions.jsonl", completions)
    write_lines(OUT / "predictions.jsonl", predictions)
    return manifest, plans


# -- oracle -----------------------------------------------------------------------------


ANSWER = re.compile(r"<answer>(.*?)</answer>", re.S)
BOX = re.compile(r"<\|box_start\|>(.*?)<\|box_end\|>", re.S)
CALL = re.compile(r"<tool_call>(.*?)</tool_call>", re.S)


def read_lines(path: Path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def read_mask(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) >= 128


def gt_boxes(rec):
    if "boxes" in rec:
        return [tuple(b) for b in rec["boxes"]]
    if "mask" in rec:
        return oracle_boxes(read_mask(OUT / rec["mask"]))
    return []


def oracle_parse(turns):
    """(label, boxes, tool_used) or the name of the parse failure."""
    m = ANSWER.search(turns[-1])
    if not m:
        return "MissingAnswerTag"
    body = m.group(1).lower()
    if "fake" in body:
        label = "fake"
    elif "real" in body:
        label = "real"
    else:
        return "MalformedAnswer"
    boxes = []
    for span in BOX.findall(m.group(1)):
        nums = [int(v) for v in re.findall(r"-?\d+", span)]
        if len(nums) == 4 and min(nums) >= 0 and nums[0] < nums[2] and nums[1] < nums[3]:
            boxes.append(tuple(nums))
    used = False
    for t in turns:
        if "<tool_response>" in t:
            used = True
        for span in CALL.findall(t):
            try:
                used |= json.loads(span).get("name") in SUPPORTED
            except ValueError:
                pass
    return label, boxes, used


PARSE_MESSAGES = {
    "MissingAnswerTag": "MissingAnswerTag: no <answer>...</answer> span",
}


def oracle_rewards(manifest):
    truth = {r["sample_id"]: r for r in manifest}
    rows = []
    for rec in read_lines(OUT / "completions.jsonl"):
        sid = rec["sample_id"]
        label = truth[sid]["label"]
        gts = gt_boxes(truth[sid])
        turns = rec["turns"] if "turns" in rec else [rec["completion"]]
        parsed = oracle_parse(turns)
        if isinstance(parsed, str):
            row = {"sample_id": sid, "r_cls": 0, "r_loc": 0.0, "r_tool": 0, "r_total": 0.0,
                   "hungarian_iou": None if label == "real" else 0.0, "advantage": None}
            if parsed == "MissingAnswerTag":
                row["parse_error"] = PARSE_MESSAGES[parsed]
            else:
                m = ANSWER.search(turns[-1]).group(1)
                row["parse_error"] = f"MalformedAnswer: answer span has no real/fake keyword: {m[:80]!r}"
        else:
            p_label, p_boxes, used = parsed
            cls = int(p_label == label and (label == "real" or len(p_boxes) > 0))
            if label == "real":
                h = None
                loc = 0.0
                tool = int(used and cls == 1)
            else:
                h = float(brute_force_matching_iou(p_boxes, gts))
                loc = h
                tool = int(used and h > 0.5)
            row = {"sample_id": sid, "r_cls": cls, "r_loc": loc, "r_tool": tool,
                   "r_total": 1.0 * cls + 2.0 * loc + 0.5 * tool, "hungarian_iou": h, "advantage": None}
        rows.append(row)
    for start in range(0, len(rows), GROUP):
        chunk = rows[start : start + GROUP]
        totals = [r["r_total"] for r in chunk]
        mean = statistics.fmean(totals)
        sd = statistics.pstdev(totals)
        for r in chunk:
            r["advantage"] = 0.0 if sd < 1e-12 else (r["r_total"] - mean) / sd
            r["group"] = 0
    out = []
    for r in rows:
        out.append({k: (round(v, 12) + 0.0 if isinstance(v, float) else v) for k, v in r.items()})
    return out


def box_fill(boxes, w=SIZE, h=SIZE):
    m = np.zeros((h, w), bool)
    for b in boxes:
        x1, y1, x2, y2 = (max(0, min(v, lim)) for v, lim in zip(b, (w, h, w, h)))
        if x1 < x2 and y1 < y2:
            m[y1:y2, x1:x2] = True
    return m


def pixel_scores(pred, gt):
    tp = fp = fn = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        tp += p and g
        fp += p and not g
        fn += g and not p
    if tp + fn == 0:
        return (1.0, 1.0) if fp == 0 else (0.0, 0.0)
    return 2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn)


def valid_boxes(raw):
    return [tuple(b) for b in raw or [] if len(b) == 4 and min(b) >= 0 and b[0] < b[2] and b[1] < b[3]]


def oracle_eval(manifest):
    preds = {p["sample_id"]: p for p in read_lines(OUT / "predictions.jsonl")}
    datasets = {}
    for rec in manifest:
        datasets.setdefault(rec["dataset"], []).append(rec)
    reports = {}
    for mode in ("det", "loc", "bbox"):
        per = {}
        for name, recs in datasets.items():
            if mode == "det":
                tp = fp = tn = fn = 0
                for r in recs:
                    g, p = r["label"] == "fake", preds[r["sample_id"]]["pred_label"] == "fake"
                    tp += g and p
                    fp += p and not g
                    fn += g and not p
                    tn += not g and not p
                denom = 2 * tp + fp + fn
                per[name] = {"f1": 2 * tp / denom if denom else 0.0, "accuracy": (tp + tn) / len(recs),
                             "tp": tp, "fp": fp, "tn": tn, "fn": fn, "n": len(recs)}
                continue
            fakes = [r for r in recs if r["label"] == "fake"]
            if mode == "loc":
                f1s, ious = [], []
                for r in fakes:
                    gt = read_mask(OUT / r["mask"]) if "mask" in r else box_fill(r["boxes"])
                    p = preds[r["sample_id"]]
                    if p.get("mask"):
                        pm = np.asarray(Image.open(OUT / p["mask"]).convert("L")) >= 128
                    else:
                        pm = box_fill(valid_boxes(p.get("boxes")) if p["pred_label"] == "fake" else [])
                    f1, iou = pixel_scores(pm, gt)
                    f1s.append(f1)
                    ious.append(iou)
                per[name] = {"f1": sum(f1s) / len(f1s), "iou": sum(ious) / len(ious), "n": len(fakes)}
            else:
                vals = [float(brute_force_matching_iou(valid_boxes(preds[r["sample_id"]].get("boxes")),
                                                       gt_boxes(r)))
                        for r in fakes]
                per[name] = {"bbox_iou": sum(vals) / len(vals), "n": len(fakes)}
        keys = {"det": ("f1", "accuracy"), "loc": ("f1", "iou"), "bbox": ("bbox_iou",)}[mode]
        total = sum(d["n"] for d in per.values())
        weighted = {k: float(sum(Fraction(d[k]) * d["n"] for d in per.values()) / total) for k in keys}
        reports[mode] = {"mode": mode, "per_dataset": per, "weighted_avg": weighted}
    return reports


def closed_form_count(plans):
    total = 0
    for label, ranked in plans:
        if ranked is not None:
            k = min(len(ranked), 4 if label == "fake" else 2)
            total += max(1, 2 * k)
    return total


def main():
    manifest, plans = build_fixture()
    golden = OUT / "golden"
    golden.mkdir(exist_ok=True)
    write_lines(golden / "rewards.jsonl", oracle_rewards(manifest))
    for mode, report in oracle_eval(manifest).items():
        (golden / f"eval_{mode}.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    (golden / "build.json").write_text(json.dumps({"trajectories": closed_form_count(plans)}) + "\n",
                                       encoding="utf-8")


if __name__ == "__main__":
    main()
