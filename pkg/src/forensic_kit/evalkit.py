"""Detection / localization metrics, ground-truth box extraction and degradations."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import (
    BinaryMask,
    BoundingBox,
    EmptyInput,
    ForensicsError,
    GrayMap,
    Label,
    RasterImage,
    ShapeMismatch,
    clamp_box,
)
from .files import jpeg_roundtrip
from .rewards import hungarian_iou

MIN_COMPONENT_PIXELS = 100
MIN_COMPONENT_FRACTION = 0.0005

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class InvalidParam(ForensicsError):
    pass


@dataclass(frozen=True)
class DetectionRecord:
    sample_id: str
    gt_label: Label
    pred_label: Label


@dataclass(frozen=True)
class DetectionMetrics:
    f1: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int


@dataclass(frozen=True)
class PixelMetrics:
    f1: float
    iou: float


def binarize_map(m: GrayMap, threshold: float = 0.5) -> BinaryMask:
    return BinaryMask(m.values > threshold)


def map_to_detection(m: Union[GrayMap, BinaryMask], threshold: float = 0.5) -> Label:
    """An image is called fake as soon as one pixel is positive after binarization."""
    mask = binarize_map(m, threshold) if isinstance(m, GrayMap) else m
    return Label.FAKE if mask.values.any() else Label.REAL


def detection_metrics(records: Iterable[DetectionRecord]) -> DetectionMetrics:
    tp = fp = tn = fn = 0
    for rec in records:
        gt_fake = Label.parse(rec.gt_label) is Label.FAKE
        pred_fake = Label.parse(rec.pred_label) is Label.FAKE
        if gt_fake and pred_fake:
            tp += 1
        elif pred_fake:
            fp += 1
        elif gt_fake:
            fn += 1
        else:
            tn += 1
    total = tp + fp + tn + fn
    if total == 0:
        raise EmptyInput("no detection records")
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return DetectionMetrics(f1, (tp + tn) / total, tp, fp, tn, fn)


def pixel_metrics(pred_mask: BinaryMask, gt_mask: BinaryMask) -> PixelMetrics:
    """Per-image F1 and IoU of the tampered class.

    With an empty ground truth the image scores (1, 1) if the prediction is
    empty as well and (0, 0) otherwise.
    """
    if pred_mask.values.shape != gt_mask.values.shape:
        raise ShapeMismatch(
            f"prediction {pred_mask.values.shape} vs ground truth {gt_mask.values.shape}"
        )
    p, g = pred_mask.values, gt_mask.values
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    if tp + fn == 0:
        return PixelMetrics(1.0, 1.0) if fp == 0 else PixelMetrics(0.0, 0.0)
    return PixelMetrics(2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn))


def component_survives(size: int, width: int, height: int) -> bool:
    return size >= MIN_COMPONENT_PIXELS and size >= MIN_COMPONENT_FRACTION * width * height


def mask_to_boxes(mask: BinaryMask) -> list[BoundingBox]:
    """Bounding boxes of the 8-connected components that pass the size filters.

    A component is kept only if it has at least 100 pixels and covers at least
    0.05% of the image. Boxes come back sorted by (y1, x1).
    """
    labels, n = ndimage.label(mask.values, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    boxes = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or not component_survives(int(sizes[idx]), mask.width, mask.height):
            continue
        rows, cols = sl
        boxes.append(BoundingBox(cols.start, rows.start, cols.stop, rows.stop))
    return sorted(boxes, key=lambda b: (b.y1, b.x1, b.y2, b.x2))


def box_fill_mask(boxes: Iterable, w: int, h: int) -> BinaryMask:
    """Rasterize the union of ``boxes`` (clamped to the frame) into a mask."""
    out = np.zeros((h, w), dtype=bool)
    for b in boxes:
        b = clamp_box(b, w, h)
        out[b.y1 : b.y2, b.x1 : b.x2] = True
    return BinaryMask(out)


def bbox_eval(samples: Iterable[tuple[Label, Sequence[BoundingBox], Sequence[BoundingBox]]]) -> float:
    """Mean Hungarian IoU over the fake samples of ``(gt_label, pred_boxes, gt_boxes)`` triples."""
    scores = [
        hungarian_iou(pred, gt)
        for label, pred, gt in samples
        if Label.parse(label) is Label.FAKE
    ]
    if not scores:
        raise EmptyInput("no fake samples to evaluate")
    return math.fsum(scores) / len(scores)


def weighted_average(per_dataset: Iterable[tuple[float, int]]) -> float:
    items = list(per_dataset)
    if not items:
        raise EmptyInput("no datasets to average")
    if any(n < 1 for _, n in items):
        raise ValueError("dataset counts must be >= 1")
    total = sum(n for _, n in items)
    return math.fsum(v * n for v, n in items) / total


# -- degradations ------------------------------------------------------------------


class DegradeKind(str, enum.Enum):
    JPEG = "jpeg"
    NOISE = "noise"
    BLUR = "blur"
    RESIZE = "resize"


@dataclass(frozen=True)
class DegradeOp:
    kind: DegradeKind
    param: float
    seed: Optional[int] = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", DegradeKind(self.kind))
        except ValueError:
            raise InvalidParam(f"unknown degradation {self.kind!r}") from None
        p = self.param
        if self.kind is DegradeKind.JPEG and not (float(p).is_integer() and 1 <= p <= 100):
            raise InvalidParam("JPEG quality must be an integer in [1, 100]")
        if self.kind is DegradeKind.NOISE:
            if not p >= 0:
                raise InvalidParam("noise sigma must be >= 0")
            if self.seed is None:
                raise InvalidParam("Gaussian noise needs an explicit seed")
        if self.kind is DegradeKind.BLUR and not (float(p).is_integer() and p >= 1 and int(p) % 2 == 1):
            raise InvalidParam("blur kernel must be an odd integer >= 1")
        if self.kind is DegradeKind.RESIZE and not p > 0:
            raise InvalidParam("resize rate must be > 0")


def gaussian_kernel(size: int) -> np.ndarray:
    radius = size // 2
    if radius == 0:
        return np.ones(1)
    sigma = size / 6.0
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


def resized_dims(width: int, height: int, rate: float) -> tuple[int, int]:
    # half-up rounding, never below one pixel
    return max(1, math.floor(width * rate + 0.5)), max(1, math.floor(height * rate + 0.5))


def degrade(img: RasterImage, op: DegradeOp) -> RasterImage:
    px = img.pixels
    if op.kind is DegradeKind.JPEG:
        return RasterImage(jpeg_roundtrip(px, int(op.param)))
    if op.kind is DegradeKind.NOISE:
        rng = np.random.default_rng(op.seed)
        noise = rng.normal(0.0, float(op.param), size=px.shape)
        return RasterImage(_to_uint8(px.astype(np.float64) + noise))
    if op.kind is DegradeKind.BLUR:
        k = gaussian_kernel(int(op.param))
        out = ndimage.convolve1d(px.astype(np.float64), k, axis=0, mode="nearest")
        out = ndimage.convolve1d(out, k, axis=1, mode="nearest")
        return RasterImage(_to_uint8(out))
    size = resized_dims(img.width, img.height, float(op.param))
    if size == (img.width, img.height):
        return RasterImage(px.copy())
    resized = Image.fromarray(np.array(px)).resize(size, resample=Image.BILINEAR)
    return RasterImage(np.asarray(resized, dtype=np.uint8))
