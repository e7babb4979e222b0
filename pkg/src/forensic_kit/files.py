"""Image, map and JSONL reading/writing."""

from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image

from .core import BinaryMask, ForensicsError, GrayMap, RasterImage


class EncodeFailure(ForensicsError):
    pass


class DecodeFailure(ForensicsError):
    pass


def load_image(path) -> RasterImage:
    try:
        with Image.open(path) as im:
            return RasterImage(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except (OSError, ValueError) as exc:
        raise DecodeFailure(f"cannot decode image {path}: {exc}") from exc


def save_image(img: RasterImage, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.array(img.pixels)).save(path, format="PNG")


def map_to_uint8(m: GrayMap) -> np.ndarray:
    # round half up, value = round(map * 255)
    return np.floor(m.values * 255.0 + 0.5).astype(np.uint8)


def save_map(m: GrayMap, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(map_to_uint8(m), mode="L").save(path, format="PNG")


def load_map(path) -> GrayMap:
    """Read a grayscale PNG as a [0, 1] map (any mode is converted to L first)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DecodeFailure(f"cannot decode map {path}: {exc}") from exc
    return GrayMap(arr / 255.0)


def load_mask(path) -> BinaryMask:
    return BinaryMask(load_map(path).values > 0.5)


def save_mask(mask: BinaryMask, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.values.astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def jpeg_roundtrip(pixels: np.ndarray, quality: int) -> np.ndarray:
    """Encode an (H, W, 3) uint8 array as baseline JPEG and decode it again."""
    buf = io.BytesIO()
    try:
        Image.fromarray(np.ascontiguousarray(pixels)).save(buf, format="JPEG", quality=int(quality))
    except (OSError, ValueError) as exc:
        raise EncodeFailure(str(exc)) from exc
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def jpeg_roundtrip_ycc(pixels: np.ndarray, quality: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(before, after)`` of a JPEG cycle, both in the codec's YCbCr space.

    Skipping the RGB conversion on decode keeps its rounding out of the residual.
    """
    ycc = Image.fromarray(np.ascontiguousarray(pixels)).convert("YCbCr")
    buf = io.BytesIO()
    try:
        ycc.save(buf, format="JPEG", quality=int(quality))
    except (OSError, ValueError) as exc:
        raise EncodeFailure(str(exc)) from exc
    buf.seek(0)
    with Image.open(buf) as im:
        im.draft("YCbCr", im.size)
        after = np.asarray(im.convert("YCbCr"), dtype=np.uint8)
    return np.asarray(ycc, dtype=np.uint8), after


def jpeg_bytes(pixels: np.ndarray, quality: int) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels)).save(buf, format="JPEG", quality=int(quality))
    return buf.getvalue()


def read_jsonl(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)`` for every non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ForensicsError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise ForensicsError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def dump_json_line(rec: dict) -> str:
    return json.dumps(rec, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path, records: Iterable[dict]) -> int:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dump_json_line(rec) + "\n")
            n += 1
    return n
