"""Forensic image operators: ELA, FFT maps, noise residual and zoom-in crops.

Every operator is a pure function of its inputs. The JPEG codec is invoked
through a fresh in-memory buffer per call, so the functions are safe to run
from many threads at once.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Any, Union

import numpy as np
from scipy import ndimage

from .core import (
    BoundingBox,
    ForensicsError,
    GrayMap,
    RasterImage,
    RawBox,
    ToolId,
    clamp_box,
)
from .files import jpeg_roundtrip_ycc, load_map


class ImageTooSmall(ForensicsError):
    pass


class UnknownTool(ForensicsError):
    pass


class ToolArgumentError(ForensicsError):
    pass


@dataclass(frozen=True)
class ElaConfig:
    recompress_quality: int = 90
    amplification: float = 10.0

    def __post_init__(self):
        if not 1 <= int(self.recompress_quality) <= 100:
            raise ToolArgumentError("recompress_quality must be in [1, 100]")
        if not self.amplification > 0:
            raise ToolArgumentError("amplification must be positive")


class FftMode(str, enum.Enum):
    GLOBAL_SPECTRUM = "global"
    HIGH_FREQ_HEATMAP = "heatmap"


@dataclass(frozen=True)
class FftConfig:
    mode: FftMode = FftMode.HIGH_FREQ_HEATMAP
    block_size: int = 32
    radial_cutoff: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "mode", FftMode(self.mode))
        b = int(self.block_size)
        if b < 8 or b & (b - 1):
            raise ToolArgumentError("block_size must be a power of two >= 8")
        if not 0.0 < self.radial_cutoff < 1.0:
            raise ToolArgumentError("radial_cutoff must be in (0, 1)")


@dataclass(frozen=True)
class ToolOutput:
    tool: ToolId
    map: Union[GrayMap, RasterImage]
    params_echo: dict = field(default_factory=dict)


def ela(img: RasterImage, cfg: ElaConfig = ElaConfig()) -> GrayMap:
    """Error level analysis map.

    The image is recompressed at ``cfg.recompress_quality``; the per-pixel
    residual is the maximum absolute difference over the Y, Cb and Cr planes,
    scaled by ``amplification / 255`` and clipped to [0, 1]. Comparing in the
    codec's own colour space means a flat colour field reads as exactly 0 for
    qualities of 90 and above.
    """
    before, after = jpeg_roundtrip_ycc(img.pixels, cfg.recompress_quality)
    diff = np.abs(before.astype(np.int16) - after.astype(np.int16)).max(axis=2)
    return GrayMap(np.clip(diff * (cfg.amplification / 255.0), 0.0, 1.0))


def luminance(img: RasterImage) -> np.ndarray:
    px = img.pixels.astype(np.float64)
    return 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]


def spectrum(tile: np.ndarray) -> np.ndarray:
    """Unnormalized 2-D DFT (sum over pixels, no 1/N factor)."""
    return np.fft.fft2(tile)


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 1e-12 * max(abs(hi), 1.0):
        return np.zeros_like(values, dtype=np.float64)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def highpass_mask(block_size: int, cutoff: float) -> np.ndarray:
    """Boolean mask of DFT bins whose radial frequency exceeds ``cutoff * Nyquist``."""
    f = np.fft.fftfreq(block_size)  # cycles per pixel, Nyquist = 0.5
    radius = np.hypot(f[:, None], f[None, :]) / 0.5
    return radius > cutoff


def fft_map(img: RasterImage, cfg: FftConfig = FftConfig()) -> GrayMap:
    lum = luminance(img)
    if cfg.mode is FftMode.GLOBAL_SPECTRUM:
        mag = np.log1p(np.abs(np.fft.fftshift(spectrum(lum))))
        return GrayMap(_minmax(mag))

    b = cfg.block_size
    h, w = lum.shape
    if h < b or w < b:
        raise ImageTooSmall(f"{w}x{h} image is smaller than block size {b}")
    ny, nx = h // b, w // b
    tiles = lum[: ny * b, : nx * b].reshape(ny, b, nx, b).transpose(0, 2, 1, 3)
    # drop the mean so that flat tiles give exact zeros
    tiles = tiles - tiles.mean(axis=(2, 3), keepdims=True)
    power = np.abs(np.fft.fft2(tiles, axes=(2, 3))) ** 2
    energy = power[:, :, highpass_mask(b, cfg.radial_cutoff)].sum(axis=2)
    grid = _minmax(energy)
    # pixels beyond the last full tile take the nearest tile
    rows = np.minimum(np.arange(h) // b, ny - 1)
    cols = np.minimum(np.arange(w) // b, nx - 1)
    return GrayMap(grid[rows[:, None], cols[None, :]])


def noise_residual(img: RasterImage) -> GrayMap:
    """Median-filter residual used as the in-tree stand-in for a learned noiseprint."""
    px = img.pixels.astype(np.int16)
    med = ndimage.median_filter(px, size=(3, 3, 1), mode="nearest")
    return GrayMap(np.clip(np.abs(px - med).max(axis=2) / 255.0, 0.0, 1.0))


def _as_rect(bbox) -> RawBox:
    if isinstance(bbox, (BoundingBox, RawBox)):
        return RawBox(bbox.x1, bbox.y1, bbox.x2, bbox.y2)
    coords = list(bbox)
    if len(coords) != 4:
        raise ToolArgumentError(f"bbox needs 4 integers, got {coords!r}")
    if any(isinstance(c, bool) or not isinstance(c, (int, np.integer)) for c in coords):
        raise ToolArgumentError(f"bbox coordinates must be integers, got {coords!r}")
    return RawBox(*(int(c) for c in coords))


def zoom_in(img: RasterImage, bbox, min_side: int = 224) -> RasterImage:
    """Crop ``bbox`` (clamped to the image) and upscale small crops.

    If the shorter crop side is below ``min_side`` the crop is enlarged with
    nearest-neighbour sampling so that the shorter side equals ``min_side``;
    the longer side is scaled by the same factor and rounded up.
    """
    if min_side < 1:
        raise ToolArgumentError("min_side must be >= 1")
    box = clamp_box(_as_rect(bbox), img.width, img.height)
    crop = img.pixels[box.y1 : box.y2, box.x1 : box.x2]
    h, w = crop.shape[:2]
    short = min(w, h)
    if short >= min_side:
        return RasterImage(crop.copy())
    new_w = -(-w * min_side // short)
    new_h = -(-h * min_side // short)
    rows = np.arange(new_h) * h // new_h
    cols = np.arange(new_w) * w // new_w
    return RasterImage(crop[rows[:, None], cols[None, :]])


def _take(args: dict, allowed: set[str], tool: ToolId) -> dict:
    extra = set(args) - allowed
    if extra:
        raise ToolArgumentError(f"{tool.value} does not accept {sorted(extra)}")
    return args


def run_tool(tool, img: RasterImage, args: dict[str, Any] | None = None) -> ToolOutput:
    """Dispatch ``tool`` on ``img``.

    Accepted ``args``: ELA takes ``config`` or ``quality``/``amplification``;
    FFT takes ``config`` or ``mode``/``block_size``/``radial_cutoff``; NPP takes an
    optional ``external_map`` path to a precomputed grayscale PNG; zoom_in needs
    ``bbox`` and optionally ``min_side``.
    """
    try:
        tool = ToolId.parse(tool)
    except KeyError:
        raise UnknownTool(f"no tool named {tool!r}") from None
    args = dict(args or {})

    if tool is ToolId.ELA:
        _take(args, {"config", "quality", "amplification"}, tool)
        cfg = args.get("config") or ElaConfig(
            recompress_quality=int(args.get("quality", 90)),
            amplification=float(args.get("amplification", 10.0)),
        )
        echo = {"tool": tool.value, **asdict(cfg), "channel_reduction": "max", "colour_space": "YCbCr"}
        return ToolOutput(tool, ela(img, cfg), echo)

    if tool is ToolId.FFT:
        _take(args, {"config", "mode", "block_size", "radial_cutoff"}, tool)
        try:
            cfg = args.get("config") or FftConfig(
                mode=FftMode(args.get("mode", FftMode.HIGH_FREQ_HEATMAP)),
                block_size=int(args.get("block_size", 32)),
                radial_cutoff=float(args.get("radial_cutoff", 0.25)),
            )
        except ValueError as exc:
            raise ToolArgumentError(str(exc)) from exc
        echo = {
            "tool": tool.value,
            "mode": cfg.mode.value,
            "block_size": cfg.block_size,
            "radial_cutoff": cfg.radial_cutoff,
            "normalization": "minmax",
        }
        return ToolOutput(tool, fft_map(img, cfg), echo)

    if tool is ToolId.NPP:
        _take(args, {"external_map"}, tool)
        path = args.get("external_map")
        if path is None:
            echo = {"tool": tool.value, "source": "median_residual", "kernel": 3}
            return ToolOutput(tool, noise_residual(img), echo)
        m = load_map(path)
        if (m.width, m.height) != (img.width, img.height):
            raise ToolArgumentError(
                f"external NPP map is {m.width}x{m.height}, image is {img.width}x{img.height}"
            )
        return ToolOutput(tool, m, {"tool": tool.value, "source": "external", "path": str(path)})

    _take(args, {"bbox", "min_side"}, tool)
    if "bbox" not in args:
        raise ToolArgumentError("zoom_in requires a bbox argument")
    rect = _as_rect(args["bbox"])
    min_side = int(args.get("min_side", 224))
    out = zoom_in(img, rect, min_side)
    echo = {
        "tool": tool.value,
        "bbox": [rect.x1, rect.y1, rect.x2, rect.y2],
        "min_side": min_side,
        "output_size": [out.width, out.height],
    }
    return ToolOutput(tool, out, echo)
