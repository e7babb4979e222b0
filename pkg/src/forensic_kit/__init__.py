"""Forensic tool-use toolkit: image forensic tools, rollout rewards, trajectory
synthesis and the detection/localization evaluation protocol."""

from .core import (
    BinaryMask,
    BoundingBox,
    DegenerateBox,
    ForensicsError,
    GrayMap,
    Label,
    RasterImage,
    ToolId,
    box_iou,
    clamp_box,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "BoundingBox",
    "DegenerateBox",
    "ForensicsError",
    "GrayMap",
    "Label",
    "RasterImage",
    "ToolId",
    "box_iou",
    "clamp_box",
]
