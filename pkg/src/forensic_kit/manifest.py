"""Dataset manifest: one JSONL line per image with its label and annotations."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .core import BoundingBox, ForensicsError, Label
from .evalkit import mask_to_boxes
from .files import load_mask, read_jsonl


class ManifestMismatch(ForensicsError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    image: str
    label: Label
    mask: Optional[str] = None
    boxes: Optional[tuple[BoundingBox, ...]] = None
    dataset: str = "default"
    root: str = "."

    def __post_init__(self):
        object.__setattr__(self, "label", Label.parse(self.label))
        if self.boxes is not None:
            object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.label is Label.FAKE and self.mask is None and not self.boxes:
            raise ManifestMismatch(f"{self.sample_id}: fake entries need a mask or boxes")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.root) / p

    @property
    def image_path(self) -> Path:
        return self.resolve(self.image)

    @property
    def mask_path(self) -> Optional[Path]:
        return None if self.mask is None else self.resolve(self.mask)

    def gt_boxes(self) -> tuple[BoundingBox, ...]:
        """Explicit boxes if given, otherwise boxes extracted from the mask."""
        if self.boxes is not None:
            return self.boxes
        if self.mask is None:
            return ()
        return tuple(mask_to_boxes(load_mask(self.mask_path)))

    def to_record(self) -> dict:
        rec = {"sample_id": self.sample_id, "image": self.image, "label": self.label.value}
        if self.mask is not None:
            rec["mask"] = self.mask
        if self.boxes is not None:
            rec["boxes"] = [b.as_list() for b in self.boxes]
        if self.dataset != "default":
            rec["dataset"] = self.dataset
        return rec


def entry_from_record(rec: dict, root=".") -> ManifestEntry:
    try:
        boxes = rec.get("boxes")
        return ManifestEntry(
            sample_id=str(rec["sample_id"]),
            image=rec["image"],
            label=rec["label"],
            mask=rec.get("mask"),
            boxes=None if boxes is None else tuple(BoundingBox.from_seq(b) for b in boxes),
            dataset=str(rec.get("dataset", "default")),
            root=str(root),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestMismatch(f"bad manifest record: {exc}") from exc


def load_manifest(path) -> dict[str, ManifestEntry]:
    """Entries keyed by sample id, in file order; relative paths resolve against the file's folder."""
    root = Path(path).parent
    entries: dict[str, ManifestEntry] = {}
    for lineno, rec in read_jsonl(path):
        try:
            entry = entry_from_record(rec, root)
        except ForensicsError as exc:
            raise ManifestMismatch(f"{path}:{lineno}: {exc}") from exc
        if entry.sample_id in entries:
            raise ManifestMismatch(f"{path}:{lineno}: duplicate sample_id {entry.sample_id!r}")
        entries[entry.sample_id] = entry
    return entries
