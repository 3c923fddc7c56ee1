"""On-disk formats: MXT1 tensors and the annotation / detection JSON schema.

MXT1 layout (little-endian): b"MXT1", u8 rank, rank x u32 dims, then the
values row-major as float32.

Annotation JSON, one object per recording (a file holds one object or a
list of them)::

    {"id": "rec0000",
     "views": [{"view": 0, "boxes": [{"class": "weapon", "cx": .., "cy": .., "w": .., "h": ..}]}],
     "boxes3d": [{"class": "weapon", "center": [x, y, z], "size": [w, h, d]}]}

Detection files use the same schema with an extra ``"score"`` per box.
Boxes may carry an ``"object"`` key that pairs the same object across views;
without it, boxes are paired by their position in each view's list.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from mxray.boxes import Box2, Box3
from mxray.errors import ConfigError, ShapeError

MAGIC_TENSOR = b"MXT1"


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim > 255:
        raise ShapeError("rank too large for MXT1")
    head = MAGIC_TENSOR + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC_TENSOR:
        raise ShapeError("not an MXT1 tensor")
    rank = buf[4]
    dims = struct.unpack_from(f"<{rank}I", buf, 5)
    off = 5 + 4 * rank
    n = int(np.prod(dims)) if rank else 1
    if len(buf) != off + 4 * n:
        raise ShapeError(f"MXT1 payload size mismatch for dims {dims}")
    return np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(dims)


def save_tensor(path: Union[str, Path], arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr))


def load_tensor(path: Union[str, Path]) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())


@dataclass
class Ann2:
    box: Box2
    class_label: str
    score: Optional[float] = None
    object_id: Optional[int] = None


@dataclass
class Ann3:
    box: Box3
    class_label: str
    score: Optional[float] = None
    object_id: Optional[int] = None


@dataclass
class RecordingAnnotations:
    recording_id: str
    views: dict[int, list[Ann2]] = field(default_factory=dict)
    boxes3d: list[Ann3] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        def box2(a: Ann2) -> dict[str, Any]:
            d: dict[str, Any] = {"class": a.class_label, "cx": a.box.cx, "cy": a.box.cy, "w": a.box.w, "h": a.box.h}
            if a.score is not None:
                d["score"] = a.score
            if a.object_id is not None:
                d["object"] = a.object_id
            return d

        def box3(a: Ann3) -> dict[str, Any]:
            d: dict[str, Any] = {"class": a.class_label, "center": list(a.box.center), "size": list(a.box.size)}
            if a.score is not None:
                d["score"] = a.score
            if a.object_id is not None:
                d["object"] = a.object_id
            return d

        return {
            "id": self.recording_id,
            "views": [{"view": v, "boxes": [box2(a) for a in boxes]} for v, boxes in sorted(self.views.items())],
            "boxes3d": [box3(a) for a in self.boxes3d],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RecordingAnnotations":
        try:
            views: dict[int, list[Ann2]] = {}
            for entry in d.get("views", []):
                views[int(entry["view"])] = [
                    Ann2(
                        Box2(float(b["cx"]), float(b["cy"]), float(b["w"]), float(b["h"])),
                        str(b["class"]),
                        None if b.get("score") is None else float(b["score"]),
                        None if b.get("object") is None else int(b["object"]),
                    )
                    for b in entry.get("boxes", [])
                ]
            boxes3d = [
                Ann3(
                    Box3(*map(float, b["center"]), *map(float, b["size"])),
                    str(b["class"]),
                    None if b.get("score") is None else float(b["score"]),
                    None if b.get("object") is None else int(b["object"]),
                )
                for b in d.get("boxes3d", [])
            ]
            return cls(str(d["id"]), views, boxes3d)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed annotation record: {exc!r}") from exc

    def object_groups(self) -> dict[int, list[tuple[int, Ann2]]]:
        """Per object id, the (view, annotation) pairs that belong to it."""
        groups: dict[int, list[tuple[int, Ann2]]] = {}
        for v, boxes in sorted(self.views.items()):
            for pos, a in enumerate(boxes):
                oid = a.object_id if a.object_id is not None else pos
                groups.setdefault(oid, []).append((v, a))
        return groups


def load_annotations(path: Union[str, Path]) -> list[RecordingAnnotations]:
    data = load_json(path)
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise ConfigError("annotation file must hold an object or a list of objects")
    return [RecordingAnnotations.from_dict(d) for d in data]


def dump_annotations(records: list[RecordingAnnotations]) -> str:
    return json.dumps([r.to_dict() for r in records], indent=2, sort_keys=True)


def save_annotations(path: Union[str, Path], records: list[RecordingAnnotations]) -> None:
    with open(path, "w") as fh:
        fh.write(dump_annotations(records))
        fh.write("\n")


def load_json(path: Union[str, Path]) -> Any:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
