"""On-disk formats and in-memory models for raw PFA frames, float tensors and
gaze dataset manifests.

Frame files come in pairs: ``<name>.pfaraw`` holds the little-endian uint16
row-major payload and ``<name>.pfaraw.json`` the header::

    {"magic": "PFA1", "width": W, "height": H, "bit_depth": B,
     "layout": [[90, 45], [135, 0]]}

Float tensors (``PFT1``) use the same sidecar idea with a float32 payload of
``planes x height x width`` samples.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    DuplicateParticipant,
    IoFailure,
    MissingFile,
    OddDimensions,
    ParseError,
    RangeError,
    UnresolvedFramePath,
)

FRAME_MAGIC = "PFA1"
TENSOR_MAGIC = "PFT1"
ANGLES = (0, 45, 90, 135)


@dataclass(frozen=True)
class SuperpixelLayout:
    """Polarizer angle (degrees) at each position of the repeating 2x2 cell."""

    angle_at: tuple[tuple[int, int], tuple[int, int]] = ((90, 45), (135, 0))

    def __post_init__(self):
        cells = tuple(tuple(int(a) for a in row) for row in self.angle_at)
        if len(cells) != 2 or any(len(row) != 2 for row in cells):
            raise ValueError("layout must be a 2x2 grid of angles")
        if sorted(cells[0] + cells[1]) != list(ANGLES):
            raise ValueError(f"layout angles must be a permutation of {ANGLES}, got {cells}")
        object.__setattr__(self, "angle_at", cells)

    def offset(self, angle: int) -> tuple[int, int]:
        """(row, col) of ``angle`` inside the 2x2 cell."""
        for r in range(2):
            for c in range(2):
                if self.angle_at[r][c] == angle:
                    return r, c
        raise KeyError(angle)

    def to_list(self) -> list[list[int]]:
        return [list(row) for row in self.angle_at]

    @classmethod
    def from_list(cls, cells) -> "SuperpixelLayout":
        return cls(tuple(tuple(row) for row in cells))


DEFAULT_LAYOUT = SuperpixelLayout()


@dataclass(eq=False)
class RawMosaicFrame:
    """One PFA capture. ``data`` is a (height, width) array of digital numbers.

    Frames produced by the noiseless simulator with ``bit_depth=None`` carry
    float data; those can be demosaicked but not written to disk.
    """

    data: np.ndarray
    layout: SuperpixelLayout = DEFAULT_LAYOUT
    bit_depth: int | None = 12

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise DimensionMismatch(f"mosaic data must be 2-D, got shape {self.data.shape}")
        h, w = self.data.shape
        if h % 2 or w % 2:
            raise OddDimensions(f"mosaic dimensions must be even, got {w}x{h}")
        if self.bit_depth is not None and not 1 <= self.bit_depth <= 16:
            raise RangeError(f"bit_depth must be in [1, 16], got {self.bit_depth}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def validate(self):
        """Check the sample range against ``bit_depth``; raise RangeError."""
        if self.bit_depth is None:
            raise RangeError("float (unquantized) frames cannot be stored as PFA1")
        d = self.data
        if not np.issubdtype(d.dtype, np.integer):
            if not np.all(np.isfinite(d)) or np.any(d != np.round(d)):
                raise RangeError("samples must be integers")
        if d.size and (d.min() < 0 or d.max() >= 2**self.bit_depth):
            raise RangeError(
                f"samples must lie in [0, {2**self.bit_depth - 1}] for bit_depth {self.bit_depth}"
            )

    def __eq__(self, other):
        if not isinstance(other, RawMosaicFrame):
            return NotImplemented
        return (
            self.layout == other.layout
            and self.bit_depth == other.bit_depth
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )


def _header_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _read_header(path, magic: str) -> dict:
    hpath = _header_path(path)
    if not Path(path).is_file():
        raise MissingFile(f"payload not found: {path}")
    if not hpath.is_file():
        raise MissingFile(f"header not found: {hpath}")
    try:
        header = json.loads(hpath.read_text())
    except json.JSONDecodeError as exc:
        raise BadMagic(f"header {hpath} is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("magic") != magic:
        raise BadMagic(f"expected magic {magic!r} in {hpath}")
    return header


def read_raw_frame(path, layout: SuperpixelLayout | None = None) -> RawMosaicFrame:
    """Read a PFA1 frame. ``layout`` overrides the header's layout when given."""
    header = _read_header(path, FRAME_MAGIC)
    try:
        w, h, bd = int(header["width"]), int(header["height"]), int(header["bit_depth"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BadMagic(f"incomplete PFA1 header: {exc}") from exc
    if w % 2 or h % 2:
        raise OddDimensions(f"frame dimensions must be even, got {w}x{h}")
    raw = Path(path).read_bytes()
    if len(raw) != 2 * w * h:
        raise DimensionMismatch(f"header says {w}x{h} ({2 * w * h} bytes), payload has {len(raw)}")
    if layout is None:
        layout = SuperpixelLayout.from_list(header.get("layout", DEFAULT_LAYOUT.to_list()))
    data = np.frombuffer(raw, dtype="<u2").reshape(h, w).astype(np.uint16)
    return RawMosaicFrame(data, layout, bd)


def _write_pair(path, payload: bytes, header: dict):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(payload)
        _header_path(path).write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_raw_frame(frame: RawMosaicFrame, path):
    frame.validate()
    header = {
        "magic": FRAME_MAGIC,
        "width": frame.width,
        "height": frame.height,
        "bit_depth": frame.bit_depth,
        "layout": frame.layout.to_list(),
    }
    payload = np.ascontiguousarray(frame.data, dtype="<u2").tobytes()
    _write_pair(path, payload, header)


def write_tensor(planes, path, names: Sequence[str] | None = None, meta: dict | None = None):
    """Write a (planes, height, width) float32 tensor in the PFT1 format."""
    arr = np.asarray(planes, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionMismatch(f"tensor must be 2-D or 3-D, got shape {arr.shape}")
    n, h, w = arr.shape
    if names is not None and len(names) != n:
        raise DimensionMismatch(f"{len(names)} names for {n} planes")
    header = {
        "magic": TENSOR_MAGIC,
        "width": w,
        "height": h,
        "planes": n,
        "names": list(names) if names is not None else [f"plane{i}" for i in range(n)],
    }
    if meta:
        header["meta"] = meta
    _write_pair(path, np.ascontiguousarray(arr, dtype="<f4").tobytes(), header)


def read_tensor(path) -> tuple[np.ndarray, list[str]]:
    header = _read_header(path, TENSOR_MAGIC)
    w, h, n = int(header["width"]), int(header["height"]), int(header["planes"])
    raw = Path(path).read_bytes()
    if len(raw) != 4 * w * h * n:
        raise DimensionMismatch(f"header says {n}x{h}x{w} floats, payload has {len(raw)} bytes")
    arr = np.frombuffer(raw, dtype="<f4").reshape(n, h, w).astype(np.float32)
    return arr, list(header.get("names", []))


# --------------------------------------------------------------------------
# gaze dataset manifests


@dataclass
class FrameRecord:
    frame_path: str
    gaze_gt: tuple[float, float]
    condition_tag: str = "nominal"
    sequence_name: str = ""
    gaze_pred: tuple[float, float] | None = None

    def to_json(self) -> dict:
        out = {
            "frame_path": self.frame_path,
            "gaze_gt": [float(v) for v in self.gaze_gt],
            "condition_tag": self.condition_tag,
            "sequence_name": self.sequence_name,
        }
        if self.gaze_pred is not None:
            out["gaze_pred"] = [float(v) for v in self.gaze_pred]
        return out


@dataclass
class ParticipantRecords:
    participant_id: str
    eye: str = "left"
    camera_position: str = "lower_temporal"
    records: list[FrameRecord] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not self.records


@dataclass
class GazeDataset:
    participants: list[ParticipantRecords]
    root: Path = Path(".")
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, participant_id: str) -> ParticipantRecords:
        for p in self.participants:
            if p.participant_id == participant_id:
                return p
        raise KeyError(participant_id)

    @property
    def participant_ids(self) -> list[str]:
        return [p.participant_id for p in self.participants]

    @property
    def empty_participants(self) -> list[str]:
        return [p.participant_id for p in self.participants if p.is_empty]

    def resolve(self, record: FrameRecord) -> Path:
        path = Path(record.frame_path)
        return path if path.is_absolute() else self.root / path

    def to_json(self) -> dict:
        out = {
            "participants": [
                {
                    "participant_id": p.participant_id,
                    "eye": p.eye,
                    "camera_position": p.camera_position,
                    "records": [r.to_json() for r in p.records],
                }
                for p in self.participants
            ]
        }
        if self.metadata:
            out["metadata"] = self.metadata
        return out


_EYES = {"left", "right"}
_POSITIONS = {"higher_temporal", "lower_temporal"}


def _angle_pair(value, what: str) -> tuple[float, float]:
    try:
        yaw, pitch = (float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{what} must be a [yaw, pitch] pair, got {value!r}") from exc
    if not (math.isfinite(yaw) and math.isfinite(pitch)) or abs(yaw) > 90 or abs(pitch) > 90:
        raise ParseError(f"{what} out of range [-90, 90]: {value!r}")
    return yaw, pitch


def parse_manifest(doc, root=".", check_frames: bool = True) -> GazeDataset:
    """Build a GazeDataset from an already-decoded manifest document."""
    root = Path(root)
    if not isinstance(doc, dict) or not isinstance(doc.get("participants"), list):
        raise ParseError("manifest must be an object with a 'participants' list")
    seen = set()
    participants = []
    for entry in doc["participants"]:
        try:
            pid = str(entry["participant_id"])
            eye = entry.get("eye", "left")
            pos = entry.get("camera_position", "lower_temporal")
            raw_records = entry.get("records", [])
        except (KeyError, AttributeError, TypeError) as exc:
            raise ParseError(f"bad participant entry: {exc}") from exc
        if pid in seen:
            raise DuplicateParticipant(f"participant_id {pid!r} appears more than once")
        seen.add(pid)
        if eye not in _EYES:
            raise ParseError(f"participant {pid}: eye must be one of {sorted(_EYES)}")
        if pos not in _POSITIONS:
            raise ParseError(f"participant {pid}: camera_position must be one of {sorted(_POSITIONS)}")
        records = []
        for rec in raw_records:
            try:
                fr = FrameRecord(
                    frame_path=str(rec["frame_path"]),
                    gaze_gt=_angle_pair(rec["gaze_gt"], "gaze_gt"),
                    condition_tag=str(rec.get("condition_tag", "nominal")),
                    sequence_name=str(rec.get("sequence_name", "")),
                    gaze_pred=(
                        _angle_pair(rec["gaze_pred"], "gaze_pred") if rec.get("gaze_pred") is not None else None
                    ),
                )
            except (KeyError, TypeError) as exc:
                raise ParseError(f"participant {pid}: bad record {rec!r}") from exc
            if check_frames:
                path = Path(fr.frame_path)
                path = path if path.is_absolute() else root / path
                if not path.is_file():
                    raise UnresolvedFramePath(f"participant {pid}: frame {fr.frame_path} not found under {root}")
            records.append(fr)
        participants.append(ParticipantRecords(pid, eye, pos, records))
    return GazeDataset(participants, root, dict(doc.get("metadata", {})))


def load_gaze_dataset(manifest_path, check_frames: bool = True) -> GazeDataset:
    """Load a manifest; relative frame paths resolve against its directory."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: {exc}") from exc
    return parse_manifest(doc, manifest_path.parent, check_frames=check_frames)


def save_gaze_dataset(dataset: GazeDataset, manifest_path):
    try:
        Path(manifest_path).parent.mkdir(parents=True, exist_ok=True)
        Path(manifest_path).write_text(json.dumps(dataset.to_json(), indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {manifest_path}: {exc}") from exc


def frame_paths(name) -> tuple[str, str]:
    """Payload and header paths for a frame base name."""
    base = os.fspath(name)
    if not base.endswith(".pfaraw"):
        base += ".pfaraw"
    return base, base + ".json"
