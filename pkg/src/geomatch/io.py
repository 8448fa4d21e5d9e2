"""On-disk formats: GMGRID01 descriptor grids, view JSON, manifests, match CSVs."""
from __future__ import annotations

import csv
import datetime
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from geomatch.dense import FeatureGrid
from geomatch.epipolar import CameraIntrinsics, CameraPose, PointMatch, make_matches
from geomatch.errors import GridFormatError, MalformedCSVError, MissingInputError
from geomatch.synthetic import ViewpointParams

GRID_MAGIC = b"GMGRID01"
_GRID_HEADER = struct.Struct("<8sIII")
MATCH_HEADER = ("pair_id", "ax", "ay", "bx", "by", "confidence", "method")


def fmt_float(x: float) -> str:
    """Shortest round-trip representation; stable across runs."""
    return repr(float(x))


def created_timestamp() -> str:
    """ISO timestamp from SOURCE_DATE_EPOCH (default 0) so reruns are byte-identical."""
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.datetime.fromtimestamp(epoch, tz=datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"missing file: {p}")
    return json.loads(p.read_text())


# ---------------------------------------------------------------- grids

def encode_grid(grid: FeatureGrid) -> bytes:
    h, w, d = grid.data.shape
    body = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
    return _GRID_HEADER.pack(GRID_MAGIC, h, w, d) + body


def decode_grid(buf: bytes, cell_size_px: float, source: str = "<bytes>") -> FeatureGrid:
    if len(buf) < _GRID_HEADER.size:
        raise GridFormatError(f"{source}: truncated header")
    magic, h, w, d = _GRID_HEADER.unpack_from(buf)
    if magic != GRID_MAGIC:
        raise GridFormatError(f"{source}: bad magic {magic!r}")
    expected = _GRID_HEADER.size + 4 * h * w * d
    if len(buf) != expected:
        raise GridFormatError(f"{source}: expected {expected} bytes, found {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", offset=_GRID_HEADER.size).reshape(h, w, d).astype(np.float32)
    try:
        return FeatureGrid(data, float(cell_size_px))
    except ValueError as exc:
        raise GridFormatError(f"{source}: {exc}") from exc


def write_grid(path, grid: FeatureGrid) -> None:
    Path(path).write_bytes(encode_grid(grid))


def read_grid(path, cell_size_px: float) -> FeatureGrid:
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"missing file: {p}")
    return decode_grid(p.read_bytes(), cell_size_px, str(p))


# ---------------------------------------------------------------- views

@dataclass(frozen=True)
class ViewRecord:
    """A view as stored on disk: camera plus the paths of its two grids."""

    view_id: str
    viewpoint: ViewpointParams
    pose: CameraPose
    intrinsics: CameraIntrinsics
    width: int
    height: int
    coarse_cell_px: float
    fine_cell_px: float
    coarse_path: Path
    fine_path: Path

    def load_grids(self) -> tuple[FeatureGrid, FeatureGrid]:
        return read_grid(self.coarse_path, self.coarse_cell_px), read_grid(self.fine_path, self.fine_cell_px)


def view_to_dict(vid: str, view, coarse_file: str, fine_file: str) -> dict:
    return {
        "view_id": vid,
        "viewpoint": view.viewpoint.to_dict(),
        "pose": view.pose.to_dict(),
        "intrinsics": view.intrinsics.to_dict(),
        "width": view.width,
        "height": view.height,
        "coarse_cell_px": view.coarse.cell_size_px,
        "fine_cell_px": view.fine.cell_size_px,
        "coarse_grid": coarse_file,
        "fine_grid": fine_file,
    }


def read_view(path) -> ViewRecord:
    p = Path(path)
    d = read_json(p)
    pose = CameraPose(np.array(d["pose"]["rotation"], dtype=np.float64), np.array(d["pose"]["translation"], dtype=np.float64))
    k = d["intrinsics"]
    v = d["viewpoint"]
    return ViewRecord(
        d["view_id"],
        ViewpointParams(v["distance"], v["alpha"], v["beta"]),
        pose,
        CameraIntrinsics(k["fx"], k["fy"], k["cx"], k["cy"]),
        int(d["width"]),
        int(d["height"]),
        float(d["coarse_cell_px"]),
        float(d["fine_cell_px"]),
        p.parent / d["coarse_grid"],
        p.parent / d["fine_grid"],
    )


# ---------------------------------------------------------------- manifest

@dataclass(frozen=True)
class PairEntry:
    pair_id: str
    variable: str
    offset: float
    scene_seed: int
    view_a: str
    view_b: str
    anchors: str
    gt: str


@dataclass
class Manifest:
    root: Path
    data: dict

    @classmethod
    def load(cls, dataset_dir) -> "Manifest":
        root = Path(dataset_dir)
        return cls(root, read_json(root / "manifest.json"))

    @property
    def pairs(self) -> list[PairEntry]:
        return [
            PairEntry(p["pair_id"], p["variable"], float(p["offset"]), int(p["scene_seed"]), p["view_a"], p["view_b"], p["anchors"], p["gt"])
            for p in self.data["pairs"]
        ]

    @property
    def planar_patch(self):
        return self.data.get("planar_patch")

    def view(self, vid: str) -> ViewRecord:
        return read_view(self.root / self.data["views"][vid])

    def path(self, rel: str) -> Path:
        return self.root / rel


# ---------------------------------------------------------------- match files

@dataclass(frozen=True)
class MatchRow:
    pair_id: str
    ax: float
    ay: float
    bx: float
    by: float
    confidence: float
    method: str


def rows_from_arrays(pair_id: str, method: str, pa, pb, conf) -> list[MatchRow]:
    pa = np.asarray(pa, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(pb, dtype=np.float64).reshape(-1, 2)
    conf = np.clip(np.asarray(conf, dtype=np.float64).reshape(-1), 0.0, 1.0)
    return [MatchRow(pair_id, *map(float, a), *map(float, b), float(c), method) for a, b, c in zip(pa, pb, conf)]


def write_matches(path, rows: Iterable[MatchRow]) -> None:
    lines = [",".join(MATCH_HEADER)]
    for r in rows:
        vals = (r.ax, r.ay, r.bx, r.by, r.confidence)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite coordinate in pair {r.pair_id}")
        lines.append(",".join([r.pair_id, *map(fmt_float, vals), r.method]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matches(path) -> list[MatchRow]:
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"missing file: {p}")
    with p.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MATCH_HEADER:
            raise MalformedCSVError(p, 1, f"header must be {','.join(MATCH_HEADER)}")
        out = []
        for row in reader:
            line = reader.line_num
            if len(row) != len(MATCH_HEADER):
                raise MalformedCSVError(p, line, f"expected {len(MATCH_HEADER)} fields, found {len(row)}")
            try:
                vals = [float(x) for x in row[1:6]]
            except ValueError:
                raise MalformedCSVError(p, line, "non-numeric coordinate or confidence") from None
            if not all(math.isfinite(v) for v in vals):
                raise MalformedCSVError(p, line, "non-finite value")
            out.append(MatchRow(row[0], *vals, row[6]))
    return out


def group_by_method(rows: Sequence[MatchRow]) -> dict[str, list[PointMatch]]:
    grouped: dict[str, list[MatchRow]] = {}
    for r in rows:
        grouped.setdefault(r.method, []).append(r)
    out = {}
    for method, rs in grouped.items():
        pa = np.array([[r.ax, r.ay] for r in rs])
        pb = np.array([[r.bx, r.by] for r in rs])
        out[method] = make_matches(pa, pb, np.array([r.confidence for r in rs]))
    return out
