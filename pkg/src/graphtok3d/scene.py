"""Scene ingestion: object proposals, derived geometry, manifest I/O.

A scene manifest is UTF-8 JSON::

    {"scene_id": "scene0000_00",
     "objects": [{"id": 0, "points": [[x, y, z, r, g, b], ...]},
                 {"id": 1, "points_file": "obj1.3dgp"}]}

Coordinates are meters. Colors are stored in [0, 1]; an object whose color
channels exceed 1 is taken to be 8-bit and divided by 255.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import (DuplicateObjectId, EmptyScene, InvalidProposal, ParseError,
                     TooManyObjects, ValidationError)

MAX_OBJECTS = 200


@dataclass(frozen=True, eq=False)
class AxisAlignedBox:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"box min {lo} exceeds max {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)
        object.__setattr__(self, "bounds", (tuple(lo.tolist()), tuple(hi.tolist())))

    @classmethod
    def from_array(cls, values):
        """Build from ``[minx, miny, minz, maxx, maxy, maxz]``."""
        values = np.asarray(values, dtype=np.float64).reshape(6)
        return cls(values[:3], values[3:])

    def as_array(self):
        return np.concatenate([self.min, self.max])

    @property
    def extent(self):
        return self.max - self.min

    @property
    def center(self):
        return 0.5 * (self.min + self.max)

    @property
    def volume(self):
        (x0, y0, z0), (x1, y1, z1) = self.bounds
        return (x1 - x0) * (y1 - y0) * (z1 - z0)

    def contains(self, p):
        p = np.asarray(p)
        return bool(np.all(p >= self.min) and np.all(p <= self.max))

    def translated(self, offset):
        return AxisAlignedBox(self.min + offset, self.max + offset)

    def __eq__(self, other):
        if not isinstance(other, AxisAlignedBox):
            return NotImplemented
        return np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max)

    def __hash__(self):
        return hash((self.min.tobytes(), self.max.tobytes()))

    def __repr__(self):
        return f"AxisAlignedBox(min={self.min.tolist()}, max={self.max.tolist()})"


def _as_points(points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] not in (3, 6):
        raise InvalidProposal(f"points must have shape (m, 3) or (m, 6), got {points.shape}")
    if points.shape[0] == 0:
        raise InvalidProposal("empty point array")
    return points


def compute_centroid(points):
    """Componentwise mean of the xyz columns."""
    points = _as_points(points)
    return points[:, :3].mean(axis=0)


def compute_aabb(points):
    points = _as_points(points)
    xyz = points[:, :3]
    return AxisAlignedBox(xyz.min(axis=0), xyz.max(axis=0))


@dataclass(frozen=True, eq=False)
class ObjectProposal:
    """One segmented object. ``centroid`` and ``aabb`` are derived from ``points``."""

    id: int
    points: np.ndarray
    centroid: np.ndarray = field(init=False)
    aabb: AxisAlignedBox = field(init=False)

    def __post_init__(self):
        pts = _as_points(self.points)
        if pts.shape[1] == 3:
            raise InvalidProposal(f"object {self.id}: points need 6 columns (xyz + rgb)")
        if not np.all(np.isfinite(pts)):
            raise InvalidProposal(f"object {self.id}: non-finite point values")
        rgb = pts[:, 3:]
        if np.any(rgb < 0.0) or np.any(rgb > 1.0):
            raise InvalidProposal(f"object {self.id}: color channels outside [0, 1]")
        if not 0 <= int(self.id) < MAX_OBJECTS:
            raise InvalidProposal(f"object id {self.id} outside [0, {MAX_OBJECTS})")
        pts = pts.copy()
        pts.flags.writeable = False
        centroid = compute_centroid(pts)
        centroid.flags.writeable = False
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "centroid", centroid)
        object.__setattr__(self, "aabb", compute_aabb(pts))

    @property
    def point_count(self):
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: str
    proposals: tuple

    def __post_init__(self):
        props = tuple(sorted(self.proposals, key=lambda p: p.id))
        if not props:
            raise EmptyScene(f"scene {self.scene_id!r} has no objects")
        if len(props) > MAX_OBJECTS:
            raise TooManyObjects(f"{len(props)} objects exceeds the limit of {MAX_OBJECTS}")
        ids = [p.id for p in props]
        if len(set(ids)) != len(ids):
            dup = sorted(i for i in set(ids) if ids.count(i) > 1)
            raise DuplicateObjectId(f"duplicate object ids {dup}")
        if ids != list(range(len(ids))):
            raise ValidationError(f"object ids must be dense in [0, {len(ids)}), got {ids}")
        object.__setattr__(self, "proposals", props)

    @property
    def n(self):
        return len(self.proposals)

    def __getitem__(self, i):
        return self.proposals[i]

    def __iter__(self):
        return iter(self.proposals)

    def __len__(self):
        return len(self.proposals)

    def centroids(self):
        return np.stack([p.centroid for p in self.proposals])

    def translated(self, offset):
        offset = np.asarray(offset, dtype=np.float64)
        shift = np.concatenate([offset, np.zeros(3)])
        return Scene(self.scene_id, tuple(ObjectProposal(p.id, p.points + shift) for p in self))


@dataclass(frozen=True)
class RawFeatures:
    """Encoder outputs for one scene.

    ``z2d`` and ``zv`` are indexed by object id; ``ze`` maps a directed
    ``(src, dst)`` pair to its edge vector.
    """

    z2d: np.ndarray
    zv: np.ndarray
    ze: dict

    def __post_init__(self):
        for name in ("z2d", "zv"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2:
                raise ValidationError(f"{name} must be 2-D")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if len(self.z2d) != len(self.zv):
            raise ValidationError("z2d and zv must have one row per object")
        ze = {(int(s), int(d)): np.asarray(v, dtype=np.float64) for (s, d), v in self.ze.items()}
        for key, v in ze.items():
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"edge feature {key} has non-finite entries")
        object.__setattr__(self, "ze", ze)

    @property
    def dims(self):
        d_e = next(iter(self.ze.values())).shape[0] if self.ze else 0
        return self.z2d.shape[1], self.zv.shape[1], d_e


# -- manifest I/O -----------------------------------------------------------

def _parse_points(raw, where):
    try:
        pts = np.array(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"points are not a numeric array: {exc}", location=where) from None
    if pts.ndim != 2 or pts.shape[1] != 6:
        if pts.size == 0:
            raise InvalidProposal(f"{where}: empty point array")
        raise ParseError(f"points must be a list of 6-element records, got shape {pts.shape}",
                         location=where)
    return pts


def _normalize_colors(pts):
    rgb = pts[:, 3:]
    if rgb.size and rgb.max() > 1.0:
        if rgb.max() > 255.0 or rgb.min() < 0.0:
            raise InvalidProposal("8-bit color channels must lie in [0, 255]")
        pts = pts.copy()
        pts[:, 3:] = rgb / 255.0
    return pts


def parse_manifest(data, base_dir="."):
    """Build a Scene from manifest bytes (or str). Pure function of the bytes
    plus any referenced point files."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("manifest is not valid UTF-8", location=f"byte {exc.start}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, location=f"line {exc.lineno} column {exc.colno} (byte {exc.pos})") from None
    if not isinstance(doc, dict):
        raise ParseError("manifest must be a JSON object", location="$")
    scene_id = doc.get("scene_id")
    if not isinstance(scene_id, str):
        raise ParseError("missing or non-string scene_id", location="$.scene_id")
    objects = doc.get("objects")
    if not isinstance(objects, list):
        raise ParseError("missing objects list", location="$.objects")
    if not objects:
        raise EmptyScene(f"scene {scene_id!r} has no objects")
    if len(objects) > MAX_OBJECTS:
        raise TooManyObjects(f"{len(objects)} objects exceeds the limit of {MAX_OBJECTS}")
    proposals = []
    seen = set()
    for idx, rec in enumerate(objects):
        where = f"$.objects[{idx}]"
        if not isinstance(rec, dict) or not isinstance(rec.get("id"), int) or isinstance(rec.get("id"), bool):
            raise ParseError("object record needs an integer id", location=where)
        oid = rec["id"]
        if oid in seen:
            raise DuplicateObjectId(f"duplicate object id {oid} at {where}")
        seen.add(oid)
        if "points" in rec:
            pts = _parse_points(rec["points"], where + ".points")
        elif "points_file" in rec:
            path = os.path.join(base_dir, rec["points_file"])
            try:
                pts = binio.read_points(path)
            except OSError as exc:
                raise ParseError(f"cannot read points file: {exc}", location=where + ".points_file") from None
            except ParseError as exc:
                raise ParseError(f"{rec['points_file']}: {exc}", location=where + ".points_file") from None
        else:
            raise ParseError("object record needs points or points_file", location=where)
        if len(pts) == 0:
            raise InvalidProposal(f"{where}: empty point array")
        proposals.append(ObjectProposal(oid, _normalize_colors(pts)))
    return Scene(scene_id, tuple(proposals))


def load_scene(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_manifest(data, base_dir=os.path.dirname(os.path.abspath(path)))


def save_scene(scene, path, binary=False):
    """Write a manifest. With ``binary=True`` every object's points go to a
    sibling ``3DGP`` file (float32), otherwise they are inlined as JSON."""
    base = os.path.dirname(os.path.abspath(path))
    stem = os.path.splitext(os.path.basename(path))[0]
    objects = []
    for p in scene:
        if binary:
            name = f"{stem}_obj{p.id:03d}.3dgp"
            binio.write_points(os.path.join(base, name), p.points)
            objects.append({"id": p.id, "points_file": name})
        else:
            objects.append({"id": p.id, "points": p.points.tolist()})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"scene_id": scene.scene_id, "objects": objects}, fh)
