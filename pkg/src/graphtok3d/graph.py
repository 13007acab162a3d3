"""k-nearest-neighbor scene graph with duplicate suppression.

Pipeline order is fixed: box NMS removes duplicate proposals, then every
survivor picks up to ``k`` surviving neighbors by centroid distance
(skipping anything closer than ``min_neighbor_distance``), then each
directed edge gets a raw feature vector.
"""

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import MissingEdgeFeature, ParseError, ValidationError

GEOMETRIC = "geometric_standin"
EXTERNAL = "external_file"
BASE_DESCRIPTOR_DIM = 12
_LOG_EPS = 1e-6


@dataclass(frozen=True)
class GraphConfig:
    k: int = 2
    nms_iou_threshold: float | None = 0.99
    min_neighbor_distance: float = 0.01
    relation_source: str = GEOMETRIC
    edge_dim: int = 512

    def __post_init__(self):
        if self.k < 0:
            raise ValidationError(f"k must be >= 0, got {self.k}")
        t = self.nms_iou_threshold
        if t is not None and not 0.0 <= t <= 1.0:
            raise ValidationError(f"NMS threshold must be in [0, 1] or None, got {t}")
        if self.min_neighbor_distance < 0:
            raise ValidationError("min_neighbor_distance must be >= 0")
        if self.relation_source not in (GEOMETRIC, EXTERNAL):
            raise ValidationError(f"unknown relation source {self.relation_source!r}")
        if self.edge_dim < 1:
            raise ValidationError("edge_dim must be positive")


@dataclass(frozen=True)
class RelationEdge:
    src: int
    dst: int
    ze: np.ndarray


@dataclass(frozen=True, eq=False)
class SceneGraph:
    """Filtered graph. ``scene`` is None when the graph was read back from disk."""

    scene: object
    surviving_ids: tuple
    neighbor_lists: dict
    edges: tuple

    @property
    def n_surviving(self):
        return len(self.surviving_ids)

    def edge_features(self):
        return {(e.src, e.dst): e.ze for e in self.edges}

    def edge_pairs(self):
        return [(e.src, e.dst) for e in self.edges]


def _worker_count():
    try:
        return max(1, int(os.environ.get("GRAPHTOK3D_THREADS", "1")))
    except ValueError:
        return 1


def aabb_iou(a, b):
    """Volume IoU of two axis-aligned boxes.

    Identical zero-volume boxes give 1; any other zero-volume union gives 0.
    """
    (alo, ahi), (blo, bhi) = a.bounds, b.bounds
    inter = 1.0
    for d in range(3):
        side = min(ahi[d], bhi[d]) - max(alo[d], blo[d])
        if side <= 0.0:
            inter = 0.0
            break
        inter *= side
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 1.0 if a == b else 0.0
    iou = inter / union
    if iou >= 1.0:
        # rounding can hide a sub-ulp difference; only equal boxes score exactly 1
        return 1.0 if a == b else float(np.nextafter(1.0, 0.0))
    return max(0.0, iou)


def nms_dedup(scene, threshold):
    """Greedy box NMS. Larger point clouds are kept first (ties: lower id).

    A proposal is dropped when its IoU with any kept proposal is
    ``>= threshold``. ``threshold=None`` disables suppression. Returns the
    surviving ids in ascending order.
    """
    if threshold is None:
        return [p.id for p in scene]
    order = sorted(scene, key=lambda p: (-p.point_count, p.id))
    kept = []
    for p in order:
        if all(aabb_iou(p.aabb, q.aabb) < threshold for q in kept):
            kept.append(p)
    return sorted(p.id for p in kept)


def select_knn_neighbors(scene, survivors, cfg):
    """Per-survivor neighbor ids, nearest first (ties by ascending id)."""
    ids = np.asarray(sorted(survivors), dtype=np.int64)
    if len(ids) == 0:
        raise ValidationError("no surviving objects")
    cents = np.stack([scene[i].centroid for i in ids])
    diff = cents[:, None, :] - cents[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    out = {}
    for row, i in enumerate(ids):
        d = dist[row]
        ok = (ids != i) & (d >= cfg.min_neighbor_distance)
        cand = np.flatnonzero(ok)
        order = cand[np.lexsort((ids[cand], d[cand]))]
        out[int(i)] = [int(ids[c]) for c in order[:cfg.k]]
    return out


def _vertical_overlap(a, b):
    (alo, ahi), (blo, bhi) = a.bounds, b.bounds
    inter = max(0.0, min(ahi[2], bhi[2]) - max(alo[2], blo[2]))
    union = max(ahi[2], bhi[2]) - min(alo[2], blo[2])
    if union <= 0.0:
        return 1.0
    return inter / union


def relation_descriptor(a, b):
    """The 12 base values of the geometric relation feature from ``a`` to ``b``."""
    offset = b.centroid - a.centroid
    dist = math.sqrt(float(offset @ offset))
    log_ratio = np.log((b.aabb.extent + _LOG_EPS) / (a.aabb.extent + _LOG_EPS))
    direction = offset / dist if dist > 0 else np.zeros(3)
    return np.concatenate([
        offset, [dist], log_ratio, [aabb_iou(a.aabb, b.aabb)],
        [_vertical_overlap(a.aabb, b.aabb)], direction,
    ])


def geometric_relation_feature(a, b, dim):
    """Deterministic stand-in for a learned relation embedding.

    The 12-value descriptor is tiled to ``dim`` entries; copy ``t`` is scaled
    by ``1/(t+1)`` and the last copy is truncated.
    """
    if a.id == b.id:
        raise ValidationError("relation feature needs two distinct objects")
    base = relation_descriptor(a, b)
    reps = -(-dim // BASE_DESCRIPTOR_DIM)
    scale = np.repeat(1.0 / np.arange(1, reps + 1), BASE_DESCRIPTOR_DIM)
    return (np.tile(base, reps) * scale)[:dim]


def build_scene_graph(scene, cfg=None, external=None):
    """NMS, then k-NN with the minimum-distance filter, then edge features.

    ``external`` maps ``(src, dst)`` to a feature vector and is required when
    ``cfg.relation_source`` is ``external_file``.
    """
    cfg = cfg or GraphConfig()
    survivors = nms_dedup(scene, cfg.nms_iou_threshold)
    neighbors = select_knn_neighbors(scene, survivors, cfg)
    pairs = [(i, j) for i in survivors for j in neighbors[i]]

    if cfg.relation_source == EXTERNAL:
        external = external or {}
        missing = [p for p in pairs if p not in external]
        if missing:
            raise MissingEdgeFeature(*missing[0])
        feats = [np.asarray(external[p], dtype=np.float64) for p in pairs]
    else:
        def feature(pair):
            return geometric_relation_feature(scene[pair[0]], scene[pair[1]], cfg.edge_dim)

        workers = _worker_count()
        if workers > 1 and len(pairs) > 64:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                feats = list(pool.map(feature, pairs))
        else:
            feats = [feature(p) for p in pairs]

    edges = tuple(RelationEdge(i, j, z) for (i, j), z in zip(pairs, feats))
    return SceneGraph(scene, tuple(survivors), neighbors, edges)


# -- graph.json + edge features ----------------------------------------------

def graph_to_dict(graph, scene_id=None):
    if scene_id is None and graph.scene is not None:
        scene_id = graph.scene.scene_id
    return {
        "scene_id": scene_id,
        "survivors": list(graph.surviving_ids),
        "neighbors": {str(i): list(graph.neighbor_lists[i]) for i in graph.surviving_ids},
        "edges": [[e.src, e.dst] for e in graph.edges],
    }


def save_graph(graph, out_dir, edge_file="edge_features.3dgf"):
    """Write ``graph.json`` and the edge-feature file into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    doc = graph_to_dict(graph)
    doc["edge_features"] = edge_file
    with open(os.path.join(out_dir, "graph.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    dim = graph.edges[0].ze.shape[0] if graph.edges else 0
    mat = np.stack([e.ze for e in graph.edges]) if graph.edges else np.zeros((0, dim))
    binio.write_features(os.path.join(out_dir, edge_file), mat, graph.edge_pairs())


def load_graph(path):
    """Read a ``graph.json`` (plus its edge features, when present)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw.decode("utf-8"))
        survivors = tuple(int(i) for i in doc["survivors"])
        neighbors = {int(k): [int(j) for j in v] for k, v in doc["neighbors"].items()}
        pairs = [(int(s), int(d)) for s, d in doc["edges"]]
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, location=f"line {exc.lineno} column {exc.colno}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed graph file: {exc!r}", location=path) from None
    feats = {}
    edge_file = doc.get("edge_features")
    if edge_file:
        fpath = os.path.join(os.path.dirname(os.path.abspath(path)), edge_file)
        if os.path.exists(fpath):
            feats = binio.read_edge_features(fpath)
    edges = tuple(RelationEdge(s, d, feats.get((s, d))) for s, d in pairs)
    return SceneGraph(None, survivors, neighbors, edges)
