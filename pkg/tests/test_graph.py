import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphtok3d.errors import MissingEdgeFeature, ValidationError
from graphtok3d.graph import (EXTERNAL, GraphConfig, aabb_iou, build_scene_graph,
                              geometric_relation_feature, load_graph, nms_dedup, save_graph,
                              select_knn_neighbors)
from graphtok3d.scene import AxisAlignedBox, ObjectProposal, Scene

from conftest import box_points, make_scene
from oracles import knn_oracle, nms_oracle, plain_iou, relation_feature_oracle, voxel_iou


def cube(offset=(0, 0, 0), size=1.0):
    o = np.asarray(offset, float)
    return AxisAlignedBox(o, o + size)


def test_iou_identical():
    assert aabb_iou(cube(), cube()) == 1.0


def test_iou_disjoint():
    assert aabb_iou(cube(), cube((2, 0, 0))) == 0.0


def test_iou_touching_faces():
    assert aabb_iou(cube(), cube((1, 0, 0))) == 0.0


def test_iou_half_shift_vs_voxels():
    a, b = cube(), cube((0.5, 0, 0))
    oracle = voxel_iou(((0, 0, 0), (1, 1, 1)), ((0.5, 0, 0), (1.5, 1, 1)))
    assert abs(aabb_iou(a, b) - oracle) <= 1e-3
    assert aabb_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)


def test_iou_degenerate():
    p = AxisAlignedBox([1, 1, 1], [1, 1, 1])
    q = AxisAlignedBox([2, 2, 2], [2, 2, 2])
    assert aabb_iou(p, p) == 1.0
    assert aabb_iou(p, q) == 0.0
    assert aabb_iou(p, cube()) == 0.0


boxes = st.builds(
    lambda lo, ext: AxisAlignedBox(np.array(lo), np.array(lo) + np.array(ext)),
    st.tuples(*[st.floats(-5, 5)] * 3), st.tuples(*[st.floats(0.01, 3)] * 3))


@given(boxes, boxes, st.tuples(*[st.floats(-10, 10)] * 3))
@settings(max_examples=200, deadline=None)
def test_iou_properties(a, b, shift):
    v = aabb_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == aabb_iou(b, a)
    assert aabb_iou(a, a) == 1.0
    if a != b:
        assert v < 1.0
    s = np.array(shift)
    assert aabb_iou(a.translated(s), b.translated(s)) == pytest.approx(v, abs=1e-9)


def test_nms_exact_duplicate_keeps_lower_id():
    pts = box_points((0, 0, 0))
    scene = Scene("d", (ObjectProposal(0, pts), ObjectProposal(1, pts.copy())))
    assert nms_dedup(scene, 0.99) == [0]


def test_nms_prefers_larger_cloud(rng):
    small = box_points((0, 0, 0))
    big = box_points((0, 0, 0), n=40, rng=rng)
    scene = Scene("d", (ObjectProposal(0, small), ObjectProposal(1, big)))
    assert nms_dedup(scene, 0.99) == [1]


def test_nms_low_overlap_all_survive():
    scene = make_scene([(0, 0, 0), (0.3, 0, 0), (3, 0, 0)])
    assert nms_dedup(scene, 0.99) == [0, 1, 2]
    assert nms_dedup(scene, None) == [0, 1, 2]


def _duplicate_scene(rng, n_base=5, n_dup=3):
    """Random cubes plus exact and near (sub-mm) duplicates of some of them."""
    props = []
    for i in range(n_base):
        props.append(ObjectProposal(i, box_points(rng.uniform(0, 6, 3), half=rng.uniform(0.1, 0.4),
                                                  n=int(rng.integers(8, 30)), rng=rng)))
    for d in range(n_dup):
        src = props[int(rng.integers(n_base))]
        pts = src.points.copy()
        if d % 2:
            pts[:, :3] += rng.uniform(-2e-4, 2e-4, size=3)
        props.append(ObjectProposal(len(props), pts))
    order = rng.permutation(len(props))
    return Scene("dups", tuple(ObjectProposal(int(k), props[i].points) for k, i in zip(range(len(props)), order)))


def _oracle_survivors(scene, t):
    boxes = [(tuple(p.aabb.min), tuple(p.aabb.max)) for p in scene]
    return nms_oracle(boxes, [p.point_count for p in scene], t)


def test_nms_planted_cluster_vs_oracle(rng):
    for _ in range(30):
        scene = _duplicate_scene(rng, n_base=4, n_dup=1)
        assert nms_dedup(scene, 0.99) == _oracle_survivors(scene, 0.99)
        assert nms_dedup(scene, 0.3) == _oracle_survivors(scene, 0.3)


def test_nms_idempotent(rng):
    for _ in range(20):
        scene = _duplicate_scene(rng)
        keep = nms_dedup(scene, 0.99)
        sub = Scene("sub", tuple(ObjectProposal(n, scene[i].points) for n, i in enumerate(keep)))
        assert nms_dedup(sub, 0.99) == list(range(len(keep)))


def test_knn_single_object():
    scene = make_scene([(0, 0, 0)])
    assert select_knn_neighbors(scene, [0], GraphConfig(k=2)) == {0: []}


def test_knn_collinear():
    scene = make_scene([(0, 0, 0), (1, 0, 0), (3, 0, 0)])
    assert select_knn_neighbors(scene, [0, 1, 2], GraphConfig(k=1)) == {0: [1], 1: [0], 2: [1]}


def test_knn_tie_breaks_by_id():
    scene = make_scene([(0, 0, 0), (1, 0, 0), (-1, 0, 0)], half=0.25)
    assert select_knn_neighbors(scene, [0, 1, 2], GraphConfig(k=1))[0] == [1]


def test_knn_vs_pairwise_sort(rng):
    for _ in range(10):
        centers = rng.uniform(0, 10, size=(20, 3))
        scene = make_scene(centers)
        cfg = GraphConfig(k=2, min_neighbor_distance=0.01)
        got = select_knn_neighbors(scene, list(range(20)), cfg)
        want = knn_oracle([tuple(c) for c in scene.centroids()], list(range(20)), 2, 0.01)
        assert got == want


def test_min_distance_monotone(rng):
    centers = rng.uniform(0, 0.2, size=(15, 3))
    scene = make_scene(centers, half=0.01)
    prev = None
    for md in np.linspace(0, 0.1, 21):
        lens = {i: len(v) for i, v in select_knn_neighbors(scene, list(range(15)), GraphConfig(k=4, min_neighbor_distance=md)).items()}
        if prev is not None:
            assert all(lens[i] <= prev[i] for i in lens)
        prev = lens


def test_relation_feature_translation():
    a = ObjectProposal(0, box_points((0, 0, 0)))
    b = ObjectProposal(1, box_points((1, 0, 0)))
    f = geometric_relation_feature(a, b, 12)
    np.testing.assert_allclose(f[0:3], [1, 0, 0], atol=1e-12)
    assert f[3] == pytest.approx(1.0)
    np.testing.assert_allclose(f[4:7], [0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(f[9:12], [1, 0, 0], atol=1e-12)


def test_relation_feature_antisymmetry(rng):
    a = ObjectProposal(0, box_points(rng.uniform(size=3), half=0.3, n=20, rng=rng))
    b = ObjectProposal(1, box_points(rng.uniform(size=3) + 1, half=0.1, n=20, rng=rng))
    ab = geometric_relation_feature(a, b, 12)
    ba = geometric_relation_feature(b, a, 12)
    np.testing.assert_allclose(ab[0:3], -ba[0:3])
    np.testing.assert_allclose(ab[9:12], -ba[9:12])
    assert ab[3] == ba[3]


def test_relation_feature_vs_rederivation(rng):
    for dim in (12, 30, 512):
        pa = box_points(rng.uniform(0, 3, 3), half=rng.uniform(0.1, 0.5), n=30, rng=rng)
        pb = box_points(rng.uniform(0, 3, 3), half=rng.uniform(0.1, 0.5), n=25, rng=rng)
        got = geometric_relation_feature(ObjectProposal(0, pa), ObjectProposal(1, pb), dim)
        want = relation_feature_oracle(pa.tolist(), pb.tolist(), 0, 1, dim)
        assert got.shape == (dim,)
        np.testing.assert_allclose(got, want, atol=1e-9, rtol=0)


def test_relation_feature_same_object():
    a = ObjectProposal(0, box_points((0, 0, 0)))
    with pytest.raises(ValidationError):
        geometric_relation_feature(a, a, 12)


def test_build_two_objects():
    g = build_scene_graph(make_scene([(0, 0, 0), (2, 0, 0)]), GraphConfig(k=2, edge_dim=16))
    assert g.edge_pairs() == [(0, 1), (1, 0)]
    assert all(e.ze.shape == (16,) for e in g.edges)


def test_build_100_saturated(rng):
    grid = [(x, y, z) for x in range(5) for y in range(5) for z in range(4)]
    centers = np.array(grid, float) * 1.5 + rng.uniform(-0.1, 0.1, size=(100, 3))
    g = build_scene_graph(make_scene(centers), GraphConfig(k=2, edge_dim=12))
    assert len(g.edges) == 200
    assert all(len(v) == 2 for v in g.neighbor_lists.values())


def test_build_matches_staged_oracle(rng):
    for _ in range(10):
        scene = _duplicate_scene(rng, n_base=8, n_dup=4)
        cfg = GraphConfig(k=2, edge_dim=12)
        g = build_scene_graph(scene, cfg)
        surv = _oracle_survivors(scene, 0.99)
        nbrs = knn_oracle([tuple(p.centroid) for p in scene], surv, 2, 0.01)
        pairs = [(i, j) for i in surv for j in nbrs[i]]
        assert list(g.surviving_ids) == surv
        assert g.edge_pairs() == pairs
        assert all(i != j for i, j in pairs)
        # duplicates never neighbor their own copy
        for i, j in pairs:
            assert plain_iou((tuple(scene[i].aabb.min), tuple(scene[i].aabb.max)),
                             (tuple(scene[j].aabb.min), tuple(scene[j].aabb.max))) < 0.99


def test_nms_off_min_dist_blocks_self_duplicates():
    pts = box_points((0, 0, 0))
    scene = Scene("d", (ObjectProposal(0, pts), ObjectProposal(1, pts.copy()),
                        ObjectProposal(2, box_points((1, 0, 0)))))
    g = build_scene_graph(scene, GraphConfig(k=2, nms_iou_threshold=None, edge_dim=12))
    assert g.neighbor_lists == {0: [2], 1: [2], 2: [0, 1]}


def test_translation_invariance(rng):
    scene = _duplicate_scene(rng)
    cfg = GraphConfig(k=3, edge_dim=12)
    a = build_scene_graph(scene, cfg)
    b = build_scene_graph(scene.translated([5.0, -3.0, 1.0]), cfg)
    assert a.surviving_ids == b.surviving_ids
    assert a.neighbor_lists == b.neighbor_lists


def test_external_features_required():
    scene = make_scene([(0, 0, 0), (2, 0, 0)])
    cfg = GraphConfig(k=1, relation_source=EXTERNAL)
    with pytest.raises(MissingEdgeFeature) as err:
        build_scene_graph(scene, cfg, external={(0, 1): np.ones(4)})
    assert (err.value.src, err.value.dst) == (1, 0)
    g = build_scene_graph(scene, cfg, external={(0, 1): np.ones(4), (1, 0): np.zeros(4)})
    np.testing.assert_array_equal(g.edges[1].ze, np.zeros(4))


def test_k_zero_no_edges():
    g = build_scene_graph(make_scene([(0, 0, 0), (2, 0, 0)]), GraphConfig(k=0))
    assert g.edges == () and g.neighbor_lists == {0: [], 1: []}


@pytest.mark.parametrize("kw", [{"k": -1}, {"nms_iou_threshold": 1.5}, {"min_neighbor_distance": -1},
                                {"relation_source": "vlsat"}])
def test_bad_config(kw):
    with pytest.raises(ValidationError):
        GraphConfig(**kw)


def test_threaded_build_is_identical(monkeypatch, rng):
    scene = make_scene(rng.uniform(0, 10, size=(60, 3)))
    cfg = GraphConfig(k=2, edge_dim=24)
    a = build_scene_graph(scene, cfg)
    monkeypatch.setenv("GRAPHTOK3D_THREADS", "4")
    b = build_scene_graph(scene, cfg)
    assert a.edge_pairs() == b.edge_pairs()
    assert all(np.array_equal(x.ze, y.ze) for x, y in zip(a.edges, b.edges))


def test_save_load_graph(tmp_path, rng):
    g = build_scene_graph(make_scene(rng.uniform(0, 5, size=(6, 3))), GraphConfig(k=2, edge_dim=12))
    save_graph(g, tmp_path)
    back = load_graph(tmp_path / "graph.json")
    assert back.surviving_ids == g.surviving_ids
    assert back.neighbor_lists == g.neighbor_lists
    for e, f in zip(g.edges, back.edges):
        assert (e.src, e.dst) == (f.src, f.dst)
        np.testing.assert_array_equal(f.ze, e.ze.astype(np.float32))
