import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from graphtok3d import binio
from graphtok3d.errors import (DuplicateObjectId, EmptyScene, InvalidProposal, ParseError,
                               TooManyObjects)
from graphtok3d.scene import (AxisAlignedBox, ObjectProposal, Scene, compute_aabb,
                              compute_centroid, load_scene, parse_manifest, save_scene)
from graphtok3d.toy import generate_synthetic_scene

from oracles import aabb_scan, centroid_sum


def test_centroid_single_point():
    assert compute_centroid([[1, 2, 3, 0, 0, 0]]).tolist() == [1, 2, 3]


def test_centroid_two_points():
    assert compute_centroid([[0, 0, 0, 0, 0, 0], [2, 0, 0, 0, 0, 0]]).tolist() == [1, 0, 0]


def test_centroid_matches_summation(rng):
    pts = np.hstack([rng.normal(size=(50, 3)) * 3, rng.uniform(size=(50, 3))])
    np.testing.assert_allclose(compute_centroid(pts), centroid_sum(pts.tolist()), atol=1e-9, rtol=0)


def test_empty_points_rejected():
    with pytest.raises(InvalidProposal):
        compute_centroid(np.zeros((0, 6)))
    with pytest.raises(InvalidProposal):
        compute_aabb(np.zeros((0, 6)))


def test_aabb_single_point():
    box = compute_aabb([[1, 2, 3, 0, 0, 0]])
    assert box.min.tolist() == [1, 2, 3] and box.max.tolist() == [1, 2, 3]
    assert box.volume == 0


def test_aabb_unit_cube_corners():
    pts = [[x, y, z, 0, 0, 0] for x in (0, 1) for y in (0, 1) for z in (0, 1)]
    box = compute_aabb(pts)
    assert box == AxisAlignedBox([0, 0, 0], [1, 1, 1])
    assert box.volume == 1


def test_aabb_matches_scan(rng):
    pts = np.hstack([rng.normal(size=(200, 3)), rng.uniform(size=(200, 3))])
    lo, hi = aabb_scan(pts.tolist())
    box = compute_aabb(pts)
    assert box.min.tolist() == lo and box.max.tolist() == hi


coords = arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)),
                elements=st.floats(-100, 100, allow_nan=False, width=32))


@given(coords)
@settings(max_examples=100, deadline=None)
def test_aabb_encloses_points_and_centroid(xyz):
    pts = np.hstack([xyz, np.zeros_like(xyz)])
    p = ObjectProposal(0, pts)
    assert np.all(p.aabb.min <= p.aabb.max)
    assert all(p.aabb.contains(q) for q in xyz)
    # mean of floats can round a hair outside when all coordinates are equal
    assert np.all(p.centroid >= p.aabb.min - 1e-9 * (1 + np.abs(p.aabb.min)))
    assert np.all(p.centroid <= p.aabb.max + 1e-9 * (1 + np.abs(p.aabb.max)))


@pytest.mark.parametrize("bad", [
    [[np.nan, 0, 0, 0, 0, 0]],
    [[0, np.inf, 0, 0, 0, 0]],
    [[0, 0, 0, 1.5, 0, 0]],
    [[0, 0, 0, -0.1, 0, 0]],
])
def test_invalid_proposal(bad):
    with pytest.raises(InvalidProposal):
        ObjectProposal(0, np.array(bad))


def test_proposal_is_read_only():
    p = ObjectProposal(0, [[0, 0, 0, 0, 0, 0]])
    with pytest.raises(ValueError):
        p.points[0, 0] = 1.0


def _manifest(objs, scene_id="s"):
    return json.dumps({"scene_id": scene_id, "objects": objs}).encode()


def test_manifest_zero_objects():
    with pytest.raises(EmptyScene):
        parse_manifest(_manifest([]))


def test_manifest_two_objects():
    scene = parse_manifest(_manifest([
        {"id": 1, "points": [[1, 0, 0, 0.1, 0.2, 0.3]]},
        {"id": 0, "points": [[0, 0, 0, 0.1, 0.2, 0.3]]},
    ]))
    assert scene.n == 2
    assert [p.id for p in scene] == [0, 1]


def test_manifest_duplicate_id():
    with pytest.raises(DuplicateObjectId):
        parse_manifest(_manifest([{"id": 0, "points": [[0, 0, 0, 0, 0, 0]]}] * 2))


def test_manifest_too_many_objects():
    objs = [{"id": i, "points": [[i, 0, 0, 0, 0, 0]]} for i in range(201)]
    with pytest.raises(TooManyObjects):
        parse_manifest(_manifest(objs))


def test_manifest_200_objects_ok():
    objs = [{"id": i, "points": [[i, 0, 0, 0, 0, 0]]} for i in range(200)]
    assert parse_manifest(_manifest(objs)).n == 200


def test_manifest_syntax_error_has_location():
    with pytest.raises(ParseError) as err:
        parse_manifest(b'{"scene_id": "s",\n "objects": [}')
    assert "line 2" in str(err.value)


@pytest.mark.parametrize("doc", [
    b'[]',
    b'{"objects": []}',
    b'{"scene_id": "s", "objects": [{"points": [[0,0,0,0,0,0]]}]}',
    b'{"scene_id": "s", "objects": [{"id": 0}]}',
    b'{"scene_id": "s", "objects": [{"id": 0, "points": [[0, 0, 0]]}]}',
    b'{"scene_id": "s", "objects": [{"id": 0, "points": "abc"}]}',
])
def test_manifest_malformed(doc):
    with pytest.raises(ParseError):
        parse_manifest(doc)


def test_manifest_empty_object_points():
    with pytest.raises(InvalidProposal):
        parse_manifest(_manifest([{"id": 0, "points": []}]))


def test_manifest_sparse_ids_rejected():
    from graphtok3d.errors import ValidationError
    with pytest.raises(ValidationError):
        parse_manifest(_manifest([{"id": 0, "points": [[0, 0, 0, 0, 0, 0]]},
                                  {"id": 2, "points": [[1, 0, 0, 0, 0, 0]]}]))


def test_eight_bit_colors_are_scaled():
    scene = parse_manifest(_manifest([{"id": 0, "points": [[0, 0, 0, 255, 51, 0]]}]))
    np.testing.assert_allclose(scene[0].points[0, 3:], [1.0, 0.2, 0.0])


def test_ingestion_is_pure():
    data = _manifest([{"id": 0, "points": [[0.1, 0.2, 0.3, 0.5, 0.5, 0.5]]}])
    a, b = parse_manifest(data), parse_manifest(data)
    assert a.scene_id == b.scene_id
    assert all(np.array_equal(p.points, q.points) for p, q in zip(a, b))


@pytest.mark.parametrize("binary", [False, True])
def test_round_trip_100_objects(tmp_path, binary):
    scene, _, _ = generate_synthetic_scene(3, 100, 6)
    path = tmp_path / "scene.json"
    save_scene(scene, path, binary=binary)
    back = load_scene(path)
    assert back.n == 100
    for p, q in zip(scene, back):
        assert p.id == q.id
        assert p.points.tobytes() == q.points.tobytes()


def test_points_file_errors(tmp_path):
    (tmp_path / "bad.3dgp").write_bytes(b"XXXX" + b"\0" * 4)
    doc = _manifest([{"id": 0, "points_file": "bad.3dgp"}])
    (tmp_path / "s.json").write_bytes(doc)
    with pytest.raises(ParseError):
        load_scene(tmp_path / "s.json")
    binio.write_points(tmp_path / "ok.3dgp", np.zeros((3, 6)))
    raw = (tmp_path / "ok.3dgp").read_bytes()
    (tmp_path / "bad.3dgp").write_bytes(raw[:-4])
    with pytest.raises(ParseError) as err:
        load_scene(tmp_path / "s.json")
    assert "byte" in str(err.value)


def test_scene_translation():
    scene, _, _ = generate_synthetic_scene(0, 5, 6)
    moved = scene.translated([1.0, -2.0, 0.5])
    np.testing.assert_allclose(moved.centroids() - scene.centroids(), [[1.0, -2.0, 0.5]] * 5)
