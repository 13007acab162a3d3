import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from graphtok3d.scene import ObjectProposal, Scene  # noqa: E402


def box_points(center, half=0.2, n=8, rng=None):
    """Corner points of a cube (plus random interior points when ``rng`` is given)."""
    center = np.asarray(center, dtype=float)
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
    xyz = center + half * corners
    if rng is not None and n > 8:
        xyz = np.vstack([xyz, center + rng.uniform(-half, half, size=(n - 8, 3))])
    rgb = np.full((len(xyz), 3), 0.5)
    return np.hstack([xyz, rgb])


def make_scene(centers, half=0.2, scene_id="test", extra=None):
    props = [ObjectProposal(i, box_points(c, half)) for i, c in enumerate(centers)]
    for pts in extra or []:
        props.append(ObjectProposal(len(props), pts))
    return Scene(scene_id, tuple(props))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
