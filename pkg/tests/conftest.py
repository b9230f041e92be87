import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import pytest

from skillloop import sim


def make_drawer(
    object_id="top_drawer",
    label="top drawer",
    position=(0.4, 0.3, 0.1),
    grasp_point=(0.05, 0.0, 0.0),
    normal=(0.0, -1.0, 0.0),
    travel_max=0.15,
    open_fraction=0.0,
    extents=(0.1, 0.25, 0.08),
    feature=(),
):
    return sim.ObjectRecord(
        id=object_id,
        label=label,
        category="drawer",
        pose=sim.Pose(position, approach="front"),
        extents=extents,
        normal=normal,
        grasp_point=grasp_point,
        grasp_orientation="front",
        articulation=sim.Prismatic(axis=normal, travel_max=travel_max, open_fraction=open_fraction),
        feature=feature,
    )


def make_item(object_id, label, position, category="tool", grasp_point=(0.0, 0.0, 0.0), feature=()):
    return sim.ObjectRecord(
        id=object_id,
        label=label,
        category=category,
        pose=sim.Pose(position),
        extents=(0.04, 0.12, 0.02),
        grasp_point=grasp_point,
        grasp_orientation="top-down",
        feature=feature,
    )


def make_world(objects, gripper_position=(0.0, 0.0, 0.3)):
    return sim.WorldState(
        objects={o.id: o for o in objects},
        gripper=sim.GripperState(pose=sim.Pose(gripper_position, approach="front")),
        workspace=((-1.0, -1.0, 0.0), (1.0, 1.0, 1.0)),
    )


@pytest.fixture
def drawer_world():
    return make_world([make_drawer(), make_item("scissors", "scissors", (0.1, 0.1, 0.02))])
