import math

import numpy as np
import pytest

from voxpose.camera import Intrinsics
from voxpose.errors import BadSpec, UnsupportedKind
from voxpose.lie import Pose, exp_so3, is_rotation
from voxpose.render import render_image
from voxpose.scenes import KINDS, SceneSpec, build_scene, reference_views, view_poses


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_builds_deterministically(kind):
    spec = SceneSpec(kind=kind, resolution=12)
    a, b = build_scene(spec), build_scene(spec)
    assert a.equals(b)
    assert a.occupancy_fraction() > 0


def test_sphere_inside_and_outside():
    spec = SceneSpec(kind="sphere", resolution=17, density_scale=40.0, radius=0.5)
    g = build_scene(spec)
    assert g.sample([[0.0, 0.0, 0.0]])[0][0] == pytest.approx(40.0)
    assert g.sample([[0.9, 0.0, 0.0]])[0][0] == 0.0


def test_spec_validation():
    with pytest.raises(UnsupportedKind):
        build_scene(SceneSpec(kind="teapot"))
    with pytest.raises(BadSpec):
        SceneSpec(resolution=1)
    with pytest.raises(BadSpec):
        SceneSpec.from_dict({"kind": "sphere", "radios": 1})
    with pytest.raises(BadSpec):
        SceneSpec.from_dict({"color_a": [1, 2]})
    spec = SceneSpec(kind="box", resolution=20)
    assert SceneSpec.from_dict(spec.to_dict()) == spec


def test_checker_texture_gives_image_gradient():
    g = build_scene(SceneSpec(kind="checker_sphere", resolution=32))
    intr = Intrinsics(64, 64, 88.9)
    pose = view_poses(1, 4.0, seed=3)[0]
    turned = Pose(pose.rotation @ exp_so3([0, math.radians(5), 0]), pose.translation)
    a, b = render_image(g, pose, intr), render_image(g, turned, intr)
    changed = np.any(np.abs(a - b) > 2 / 255, axis=-1)
    assert changed.mean() > 0.01


def test_reference_views_look_at_origin():
    g = build_scene(SceneSpec(kind="sphere", resolution=8))
    [(pose, img)] = reference_views(g, 1, 4.0, Intrinsics(8, 8, 10.0), seed=0)
    assert np.linalg.norm(pose.translation) == pytest.approx(4.0, abs=1e-12)
    forward = -pose.rotation[:, 2]
    # the forward ray passes through the origin
    closest = pose.translation - (pose.translation @ forward) * forward
    assert np.linalg.norm(closest) < 1e-9
    assert img.shape == (8, 8, 3)


def test_view_poses_valid_and_seeded():
    a = view_poses(10, 4.0, seed=0)
    b = view_poses(10, 4.0, seed=1)
    assert all(is_rotation(p.rotation) for p in a + b)
    assert not all(p.equals(q) for p, q in zip(a, b))
    assert all(p.equals(q) for p, q in zip(a, view_poses(10, 4.0, seed=0)))
    with pytest.raises(BadSpec):
        view_poses(0, 4.0)
