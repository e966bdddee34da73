import numpy as np
import pytest

from voin import synth
from voin.synth import OccluderSpec, SceneSpec, Texture, Trajectory


def scene_translating(seed=0, h=16, w=16, t=4, vel=(1.0, 0.0), cls=0,
                      radius=(4.0, 3.0), center=None):
    """Ellipse gliding across a noisy background; integer vel -> exact flow.

    Defaults leave >= 1 px of margin over the whole default trajectory.
    """
    if center is None:
        center = (w / 2.0 - 2.0, h / 2.0)
    return SceneSpec(
        height=h, width=w, frames=t, object_class=cls,
        shape_kind="ellipse", shape_params=radius,
        trajectory=Trajectory(center=center, velocity=vel),
        object_texture=Texture(kind="checker", scale=3.0, seed=seed + 1),
        background_texture=Texture(kind="noise", scale=5.0, seed=seed + 2))


def occluder_drifting(seed=0, h=16, w=16, vel=(0.0, 2.0), width=5.0):
    return OccluderSpec(
        seed=seed, stroke_count=1, brush_width=width, vertex_count=3,
        trajectory=Trajectory(center=(w / 2.0, h / 2.0), velocity=vel))


def make_sample(seed=0, h=16, w=16, t=4, target=0.3, tol=0.05,
                scene_vel=(1.0, 0.0), occ_vel=(0.0, 2.0), cls=0,
                radius=(4.0, 3.0), center=None):
    scene = scene_translating(seed, h, w, t, scene_vel, cls, radius, center)
    occ = occluder_drifting(seed + 100, h, w, occ_vel)
    return synth.synth_sample(scene, [occ], target, tol=tol)


@pytest.fixture(scope="session")
def sample16():
    return make_sample(seed=3)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240814)
