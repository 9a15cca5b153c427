"""Scene assembly for the ray-cast kernels: primitives, observations, id-buffer masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..geometry import DepthImage
from .tasks import REGIONS
from .world import CameraRig, Observation, WorldState, look_at

TABLE_COLOR = (0.72, 0.62, 0.50)
GRIPPER_COLOR = (0.32, 0.33, 0.40)
REGION_HALF_H = 0.001

_SHAPE_CODE = {"sphere": kernels.KIND_SPHERE, "box": kernels.KIND_BOX, "cylinder": kernels.KIND_CYLINDER}


def rotation_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def build_scene(world: WorldState):
    """Pack every primitive (objects, regions, gripper) into kernel arrays."""
    kinds, centers, dims, rots, colors, entities = [], [], [], [], [], []

    def put(kind, center, dim3, rot, color, entity):
        kinds.append(kind)
        centers.append(center)
        dims.append(dim3)
        rots.append(rot)
        colors.append(color)
        entities.append(entity)

    eye3 = np.eye(3)
    for region in REGIONS.values():
        put(kernels.KIND_CYLINDER, (region.center[0], region.center[1], REGION_HALF_H),
            (region.radius, 0.0, REGION_HALF_H), eye3, region.color, region.name)
    for name, state in world.objects.items():
        spec = state.spec
        if spec.shape == "sphere":
            dim3 = (spec.dims[0], 0.0, 0.0)
        elif spec.shape == "box":
            dim3 = spec.dims
        else:
            dim3 = (spec.dims[0], 0.0, spec.dims[1])
        put(_SHAPE_CODE[spec.shape], tuple(state.pos), dim3, eye3, spec.color, name)

    g = world.gripper
    rot = rotation_rpy(*g.rpy)
    rot_wl = rot.T
    put(kernels.KIND_BOX, tuple(g.pos), (0.018, 0.018, 0.008), rot_wl, GRIPPER_COLOR, "gripper")
    spread = 0.007 + 0.018 * g.aperture
    for side in (-1.0, 1.0):
        center = g.pos + rot @ np.array([side * spread, 0.0, -0.022])
        put(kernels.KIND_BOX, tuple(center), (0.0045, 0.011, 0.016), rot_wl, GRIPPER_COLOR, "gripper")

    return (np.array(kinds, dtype=np.int64), np.array(centers, dtype=np.float64),
            np.array(dims, dtype=np.float64), np.array(rots, dtype=np.float64),
            np.array(colors, dtype=np.float64), entities)


@dataclass
class RenderResult:
    rgb: np.ndarray
    depth: np.ndarray
    ids: np.ndarray
    entities: list


def render_full(world: WorldState, rig: CameraRig) -> RenderResult:
    kinds, centers, dims, rots, colors, entities = build_scene(world)
    intr = rig.intrinsics
    depth, rgb, ids = kernels.raycast(
        np.asarray(rig.eye, dtype=np.float64), rig.rot_matrix(),
        intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height,
        kinds, centers, dims, rots, colors, np.asarray(TABLE_COLOR))
    return RenderResult(rgb=rgb, depth=depth, ids=ids, entities=entities)


def render_rgbd(world: WorldState, rig: CameraRig) -> tuple[np.ndarray, DepthImage]:
    res = render_full(world, rig)
    return res.rgb, DepthImage(values=res.depth)


def wrist_rig(world: WorldState, intr) -> CameraRig:
    """Camera above the gripper looking along its local -z."""
    g = world.gripper
    rot = rotation_rpy(*g.rpy)
    eye = g.pos + rot @ np.array([0.0, 0.0, 0.10])
    cam = rot @ np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    return CameraRig(eye=tuple(eye), rot=tuple(cam.reshape(-1)), intrinsics=intr)


def observe(world: WorldState, rig: CameraRig, include_wrist: bool = False) -> Observation:
    rgb, depth = render_rgbd(world, rig)
    rgb_wrist = None
    if include_wrist:
        wrig = wrist_rig(world, rig.intrinsics)
        rgb_wrist, _ = render_rgbd(world, wrig)
    return Observation(rgb_static=rgb, depth=depth.values, proprio=world.proprio(),
                       intrinsics=rig.intrinsics, step_index=world.step_count,
                       rgb_wrist=rgb_wrist)


def ground_truth_masks(world: WorldState, rig: CameraRig, names=None) -> dict:
    """Per-entity boolean masks from the id buffer; absent names get empty masks."""
    res = render_full(world, rig)
    if names is None:
        names = list(dict.fromkeys(res.entities))
    masks: dict[str, np.ndarray] = {}
    for name in names:
        mask = np.zeros(res.ids.shape, dtype=bool)
        for idx, entity in enumerate(res.entities):
            if entity == name:
                mask |= res.ids == idx
        masks[name] = mask
    return masks
