"""World state, deterministic reset, gripper dynamics, and success predicates."""

from __future__ import annotations

import copy
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..geometry import CameraIntrinsics
from .tasks import CATALOG, REGIONS, Goal, ObjectSpec, TaskSpec

WORKSPACE_XY = (0.0, 1.0)
WORKSPACE_Z = (0.0, 0.45)
SPAWN_ZONE = ((0.34, 0.66), (0.38, 0.62))
GRIPPER_HOME = (0.5, 0.5, 0.30)
GRASP_RADIUS = 0.03
STEP_POS_MAX = 0.05
STEP_ROT_MAX = 0.2
REGION_TOP = 0.002


@dataclass
class ObjectState:
    spec: ObjectSpec
    pos: np.ndarray
    held: bool = False

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64)

    @property
    def top(self) -> float:
        return float(self.pos[2] + self.spec.half_height)

    def grasp_point(self) -> np.ndarray:
        return self.pos + np.array([0.0, 0.0, self.spec.half_height])


@dataclass
class Gripper:
    pos: np.ndarray
    rpy: np.ndarray
    aperture: float = 1.0
    held: str | None = None
    held_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=np.float64)
        self.rpy = np.asarray(self.rpy, dtype=np.float64)


@dataclass
class WorldState:
    task: TaskSpec
    objects: dict
    gripper: Gripper
    step_count: int = 0

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)

    def proprio(self) -> np.ndarray:
        g = self.gripper
        return np.array([*g.pos, *g.rpy, g.aperture, 1.0 if g.held else 0.0], dtype=np.float32)


@dataclass(frozen=True)
class CameraRig:
    eye: tuple
    rot: tuple          # 3x3 camera-to-world, rows flattened
    intrinsics: CameraIntrinsics
    wrist: bool = False

    def rot_matrix(self) -> np.ndarray:
        return np.asarray(self.rot, dtype=np.float64).reshape(3, 3)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world rotation with image +x right and +y down."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


def default_rig(image_size: int = 64, wrist: bool = False) -> CameraRig:
    eye = (0.5, -0.32, 0.72)
    rot = look_at(eye, (0.5, 0.5, 0.0))
    f = 1.45 * image_size
    intr = CameraIntrinsics(fx=f, fy=f, cx=(image_size - 1) / 2, cy=(image_size - 1) / 2,
                            width=image_size, height=image_size)
    return CameraRig(eye=eye, rot=tuple(rot.reshape(-1)), intrinsics=intr, wrist=wrist)


@dataclass
class Observation:
    rgb_static: np.ndarray
    depth: np.ndarray
    proprio: np.ndarray
    intrinsics: CameraIntrinsics
    step_index: int
    rgb_wrist: np.ndarray | None = None


def _task_seed(task: TaskSpec, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(task.task_id.encode())]))


def reset(task: TaskSpec, seed: int) -> WorldState:
    """Seeded collision-free scene: task objects plus catalog distractors."""
    rng = _task_seed(task, seed)
    names = list(task.objects)
    pool = [n for n in CATALOG if n not in names]
    extra = rng.permutation(len(pool))[: task.distractors]
    names += [pool[i] for i in extra]

    (x0, x1), (y0, y1) = SPAWN_ZONE
    placed: list[tuple[str, np.ndarray]] = []
    for name in names:
        spec = CATALOG[name]
        ok = False
        for _try in range(100):
            x = rng.uniform(x0, x1)
            y = rng.uniform(y0, y1)
            good = True
            for other_name, opos in placed:
                lim = spec.footprint + CATALOG[other_name].footprint + 0.02
                if np.hypot(x - opos[0], y - opos[1]) < lim:
                    good = False
                    break
            if good:
                placed.append((name, np.array([x, y, spec.half_height])))
                ok = True
                break
        if not ok:
            raise RuntimeError(f"could not place '{name}' collision-free after 100 tries")

    objects = {name: ObjectState(spec=CATALOG[name], pos=pos) for name, pos in placed}
    world = WorldState(task=task, objects=objects,
                       gripper=Gripper(pos=np.array(GRIPPER_HOME), rpy=np.zeros(3)))
    if check_success(world, task):
        raise RuntimeError("task satisfied at reset; placement sampler is inconsistent")
    return world


def _support_height(world: WorldState, name: str, xy: np.ndarray) -> float:
    """Resting height for an object released at xy: tallest support below, else the table."""
    spec = world.objects[name].spec
    best = 0.0
    for other, state in world.objects.items():
        if other == name or state.held:
            continue
        if np.hypot(xy[0] - state.pos[0], xy[1] - state.pos[1]) <= state.spec.footprint:
            best = max(best, state.top)
    return best + spec.half_height


def step(world: WorldState, action: np.ndarray) -> WorldState:
    """Integrate one clamped delta action; close attaches, open releases and settles."""
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape[0] != 7:
        raise ValueError(f"action must have 7 entries, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("action contains non-finite values")
    g = world.gripper
    g.pos = g.pos + np.clip(a[0:3], -STEP_POS_MAX, STEP_POS_MAX)
    g.pos[0] = np.clip(g.pos[0], *WORKSPACE_XY)
    g.pos[1] = np.clip(g.pos[1], *WORKSPACE_XY)
    g.pos[2] = np.clip(g.pos[2], *WORKSPACE_Z)
    g.rpy = np.mod(g.rpy + np.clip(a[3:6], -STEP_ROT_MAX, STEP_ROT_MAX) + np.pi, 2 * np.pi) - np.pi

    close = a[6] > 0.5
    if close:
        g.aperture = 0.0
        if g.held is None:
            for name, state in world.objects.items():
                gp = state.grasp_point()
                if np.linalg.norm(gp - g.pos) <= GRASP_RADIUS:
                    g.held = name
                    g.held_offset = state.pos - g.pos
                    state.held = True
                    break
    else:
        g.aperture = 1.0
        if g.held is not None:
            state = world.objects[g.held]
            state.held = False
            state.pos = state.pos.copy()
            state.pos[2] = _support_height(world, g.held, state.pos[:2])
            g.held = None
            g.held_offset = np.zeros(3)

    if g.held is not None:
        world.objects[g.held].pos = g.pos + g.held_offset

    world.step_count += 1
    return world


def _goal_satisfied(world: WorldState, goal: Goal, strict: bool = True) -> bool:
    obj = world.objects.get(goal.obj)
    if obj is None or obj.held:
        return False
    if goal.kind == "place":
        region = REGIONS[goal.target]
        in_region = np.hypot(obj.pos[0] - region.center[0], obj.pos[1] - region.center[1]) <= region.radius
        if not strict:
            return bool(in_region)
        gripper_open = world.gripper.held is None and world.gripper.aperture > 0.5
        return bool(in_region and gripper_open)
    if goal.kind == "stack":
        base = world.objects.get(goal.target)
        if base is None or base.held:
            return False
        lateral = np.hypot(obj.pos[0] - base.pos[0], obj.pos[1] - base.pos[1])
        resting = abs(obj.pos[2] - (base.top + obj.spec.half_height)) <= 0.01
        return bool(lateral <= 0.02 and resting)
    raise ValueError(f"unknown goal kind '{goal.kind}'")


def check_success(world: WorldState, task: TaskSpec) -> bool:
    """All goal predicates hold in the current state."""
    return all(_goal_satisfied(world, g) for g in task.goals)


def first_unmet_goal(world: WorldState, task: TaskSpec) -> Goal | None:
    """Sequencing view of the goals: ignores the transient gripper-open clause."""
    for g in task.goals:
        if not _goal_satisfied(world, g, strict=False):
            return g
    return None
