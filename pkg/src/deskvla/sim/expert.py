"""Scripted waypoint expert: deterministic demonstrations for every achievable task."""

from __future__ import annotations

import numpy as np

from .tasks import REGIONS, TaskSpec
from .world import REGION_TOP, STEP_POS_MAX, WorldState, first_unmet_goal, step

HOVER_Z = 0.18
XY_TOL = 0.006
Z_TOL = 0.004


def _move_toward(pos: np.ndarray, target: np.ndarray, grip: float) -> np.ndarray:
    d = target - pos
    dist = float(np.linalg.norm(d))
    if dist > STEP_POS_MAX:
        d = d * (STEP_POS_MAX / dist)
    return np.array([d[0], d[1], d[2], 0.0, 0.0, 0.0, grip], dtype=np.float32)


def expert_action(world: WorldState, task: TaskSpec) -> np.ndarray:
    """Next action of the waypoint policy; a pure function of the current state."""
    goal = first_unmet_goal(world, task)
    g = world.gripper
    if goal is None:
        return np.array([0, 0, 0, 0, 0, 0, 0], dtype=np.float32)

    obj = world.objects[goal.obj]
    if goal.kind == "place":
        region = REGIONS[goal.target]
        target_xy = np.array(region.center)
        drop_z = REGION_TOP + obj.spec.half_height + 0.025
    else:
        base = world.objects[goal.target]
        target_xy = base.pos[:2].copy()
        drop_z = base.top + obj.spec.half_height + 0.015

    if g.held == goal.obj:
        lateral = float(np.hypot(g.pos[0] - target_xy[0], g.pos[1] - target_xy[1]))
        if lateral > XY_TOL and g.pos[2] < HOVER_Z - Z_TOL:
            return _move_toward(g.pos, np.array([g.pos[0], g.pos[1], HOVER_Z]), 1.0)
        if lateral > XY_TOL:
            return _move_toward(g.pos, np.array([target_xy[0], target_xy[1], HOVER_Z]), 1.0)
        if g.pos[2] > drop_z + Z_TOL:
            return _move_toward(g.pos, np.array([target_xy[0], target_xy[1], drop_z]), 1.0)
        return np.array([0, 0, 0, 0, 0, 0, 0], dtype=np.float32)

    if g.held is None:
        gp = obj.grasp_point()
        lateral = float(np.hypot(g.pos[0] - gp[0], g.pos[1] - gp[1]))
        if lateral > XY_TOL:
            return _move_toward(g.pos, np.array([gp[0], gp[1], HOVER_Z]), 0.0)
        if g.pos[2] > gp[2] + Z_TOL:
            return _move_toward(g.pos, np.array([gp[0], gp[1], gp[2]]), 0.0)
        return np.array([0, 0, 0, 0, 0, 0, 1.0], dtype=np.float32)

    # holding the wrong object: put it down where we are
    return np.array([0, 0, 0, 0, 0, 0, 0], dtype=np.float32)


def scripted_expert(world: WorldState, task: TaskSpec, chunk: int = 8) -> np.ndarray:
    """Next action chunk, computed by simulating ahead on a copy of the world."""
    sim = world.copy()
    actions = np.zeros((chunk, 7), dtype=np.float32)
    for i in range(chunk):
        a = expert_action(sim, task)
        actions[i] = a
        step(sim, a)
    return actions
