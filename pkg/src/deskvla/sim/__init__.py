"""Procedural RGB-D tabletop world with a scripted expert and task splits."""

from .tasks import CATALOG, REGIONS, TaskSpec, ObjectSpec, RegionSpec, task_suite, get_task
from .world import (
    CameraRig,
    Gripper,
    Observation,
    WorldState,
    check_success,
    default_rig,
    reset,
    step,
)
from .render import ground_truth_masks, render_full, render_rgbd
from .expert import expert_action, scripted_expert

__all__ = [
    "CATALOG", "REGIONS", "TaskSpec", "ObjectSpec", "RegionSpec", "task_suite", "get_task",
    "CameraRig", "Gripper", "Observation", "WorldState", "check_success", "default_rig",
    "reset", "step", "ground_truth_masks", "render_full", "render_rgbd",
    "expert_action", "scripted_expert",
]
