"""Object catalog, table regions, and the seen / similar / unseen task suites."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..lang_cot import LOCATION_NAMES, OBJECT_NAMES


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    shape: str          # sphere | box | cylinder
    dims: tuple         # sphere: (r,); box: half extents; cylinder: (r, half_h)
    color: tuple
    kind: str

    @property
    def half_height(self) -> float:
        if self.shape == "sphere":
            return self.dims[0]
        if self.shape == "box":
            return self.dims[2]
        return self.dims[1]

    @property
    def footprint(self) -> float:
        if self.shape == "box":
            return max(self.dims[0], self.dims[1])
        return self.dims[0]


@dataclass(frozen=True)
class RegionSpec:
    name: str
    center: tuple
    radius: float
    color: tuple


CATALOG: dict[str, ObjectSpec] = {
    "ball": ObjectSpec("ball", "sphere", (0.040,), (0.85, 0.15, 0.15), "ball"),
    "orange": ObjectSpec("orange", "sphere", (0.042,), (0.95, 0.55, 0.10), "orange"),
    "white bowl": ObjectSpec("white bowl", "cylinder", (0.060, 0.020), (0.93, 0.93, 0.88), "bowl"),
    "black bowl": ObjectSpec("black bowl", "cylinder", (0.060, 0.020), (0.13, 0.13, 0.16), "bowl"),
    "mug": ObjectSpec("mug", "cylinder", (0.042, 0.030), (0.20, 0.35, 0.80), "mug"),
    "milk": ObjectSpec("milk", "box", (0.024, 0.024, 0.045), (0.95, 0.95, 0.98), "milk"),
    "ketchup": ObjectSpec("ketchup", "box", (0.020, 0.020, 0.042), (0.80, 0.08, 0.08), "ketchup"),
    "chocolate pudding": ObjectSpec("chocolate pudding", "box", (0.032, 0.024, 0.014), (0.45, 0.26, 0.12), "pudding"),
    "red pot": ObjectSpec("red pot", "cylinder", (0.050, 0.022), (0.75, 0.20, 0.20), "pot"),
    "blue pot": ObjectSpec("blue pot", "cylinder", (0.050, 0.022), (0.20, 0.30, 0.75), "pot"),
}

REGIONS: dict[str, RegionSpec] = {
    "basket": RegionSpec("basket", (0.26, 0.72), 0.085, (0.55, 0.40, 0.18)),
    "plate": RegionSpec("plate", (0.74, 0.72), 0.085, (0.82, 0.84, 0.88)),
    "stove": RegionSpec("stove", (0.26, 0.28), 0.085, (0.22, 0.22, 0.26)),
    "tray": RegionSpec("tray", (0.74, 0.28), 0.085, (0.25, 0.60, 0.30)),
}

assert set(CATALOG) == set(OBJECT_NAMES)
assert set(REGIONS) == set(LOCATION_NAMES)


@dataclass(frozen=True)
class Goal:
    kind: str           # place | stack
    obj: str
    target: str         # region name for place, object name for stack


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    template_id: str
    instruction: str
    objects: tuple
    goals: tuple
    split: str
    distractors: int = 2


def _pick_place(task_id, template, instruction, obj, loc, split):
    return TaskSpec(task_id, template, instruction, (obj,), (Goal("place", obj, loc),), split)


SEEN_TASKS = [
    _pick_place("seen_ball_basket", "grab_place_in", "grab the ball and place it in the basket",
                "ball", "basket", "seen"),
    _pick_place("seen_white_bowl_stove", "put_on", "put the white bowl on the stove",
                "white bowl", "stove", "seen"),
    _pick_place("seen_milk_tray", "move_into", "move the milk into the tray",
                "milk", "tray", "seen"),
    _pick_place("seen_mug_plate", "place_on", "place the mug on the plate",
                "mug", "plate", "seen"),
    _pick_place("seen_orange_tray", "grab_place_in", "grab the orange and place it in the tray",
                "orange", "tray", "seen"),
    _pick_place("seen_ketchup_plate", "put_on", "put the ketchup on the plate",
                "ketchup", "plate", "seen"),
    _pick_place("seen_pudding_basket", "move_into", "move the chocolate pudding into the basket",
                "chocolate pudding", "basket", "seen"),
    TaskSpec("seen_stack_bowls", "stack_on", "stack the black bowl on the white bowl",
             ("black bowl", "white bowl"), (Goal("stack", "black bowl", "white bowl"),), "seen"),
]

SIMILAR_TASKS = [
    TaskSpec("similar_both_pots_stove", "put_both_kind", "put both pots on the stove",
             ("red pot", "blue pot"),
             (Goal("place", "red pot", "stove"), Goal("place", "blue pot", "stove")), "similar",
             distractors=1),
    TaskSpec("similar_ball_orange_basket", "place_pair_in",
             "place both the ball and the orange in the basket",
             ("ball", "orange"),
             (Goal("place", "ball", "basket"), Goal("place", "orange", "basket")), "similar",
             distractors=1),
    TaskSpec("similar_stack_then_ball", "stack_then_place",
             "stack the black bowl on the white bowl and put the ball in the basket",
             ("black bowl", "white bowl", "ball"),
             (Goal("stack", "black bowl", "white bowl"), Goal("place", "ball", "basket")), "similar",
             distractors=1),
]

UNSEEN_TASKS = [
    _pick_place("unseen_orange_basket", "move_into", "move the orange into the basket",
                "orange", "basket", "unseen"),
    _pick_place("unseen_ball_plate", "put_on", "put the ball on the plate",
                "ball", "plate", "unseen"),
    _pick_place("unseen_milk_basket", "grab_place_in", "grab the milk and place it in the basket",
                "milk", "basket", "unseen"),
    _pick_place("unseen_mug_stove", "put_on", "put the mug on the stove",
                "mug", "stove", "unseen"),
    _pick_place("unseen_ketchup_tray", "move_into", "move the ketchup into the tray",
                "ketchup", "tray", "unseen"),
    _pick_place("unseen_pudding_plate", "place_on", "place the chocolate pudding on the plate",
                "chocolate pudding", "plate", "unseen"),
    _pick_place("unseen_white_bowl_tray", "place_on", "place the white bowl on the tray",
                "white bowl", "tray", "unseen"),
    _pick_place("unseen_black_bowl_basket", "move_into", "move the black bowl into the basket",
                "black bowl", "basket", "unseen"),
    _pick_place("unseen_orange_stove", "put_on", "put the orange on the stove",
                "orange", "stove", "unseen"),
    _pick_place("unseen_mug_tray", "grab_place_in", "grab the mug and place it in the tray",
                "mug", "tray", "unseen"),
]

ALL_TASKS: dict[str, TaskSpec] = {t.task_id: t for t in SEEN_TASKS + SIMILAR_TASKS + UNSEEN_TASKS}
DEFAULT_TRAIN_TASKS = [t.task_id for t in SEEN_TASKS[:4]]


def task_suite(name: str) -> list[TaskSpec]:
    suites = {"seen": SEEN_TASKS, "similar": SIMILAR_TASKS, "unseen": UNSEEN_TASKS}
    if name not in suites:
        raise ValueError(f"unknown suite '{name}'; expected one of {sorted(suites)}")
    return list(suites[name])


def get_task(task_id: str) -> TaskSpec:
    if task_id not in ALL_TASKS:
        raise ValueError(f"unknown task '{task_id}'")
    return ALL_TASKS[task_id]


def seen_pairs() -> set:
    return {(g.obj, g.target) for t in SEEN_TASKS for g in t.goals if g.kind == "place"}


def unseen_pairs() -> set:
    return {(g.obj, g.target) for t in UNSEEN_TASKS for g in t.goals if g.kind == "place"}
