"""Run configuration: JSON-loadable, validated, with ablation switches."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from ..policy import ModelConfig
from ..sim.tasks import ALL_TASKS, DEFAULT_TRAIN_TASKS
from ..ta_roi import DetectorNoiseModel

ABLATION_TAGS = ("none", "no-cot", "no-depth", "no-roi")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    tasks: list = field(default_factory=lambda: list(DEFAULT_TRAIN_TASKS))
    demos_per_task: int = 50
    trials_per_task: int = 50
    train_steps: int = 3000
    batch_size: int = 8
    lr: float = 1e-3
    eval_every: int = 250
    holdout_demos: int = 2
    seed: int = 0
    max_rollout_steps: int = 300
    execute_per_chunk: int = 8
    max_demo_steps: int = 200
    noise: DetectorNoiseModel = field(default_factory=lambda: DetectorNoiseModel(dilate_px=3))
    no_cot: bool = False
    no_depth: bool = False
    no_roi: bool = False
    single_thread: bool = False

    def __post_init__(self):
        for t in self.tasks:
            if t not in ALL_TASKS:
                raise ValueError(f"unknown task id '{t}'")
        if self.execute_per_chunk < 1 or self.execute_per_chunk > self.model.chunk:
            raise ValueError("execute_per_chunk must be in [1, chunk]")

    @property
    def ablation_tag(self) -> str:
        if self.no_cot:
            return "no-cot"
        if self.no_depth:
            return "no-depth"
        if self.no_roi:
            return "no-roi"
        return "none"

    def with_ablation(self, tag: str) -> "RunConfig":
        if tag not in ABLATION_TAGS:
            raise ValueError(f"unknown ablation '{tag}'; expected one of {ABLATION_TAGS}")
        return replace(self, no_cot=tag == "no-cot", no_depth=tag == "no-depth", no_roi=tag == "no-roi")

    def model_config(self) -> ModelConfig:
        """Model view with the ablation switches folded in."""
        return replace(self.model,
                       use_cot=self.model.use_cot and not self.no_cot,
                       use_depth=self.model.use_depth and not self.no_depth,
                       use_roi=self.model.use_roi and not self.no_roi)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["noise"] = asdict(self.noise)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        d = dict(d)
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        if "noise" in d and isinstance(d["noise"], dict):
            noise_known = {f.name for f in fields(DetectorNoiseModel)}
            bad = set(d["noise"]) - noise_known
            if bad:
                raise ValueError(f"unknown noise model keys: {sorted(bad)}")
            d["noise"] = DetectorNoiseModel(**d["noise"])
        return cls(**d)

    @classmethod
    def desk_default(cls) -> "RunConfig":
        """Small CPU run: 4 seen tasks, 25 demos each, 3k steps."""
        return cls(demos_per_task=25, train_steps=3000)
