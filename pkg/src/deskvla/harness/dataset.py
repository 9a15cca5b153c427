"""Expert demonstration generation, the dataset manifest, and in-memory episode access."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import lang_cot, policy, ta_roi
from ..sim import expert, render, tasks, world as sim_world
from . import container
from .config import RunConfig

log = logging.getLogger(__name__)


def fold_seed(*parts) -> int:
    """Stable split-mix of integer parts into one RNG seed."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class EpisodeRecord:
    task_id: str
    instruction: str
    seed: int
    rgb: np.ndarray          # (T, H, W, 3) uint8
    depth: np.ndarray        # (T, H, W) float32
    proprio: np.ndarray      # (T, 8) float32
    actions: np.ndarray      # (T, 7) float32, metric deltas
    mask: np.ndarray         # (H, W) bool, trajectory-union ROI
    plan_steps: list
    outcome: bool
    rgb_wrist: np.ndarray | None = None

    @property
    def length(self) -> int:
        return int(self.actions.shape[0])


def run_expert_episode(task: tasks.TaskSpec, seed: int, run_cfg: RunConfig) -> EpisodeRecord:
    """One deterministic expert demonstration with the trajectory-union ROI mask."""
    cfg = run_cfg.model_config()
    rig = sim_world.default_rig(cfg.image_size)
    w = sim_world.reset(task, seed)
    instr = lang_cot.parse_instruction(task.instruction)
    plan = lang_cot.decompose_rule_based(instr)
    entities = ta_roi.extract_entities(instr)

    rgbs, rgbws, depths, proprios, actions, frame_masks = [], [], [], [], [], []
    success = False
    for t in range(run_cfg.max_demo_steps):
        obs = render.observe(w, rig, include_wrist=cfg.use_wrist)
        gt = render.ground_truth_masks(w, rig)
        if not entities.empty:
            detected, _missing = ta_roi.detect_entities(gt, entities, run_cfg.noise,
                                                        seed=fold_seed(seed, 11, t))
            frame_masks.append(detected)
        a = expert.expert_action(w, task)
        rgbs.append(np.clip(obs.rgb_static * 255.0, 0, 255).astype(np.uint8))
        if cfg.use_wrist:
            rgbws.append(np.clip(obs.rgb_wrist * 255.0, 0, 255).astype(np.uint8))
        depths.append(obs.depth)
        proprios.append(obs.proprio)
        actions.append(a)
        sim_world.step(w, a)
        if sim_world.check_success(w, task):
            success = True
            break

    if frame_masks:
        mask = ta_roi.union_track_masks(frame_masks).pixels
    else:
        mask = np.zeros((cfg.image_size, cfg.image_size), dtype=bool)
    return EpisodeRecord(
        task_id=task.task_id, instruction=task.instruction, seed=seed,
        rgb=np.stack(rgbs), depth=np.stack(depths).astype(np.float32),
        proprio=np.stack(proprios).astype(np.float32), actions=np.stack(actions).astype(np.float32),
        mask=mask, plan_steps=list(plan.steps), outcome=success,
        rgb_wrist=np.stack(rgbws) if rgbws else None,
    )


def generate_dataset(run_cfg: RunConfig, out_dir) -> dict:
    """Write expert episodes plus a checksummed manifest; failed episodes are excluded."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab = lang_cot.build_vocabulary()
    entries = []
    excluded = 0
    for ti, task_id in enumerate(run_cfg.tasks):
        task = tasks.get_task(task_id)
        for d in range(run_cfg.demos_per_task):
            seed = fold_seed(run_cfg.seed, 7, ti, d)
            rec = run_expert_episode(task, seed, run_cfg)
            if not rec.outcome:
                excluded += 1
                log.warning("expert failed on %s seed %d; episode excluded", task_id, seed)
                continue
            name = f"ep_{ti:02d}_{d:04d}"
            arrays = {
                "rgb": rec.rgb,
                "depth": rec.depth,
                "proprio": rec.proprio,
                "actions": rec.actions,
                "mask": rec.mask.astype(np.uint8),
            }
            if rec.rgb_wrist is not None:
                arrays["rgb_wrist"] = rec.rgb_wrist
            meta = {
                "task_id": rec.task_id,
                "instruction": rec.instruction,
                "seed": rec.seed,
                "plan_steps": rec.plan_steps,
                "outcome": bool(rec.outcome),
                "length": rec.length,
            }
            container.save_episode(out_dir / name, arrays, meta)
            entries.append({
                "file": name,
                "task_id": rec.task_id,
                "seed": rec.seed,
                "length": rec.length,
                "sha256": container.sha256_file(out_dir / f"{name}.cavt"),
            })
    manifest = {
        "format": "deskvla-dataset",
        "version": container.VERSION,
        "config": run_cfg.to_dict(),
        "vocab": vocab.tokens,
        "episodes": entries,
        "excluded": excluded,
    }
    container.write_json(out_dir / "manifest.json", manifest)
    return manifest


def load_dataset(data_dir) -> tuple[list[EpisodeRecord], lang_cot.Vocabulary, dict]:
    """Read every episode listed in the manifest, verifying checksums."""
    data_dir = Path(data_dir)
    manifest = container.read_json(data_dir / "manifest.json")
    vocab = lang_cot.Vocabulary(
        token_to_id={t: i for i, t in enumerate(manifest["vocab"])},
        tokens=list(manifest["vocab"]))
    episodes = []
    for entry in manifest["episodes"]:
        path = data_dir / entry["file"]
        if container.sha256_file(path.with_suffix(".cavt")) != entry["sha256"]:
            raise ValueError(f"episode {entry['file']} fails its manifest checksum")
        arrays, meta = container.load_episode(path)
        episodes.append(EpisodeRecord(
            task_id=meta["task_id"], instruction=meta["instruction"], seed=meta["seed"],
            rgb=arrays["rgb"], depth=arrays["depth"], proprio=arrays["proprio"],
            actions=arrays["actions"], mask=arrays["mask"].astype(bool),
            plan_steps=list(meta["plan_steps"]), outcome=bool(meta["outcome"]),
            rgb_wrist=arrays.get("rgb_wrist"),
        ))
    return episodes, vocab, manifest


@dataclass
class TrainingData:
    """Episode tensors plus per-episode caches for window batching."""

    episodes: list
    vocab: lang_cot.Vocabulary
    cfg: object
    run_cfg: RunConfig
    token_cache: list
    keep_cache: list
    train_windows: list
    val_windows: list
    _points_cache: dict

    @classmethod
    def build(cls, episodes: list, vocab: lang_cot.Vocabulary, run_cfg: RunConfig) -> "TrainingData":
        cfg = run_cfg.model_config()
        token_cache, keep_cache = [], []
        for ep in episodes:
            instr = lang_cot.parse_instruction(ep.instruction)
            plan = None
            if cfg.use_cot:
                plan = lang_cot.CoTPlan(steps=list(ep.plan_steps), rendered="", instruction=ep.instruction)
            tok = lang_cot.plan_token_ids(instr, plan, vocab, cfg.t_max)
            padded = np.full(cfg.t_max, lang_cot.PAD_ID, dtype=np.int64)
            padded[:len(tok.ids)] = tok.ids
            token_cache.append(padded)
            if ep.mask.any():
                keep_cache.append(ta_roi.patch_keep(ep.mask, cfg.patch_px, cfg.patch_threshold))
            else:
                keep_cache.append(np.ones(cfg.patches_per_view, dtype=bool))

        by_task: dict[str, list[int]] = {}
        for i, ep in enumerate(episodes):
            by_task.setdefault(ep.task_id, []).append(i)
        val_eps = set()
        for ids in by_task.values():
            val_eps.update(ids[len(ids) - min(run_cfg.holdout_demos, max(len(ids) - 1, 0)):])
        train_windows, val_windows = [], []
        for i, ep in enumerate(episodes):
            target = val_windows if i in val_eps else train_windows
            target.extend((i, t) for t in range(ep.length))
        return cls(episodes=episodes, vocab=vocab, cfg=cfg, run_cfg=run_cfg,
                   token_cache=token_cache, keep_cache=keep_cache,
                   train_windows=train_windows, val_windows=val_windows, _points_cache={})

    def points_for(self, ep_idx: int, t: int, rig) -> np.ndarray:
        key = (ep_idx, t)
        cached = self._points_cache.get(key)
        if cached is None:
            ep = self.episodes[ep_idx]
            cached = policy.depth_to_points(ep.depth[t], rig.intrinsics, self.cfg.n_points,
                                            seed=fold_seed(self.run_cfg.seed, 13, ep_idx, t))
            self._points_cache[key] = cached
        return cached

    def build_batch(self, windows: list, rig, sample_base: int) -> tuple[policy.PolicyInputs, np.ndarray]:
        """Stack one training batch; targets are normalized K-step action windows."""
        cfg = self.cfg
        k = cfg.chunk
        rgb, rgbw, tokens, proprio, keeps, points, targets = [], [], [], [], [], [], []
        for j, (ep_idx, t) in enumerate(windows):
            ep = self.episodes[ep_idx]
            rgb.append(ep.rgb[t].astype(np.float32) / 255.0)
            if cfg.use_wrist:
                rgbw.append(ep.rgb_wrist[t].astype(np.float32) / 255.0)
            tokens.append(self.token_cache[ep_idx])
            proprio.append(ep.proprio[t])
            if cfg.use_roi:
                disabled = (not self.episodes[ep_idx].mask.any()) or ta_roi.sample_disable(
                    fold_seed(self.run_cfg.seed, 17), sample_base + j, cfg.roi_disable_prob)
                keeps.append(np.ones(cfg.patches_per_view, dtype=np.float32) if disabled
                             else self.keep_cache[ep_idx].astype(np.float32))
            if cfg.use_depth:
                points.append(self.points_for(ep_idx, t, rig))
            chunk = ep.actions[t:t + k]
            if chunk.shape[0] < k:
                pad = np.repeat(chunk[-1:], k - chunk.shape[0], axis=0)
                chunk = np.concatenate([chunk, pad], axis=0)
            targets.append(policy.normalize_actions(chunk))
        inputs = policy.PolicyInputs(
            rgb_static=np.stack(rgb),
            tokens=np.stack(tokens),
            proprio=np.stack(proprio),
            keep=np.stack(keeps) if keeps else None,
            points=np.stack(points) if points else None,
            rgb_wrist=np.stack(rgbw) if rgbw else None,
        )
        return inputs, np.stack(targets)
