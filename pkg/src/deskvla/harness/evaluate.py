"""Open-loop rollout evaluation: success rates per task, CSV metrics, optional frame dumps."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import kernels, lang_cot, policy
from ..sim import expert, render, tasks, world as sim_world
from . import container
from .config import RunConfig
from .dataset import fold_seed

log = logging.getLogger(__name__)

CSV_HEADER = "suite,task_id,split,trials,successes,success_rate,ablation,wall_time_s,steps_per_sec"


@dataclass
class MetricsRow:
    suite: str
    task_id: str
    split: str
    trials: int
    successes: int
    success_rate: float
    ablation: str
    wall_time_s: float
    steps_per_sec: float

    def csv(self) -> str:
        return (f"{self.suite},{self.task_id},{self.split},{self.trials},{self.successes},"
                f"{self.success_rate:.4f},{self.ablation},{self.wall_time_s:.6f},{self.steps_per_sec:.2f}")


def _random_chunk(rng: np.random.Generator, k: int) -> np.ndarray:
    raw = rng.uniform(-1.0, 1.0, size=(k, 7)).astype(np.float32)
    raw[:, 6] = rng.uniform(0.0, 1.0, size=k) * 2.0 - 1.0
    return policy.denormalize_actions(raw)


def rollout_trial(task: tasks.TaskSpec, trial_seed: int, params, cfg, vocab, run_cfg: RunConfig,
                  provider: str = "policy", worker: policy.DepthWorker | None = None,
                  frame_dir: Path | None = None) -> tuple[bool, int]:
    """One evaluation episode; returns (success, steps used)."""
    rig = sim_world.default_rig(cfg.image_size)
    w = sim_world.reset(task, trial_seed)
    ctx = None
    if provider == "policy":
        first_masks = render.ground_truth_masks(w, rig)
        ctx = policy.prepare_episode(task.instruction, first_masks, cfg, vocab, seed=trial_seed,
                                     mode="inference", noise=run_cfg.noise)
    rng = np.random.default_rng(np.random.SeedSequence([trial_seed, 41]))
    m = run_cfg.execute_per_chunk
    chunk = None
    for t in range(run_cfg.max_rollout_steps):
        if t % m == 0:
            if provider == "policy":
                obs = render.observe(w, rig, include_wrist=cfg.use_wrist)
                chunk = policy.rollout_step(obs, ctx, params, cfg, worker=worker)
            elif provider == "expert":
                chunk = expert.scripted_expert(w, task, chunk=cfg.chunk)
            elif provider == "random":
                chunk = _random_chunk(rng, cfg.chunk)
            else:
                raise ValueError(f"unknown action provider '{provider}'")
        if frame_dir is not None:
            container.write_ppm(frame_dir / f"frame_{t:04d}.ppm", render.render_full(w, rig).rgb)
        sim_world.step(w, chunk[t % m])
        if sim_world.check_success(w, task):
            return True, t + 1
    return False, run_cfg.max_rollout_steps


def _suite_tasks(suite: str, trained_tasks: list[str] | None) -> list[tasks.TaskSpec]:
    if suite == "seen" and trained_tasks:
        return [tasks.get_task(t) for t in trained_tasks]
    return tasks.task_suite(suite)


def evaluate_suite(params, cfg, vocab, run_cfg: RunConfig, suite: str, trials: int, seed: int,
                   provider: str = "policy", trained_tasks: list[str] | None = None,
                   out_csv: Path | None = None, ablation: str = "none") -> list[MetricsRow]:
    """Roll out `trials` seeded episodes per task and report success rates."""
    suite_list = _suite_tasks(suite, trained_tasks)
    rows: list[MetricsRow] = []
    worker = None
    if provider == "policy" and cfg.use_depth and not run_cfg.single_thread and kernels.HAS_NUMBA:
        worker = policy.DepthWorker(params, cfg, sim_world.default_rig(cfg.image_size).intrinsics)
    try:
        for ti, task in enumerate(suite_list):
            t0 = time.perf_counter()
            successes = 0
            total_steps = 0
            for trial in range(trials):
                trial_seed = fold_seed(seed, 19, zlib_id(task.task_id), trial)
                ok, steps = rollout_trial(task, trial_seed, params, cfg, vocab, run_cfg,
                                          provider=provider, worker=worker)
                successes += int(ok)
                total_steps += steps
            wall = time.perf_counter() - t0
            if run_cfg.single_thread:
                wall_out, sps = 0.0, 0.0
            else:
                wall_out, sps = wall, total_steps / wall if wall > 0 else 0.0
            rows.append(MetricsRow(suite=suite, task_id=task.task_id, split=task.split,
                                   trials=trials, successes=successes,
                                   success_rate=successes / trials if trials else 0.0,
                                   ablation=ablation, wall_time_s=wall_out, steps_per_sec=sps))
            log.info("%s %s: %d/%d", suite, task.task_id, successes, trials)
    finally:
        if worker is not None:
            worker.close()
    if out_csv is not None:
        write_metrics_csv(out_csv, rows)
    return rows


def zlib_id(text: str) -> int:
    import zlib

    return zlib.crc32(text.encode())


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([CSV_HEADER] + [r.csv() for r in rows]) + "\n", encoding="utf-8")


def evaluate_checkpoint(ckpt_dir, suite: str, trials: int, seed: int, run_cfg: RunConfig | None = None,
                        provider: str = "policy", out_csv=None) -> list[MetricsRow]:
    params, cfg, vocab_tokens, extra = container.load_checkpoint(ckpt_dir)
    vocab = lang_cot.Vocabulary(token_to_id={t: i for i, t in enumerate(vocab_tokens)},
                                tokens=list(vocab_tokens))
    if cfg.vocab_size != vocab.size:
        raise ValueError("checkpoint vocabulary size disagrees with its model config")
    if run_cfg is None:
        run_cfg = RunConfig.from_dict(extra["run_config"]) if "run_config" in extra else RunConfig()
    trained = extra.get("trained_tasks")
    return evaluate_suite(params, cfg, vocab, run_cfg, suite, trials, seed, provider=provider,
                          trained_tasks=trained, out_csv=out_csv,
                          ablation=extra.get("ablation", "none"))
