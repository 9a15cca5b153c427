"""Latency bench: per-query rollout cost with and without the depth branch."""

from __future__ import annotations

import dataclasses
import logging
import time
from pathlib import Path

import numpy as np

from .. import kernels, lang_cot, policy
from ..sim import render, tasks, world as sim_world
from . import container
from .config import RunConfig
from .dataset import fold_seed

log = logging.getLogger(__name__)


def _timed_calls(obs, ctx, params, cfg, steps: int, worker) -> np.ndarray:
    times = np.empty(steps, dtype=np.float64)
    for i in range(steps):
        stepped = dataclasses.replace(obs, step_index=i)
        t0 = time.perf_counter()
        policy.rollout_step(stepped, ctx, params, cfg, worker=worker)
        times[i] = time.perf_counter() - t0
    return times


def bench_latency(ckpt_dir, steps: int = 500, seed: int = 0, single_thread: bool = False,
                  out_path: Path | None = None) -> dict:
    """Measure chunk-query latency depth-on vs depth-off and check call discipline."""
    params, cfg, vocab_tokens, extra = container.load_checkpoint(ckpt_dir)
    vocab = lang_cot.Vocabulary(token_to_id={t: i for i, t in enumerate(vocab_tokens)},
                                tokens=list(vocab_tokens))
    run_cfg = RunConfig.from_dict(extra["run_config"]) if "run_config" in extra else RunConfig()
    task = tasks.get_task((extra.get("trained_tasks") or ["seen_ball_basket"])[0])
    rig = sim_world.default_rig(cfg.image_size)
    world = sim_world.reset(task, fold_seed(seed, 3))
    first_masks = render.ground_truth_masks(world, rig)
    obs = render.observe(world, rig, include_wrist=cfg.use_wrist)

    cfg_on = dataclasses.replace(cfg, use_depth=True)
    cfg_off = dataclasses.replace(cfg, use_depth=False)
    ctx = policy.prepare_episode(task.instruction, first_masks, cfg_on, vocab, seed=seed,
                                 mode="inference", noise=run_cfg.noise)

    worker = None
    if not single_thread and kernels.HAS_NUMBA:
        worker = policy.DepthWorker(params, cfg_on, rig.intrinsics)
    try:
        _timed_calls(obs, ctx, params, cfg_on, min(20, steps), worker)
        _timed_calls(obs, ctx, params, cfg_off, min(20, steps), None)
        with_depth = _timed_calls(obs, ctx, params, cfg_on, steps, worker)
        without_depth = _timed_calls(obs, ctx, params, cfg_off, steps, None)
    finally:
        if worker is not None:
            worker.close()

    mean_on, mean_off = float(with_depth.mean()), float(without_depth.mean())
    ratio = mean_on / mean_off

    # call discipline: context preparation happens once per episode
    policy.reset_counters()
    episodes = 3
    for e in range(episodes):
        w = sim_world.reset(task, fold_seed(seed, 5, e))
        masks = render.ground_truth_masks(w, rig)
        ctx_e = policy.prepare_episode(task.instruction, masks, cfg_on, vocab, seed=e,
                                       mode="inference", noise=run_cfg.noise)
        for t in range(3):
            o = render.observe(w, rig, include_wrist=cfg.use_wrist)
            policy.rollout_step(o, ctx_e, params, cfg_on, worker=None)
    counters = dict(policy.COUNTERS)

    report = {
        "steps": steps,
        "mean_latency_with_depth_s": mean_on,
        "mean_latency_without_depth_s": mean_off,
        "median_latency_with_depth_s": float(np.median(with_depth)),
        "median_latency_without_depth_s": float(np.median(without_depth)),
        "latency_ratio": ratio,
        "hz_with_depth": 1.0 / mean_on,
        "hz_without_depth": 1.0 / mean_off,
        "depth_parallel": not single_thread,
        "prepare_episode_calls": counters["prepare_episode"],
        "episodes_run": episodes,
        "rollout_steps_counted": counters["rollout_step"],
        "forward_calls": counters["policy_forward"],
    }
    log.info("bench: %.2f ms with depth, %.2f ms without, ratio %.3f",
             1e3 * mean_on, 1e3 * mean_off, ratio)
    if out_path is not None:
        container.write_json(out_path, report)
    return report
