"""Training loop: shuffled chunk windows, Adam on the L1 objective, periodic held-out loss."""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np

from .. import autodiff as ad, policy
from ..sim import world as sim_world
from . import container
from .config import RunConfig
from .dataset import TrainingData, fold_seed, load_dataset

log = logging.getLogger(__name__)


def _forward_loss(params, cfg, inputs, targets):
    pred, mats = policy.policy_forward(params, cfg, inputs)
    return policy.training_loss(pred, targets, mats, cfg.tnet_penalty)


def _val_loss(params, cfg, data: TrainingData, rig, rng) -> float:
    if not data.val_windows:
        return float("nan")
    idx = rng.choice(len(data.val_windows), size=min(64, len(data.val_windows)), replace=False)
    windows = [data.val_windows[i] for i in idx]
    total = 0.0
    for start in range(0, len(windows), 16):
        part = windows[start:start + 16]
        inputs, targets = data.build_batch(part, rig, sample_base=0)
        pred, _ = policy.policy_forward(params, cfg, inputs)
        total += float(np.abs(pred.data - targets).mean()) * len(part)
    return total / len(windows)


def train(run_cfg: RunConfig, data_dir, out_dir) -> Path:
    """Fit the policy on a generated dataset and write a checkpoint plus loss curve."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    episodes, vocab, manifest = load_dataset(data_dir)
    cfg = run_cfg.model_config()
    cfg.vocab_size = vocab.size
    data = TrainingData.build(episodes, vocab, run_cfg)
    rig = sim_world.default_rig(cfg.image_size)
    if not data.train_windows:
        raise ValueError("dataset has no training windows")

    params = policy.init_policy_params(cfg, seed=run_cfg.seed)
    state = ad.OptimizerState(lr=run_cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([run_cfg.seed, 23]))
    val_rng = np.random.default_rng(np.random.SeedSequence([run_cfg.seed, 29]))

    log.info("training on %d windows from %d episodes (%d params)",
             len(data.train_windows), len(episodes), policy.parameter_count(params))
    rows = ["step,loss,val_loss"]
    last_good = None
    t_start = time.perf_counter()
    for step in range(1, run_cfg.train_steps + 1):
        idx = rng.integers(0, len(data.train_windows), size=run_cfg.batch_size)
        windows = [data.train_windows[i] for i in idx]
        inputs, targets = data.build_batch(windows, rig, sample_base=(step - 1) * run_cfg.batch_size)
        with ad.Tape() as tape:
            loss = _forward_loss(params, cfg, inputs, targets)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                if last_good is not None:
                    container.save_checkpoint(out_dir / "last_good", last_good, cfg, vocab.tokens,
                                              extra={"aborted_at_step": step})
                raise FloatingPointError(f"non-finite loss at step {step}; last-good checkpoint saved")
            ad.backward(tape, loss)
        grads = ad.collect_grads(params)
        ad.adam_step(params, grads, state)
        ad.zero_grads(params)

        if step % run_cfg.eval_every == 0 or step == run_cfg.train_steps:
            vl = _val_loss(params, cfg, data, rig, val_rng)
            rows.append(f"{step},{loss_val:.6f},{vl:.6f}")
            log.info("step %d: loss %.4f val %.4f (%.1fs)", step, loss_val, vl,
                     time.perf_counter() - t_start)
            last_good = {k: ad.Tensor(p.data.copy(), requires_grad=True) for k, p in params.items()}
        elif step % 50 == 0:
            rows.append(f"{step},{loss_val:.6f},")

    (out_dir / "train_log.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    extra = {
        "run_config": run_cfg.to_dict(),
        "dataset_episodes": len(episodes),
        "train_windows": len(data.train_windows),
        "final_loss": rows[-1].split(",")[1],
        "trained_tasks": list(run_cfg.tasks),
        "ablation": run_cfg.ablation_tag,
    }
    container.save_checkpoint(out_dir, params, cfg, vocab.tokens, extra=extra)
    return out_dir
