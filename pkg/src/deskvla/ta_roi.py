"""Task-aware region of interest: entity extraction, noisy oracle detection, mask union, patch pooling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lang_cot import TEMPLATE_ROLES, Instruction, parse_instruction


@dataclass
class EntitySet:
    objects: list[str] = field(default_factory=list)
    locations: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.objects and not self.locations

    def all_names(self) -> list[str]:
        return list(self.objects) + list(self.locations)


@dataclass
class ROIMask:
    pixels: np.ndarray
    coverage: float = 0.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=bool)
        if self.pixels.ndim != 2:
            raise ValueError(f"mask must be 2-d, got shape {self.pixels.shape}")
        self.coverage = float(self.pixels.mean())

    @property
    def empty(self) -> bool:
        return not bool(self.pixels.any())


@dataclass(frozen=True)
class DetectorNoiseModel:
    swap_prob: float = 0.0
    jitter_px: int = 0
    dilate_px: int = 0

    def __post_init__(self):
        if not (0.0 <= self.swap_prob <= 1.0):
            raise ValueError(f"swap_prob must be in [0,1], got {self.swap_prob}")
        if self.jitter_px < 0 or self.dilate_px < 0:
            raise ValueError("jitter_px and dilate_px must be >= 0")


@dataclass
class PoolingConfig:
    patch_threshold: float = 0.5
    disable_prob: float = 0.30
    null_embedding: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 < self.patch_threshold <= 1.0):
            raise ValueError(f"patch_threshold must be in (0,1], got {self.patch_threshold}")
        if not (0.0 <= self.disable_prob <= 1.0):
            raise ValueError(f"disable_prob must be in [0,1], got {self.disable_prob}")


def extract_entities(instr: Instruction | str) -> EntitySet:
    """Slot values of a grammar-matched instruction, split into objects and locations.

    Unmatched instructions yield an empty set, which disables pooling downstream.
    """
    if isinstance(instr, str):
        instr = parse_instruction(instr)
    if not instr.matched:
        return EntitySet()
    roles = TEMPLATE_ROLES[instr.task_id]
    out = EntitySet()
    for slot, value in instr.entities.items():
        if roles[slot] == "object":
            out.objects.append(value)
        else:
            out.locations.append(value)
    return out


def shift_mask(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate with zero fill."""
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys = slice(max(dy, 0), min(h + dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    ys_src = slice(max(-dy, 0), min(h - dy, h))
    xs_src = slice(max(-dx, 0), min(w - dx, w))
    out[ys, xs] = mask[ys_src, xs_src]
    return out


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Square (Chebyshev) dilation: radius 1 turns a pixel into a 3x3 block."""
    if radius <= 0:
        return mask.copy()
    padded = np.pad(mask, radius)
    out = np.zeros_like(mask)
    h, w = mask.shape
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            out |= padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
    return out


def _entity_members(entity: str, frame_names: list[str]) -> list[str]:
    """Exact name match, else kind match on the final word ('pot' -> 'red pot')."""
    if entity in frame_names:
        return [entity]
    return [n for n in frame_names if n.split()[-1] == entity]


def detect_entities(frame_masks: dict, entities: EntitySet, noise: DetectorNoiseModel,
                    seed: int) -> tuple[dict, list[str]]:
    """Oracle detection with failure-mode noise applied per entity.

    frame_masks maps every scene entity name to its ground-truth boolean mask.
    Returns (per-entity masks, names that were absent from the scene).
    """
    names = list(frame_masks.keys())
    matched: dict[str, list[str]] = {}
    for e in entities.all_names():
        matched[e] = _entity_members(e, names)
    used = {m for ms in matched.values() for m in ms}
    distractors = [n for n in names if n not in used and n != "gripper"]

    out: dict[str, np.ndarray] = {}
    missing: list[str] = []
    for idx, entity in enumerate(matched):
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        members = matched[entity]
        if not members:
            missing.append(entity)
            shape = next(iter(frame_masks.values())).shape if frame_masks else (0, 0)
            out[entity] = np.zeros(shape, dtype=bool)
            continue
        mask = np.zeros_like(np.asarray(frame_masks[members[0]], dtype=bool))
        for m in members:
            mask |= np.asarray(frame_masks[m], dtype=bool)
        if noise.swap_prob > 0 and distractors and rng.random() < noise.swap_prob:
            mask = np.asarray(frame_masks[distractors[rng.integers(len(distractors))]], dtype=bool).copy()
        if noise.jitter_px > 0:
            dy, dx = rng.integers(-noise.jitter_px, noise.jitter_px + 1, size=2)
            mask = shift_mask(mask, int(dy), int(dx))
        if noise.dilate_px > 0:
            mask = dilate_mask(mask, noise.dilate_px)
        out[entity] = mask
    return out, missing


def union_track_masks(frame_mask_sets) -> ROIMask:
    """Pixelwise OR of every mask in every frame."""
    frames = list(frame_mask_sets)
    if not frames:
        raise ValueError("union requires at least one frame")
    acc = None
    for frame in frames:
        masks = frame.values() if isinstance(frame, dict) else frame
        for m in masks:
            m = np.asarray(m, dtype=bool)
            acc = m.copy() if acc is None else (acc | m)
    if acc is None:
        raise ValueError("union requires at least one mask per frame")
    return ROIMask(pixels=acc)


def patch_fractions(mask: np.ndarray, patch_px: int) -> np.ndarray:
    """Fraction of masked pixels per patch, row-major over the patch grid."""
    h, w = mask.shape
    if h % patch_px or w % patch_px:
        raise ValueError(f"patch size {patch_px} does not tile mask extent {h}x{w}")
    gh, gw = h // patch_px, w // patch_px
    blocks = mask.astype(np.float64).reshape(gh, patch_px, gw, patch_px)
    return blocks.mean(axis=(1, 3)).reshape(-1)


def patch_keep(mask: np.ndarray, patch_px: int, tau: float) -> np.ndarray:
    """Boolean keep flag per patch: kept iff at least tau of its pixels are masked."""
    return patch_fractions(mask, patch_px) >= tau


def pool_patches(patches: np.ndarray, mask: ROIMask, cfg: PoolingConfig) -> np.ndarray:
    """Replace patches under tau coverage with the null embedding; empty mask is a no-op.

    patches is (P, d) over a square grid that exactly tiles the mask extents.
    """
    patches = np.asarray(patches)
    p, d = patches.shape
    h, w = mask.pixels.shape
    grid = int(round(p ** 0.5))
    if grid * grid != p or h != w or h % grid:
        raise ValueError(f"patch grid {p} does not tile mask extent {h}x{w}")
    if mask.empty:
        return patches.copy()
    keep = patch_keep(mask.pixels, h // grid, cfg.patch_threshold)
    null = cfg.null_embedding if cfg.null_embedding is not None else np.zeros(d, dtype=patches.dtype)
    null = np.asarray(null, dtype=patches.dtype)
    if null.shape != (d,):
        raise ValueError(f"null embedding width {null.shape} mismatches patches width {d}")
    out = np.where(keep[:, None], patches, null[None, :])
    return out.astype(patches.dtype)


def sample_disable(seed: int, index: int, disable_prob: float = 0.30) -> bool:
    """Per-sample pooling disable flag, deterministic in (seed, index)."""
    if not (0.0 <= disable_prob <= 1.0):
        raise ValueError(f"disable_prob must be in [0,1], got {disable_prob}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    return bool(rng.random() < disable_prob)
