"""Vision, language, and proprioception encoders plus common-space projections."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def patchify(rgb: np.ndarray, patch_px: int) -> np.ndarray:
    """(B, H, W, 3) image to (B, P, patch_px*patch_px*3) row-major patch matrix."""
    rgb = np.asarray(rgb, dtype=np.float32)
    if rgb.ndim == 3:
        rgb = rgb[None]
    b, h, w, c = rgb.shape
    if h != w or h % patch_px:
        raise ValueError(f"image extent {h}x{w} is not tiled by patch size {patch_px}")
    g = h // patch_px
    x = rgb.reshape(b, g, patch_px, g, patch_px, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, g * g, patch_px * patch_px * c)


def init_encoder_params(rng: np.random.Generator, cfg, dtype=np.float32) -> dict[str, Tensor]:
    """Fresh encoder parameters; every view gets its own vision stack."""
    d, dv, dl, dp = cfg.d, cfg.d_v, cfg.d_l, cfg.d_p
    patch_dim = cfg.patch_px * cfg.patch_px * 3
    p = cfg.patches_per_view
    hidden = 32

    def w(shape, fan_in):
        return Tensor((rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype), requires_grad=True)

    def small(shape):
        return Tensor((0.02 * rng.standard_normal(shape)).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    params: dict[str, Tensor] = {}
    for view in cfg.camera_views():
        params[f"vision.{view}.patch_w"] = w((patch_dim, dv), patch_dim)
        params[f"vision.{view}.patch_b"] = zeros((dv,))
        params[f"vision.{view}.pos"] = small((p, dv))
    params["text.embed"] = small((cfg.vocab_size, dl))
    params["text.pos"] = small((cfg.t_max, dl))
    params["proj.vision_w"] = w((dv, d), dv)
    params["proj.text_w"] = w((dl, d), dl)
    params["proprio.w1"] = w((dp, hidden), dp)
    params["proprio.b1"] = zeros((hidden,))
    params["proprio.w2"] = w((hidden, d), hidden)
    params["proprio.b2"] = zeros((d,))
    return params


def encode_image(rgb: np.ndarray, params: dict, cfg, view: str = "static") -> Tensor:
    """Patch-embed one camera view: linear projection of flat patches plus positions."""
    rgb = np.asarray(rgb, dtype=np.float32)
    if rgb.ndim == 3:
        rgb = rgb[None]
    if rgb.shape[1] != cfg.image_size or rgb.shape[2] != cfg.image_size:
        raise ValueError(f"expected {cfg.image_size}x{cfg.image_size} image, got {rgb.shape[1]}x{rgb.shape[2]}")
    if rgb.min() < -1e-4 or rgb.max() > 1.0 + 1e-4:
        raise ValueError("image values must lie in [0, 1]")
    flat = Tensor(patchify(rgb, cfg.patch_px))
    out = ad.add(ad.matmul(flat, params[f"vision.{view}.patch_w"]), params[f"vision.{view}.patch_b"])
    return ad.add(out, params[f"vision.{view}.pos"])


def encode_text(token_ids: np.ndarray, params: dict, cfg) -> Tensor:
    """Embedding-table lookup (as a one-hot matmul) plus learned positions."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    v = cfg.vocab_size
    if ids.min() < 0 or ids.max() >= v:
        raise ValueError(f"token id out of range [0, {v}): {int(ids.min())}..{int(ids.max())}")
    t = ids.shape[1]
    if t > cfg.t_max:
        raise ValueError(f"token count {t} exceeds t_max {cfg.t_max}")
    onehot = np.zeros((ids.shape[0], t, v), dtype=params["text.embed"].dtype)
    np.put_along_axis(onehot, ids[..., None], 1.0, axis=2)
    emb = ad.matmul(Tensor(onehot), params["text.embed"])
    pos = ad.slice_axis(params["text.pos"], 0, 0, t) if t < cfg.t_max else params["text.pos"]
    return ad.add(emb, pos)


def project_common(v: Tensor, l: Tensor, params: dict) -> tuple[Tensor, Tensor]:
    """Map patch and token embeddings into the shared latent width."""
    if v.shape[-1] != params["proj.vision_w"].shape[0]:
        raise ValueError(f"vision width {v.shape[-1]} mismatches projection {params['proj.vision_w'].shape}")
    if l.shape[-1] != params["proj.text_w"].shape[0]:
        raise ValueError(f"text width {l.shape[-1]} mismatches projection {params['proj.text_w'].shape}")
    return ad.matmul(v, params["proj.vision_w"]), ad.matmul(l, params["proj.text_w"])


def encode_proprio(state: np.ndarray, params: dict) -> Tensor:
    """Two-layer relu MLP over the robot state vector."""
    state = np.asarray(state, dtype=np.float32)
    if state.ndim == 1:
        state = state[None]
    if not np.all(np.isfinite(state)):
        raise ValueError("proprioceptive state contains non-finite values")
    if state.shape[-1] != params["proprio.w1"].shape[0]:
        raise ValueError(f"state width {state.shape[-1]} mismatches proprio MLP {params['proprio.w1'].shape}")
    h = ad.relu(ad.add(ad.matmul(Tensor(state), params["proprio.w1"]), params["proprio.b1"]))
    return ad.add(ad.matmul(h, params["proprio.w2"]), params["proprio.b2"])
