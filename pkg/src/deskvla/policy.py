"""Policy: modality fusion, transformer backbone, chunked action head, rollout machinery."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import depth_encoder, encoders, geometry, kernels, lang_cot, ta_roi
from .autodiff import Tensor

POS_DELTA_MAX = 0.05
ROT_DELTA_MAX = 0.2

# invocation-discipline counters, asserted by tests and the latency bench
COUNTERS = {"prepare_episode": 0, "rollout_step": 0, "policy_forward": 0, "depth_encode": 0}


def reset_counters():
    for k in COUNTERS:
        COUNTERS[k] = 0


@dataclass
class ModelConfig:
    d: int = 64
    d_v: int = 64
    d_l: int = 64
    d_p: int = 8
    image_size: int = 64
    patch_px: int = 8
    t_max: int = 64
    chunk: int = 8
    action_dim: int = 7
    heads: int = 4
    layers: int = 2
    mlp_mult: int = 4
    n_points: int = 512
    use_wrist: bool = False
    use_depth: bool = True
    use_cot: bool = True
    use_roi: bool = True
    patch_threshold: float = 0.5
    roi_disable_prob: float = 0.30
    tnet_penalty: float = 1e-3
    vocab_size: int = 0

    def __post_init__(self):
        if self.image_size % self.patch_px:
            raise ValueError("patch size must tile the image")
        if self.d % self.heads:
            raise ValueError("width must divide evenly across heads")

    @property
    def patches_per_view(self) -> int:
        return (self.image_size // self.patch_px) ** 2

    def camera_views(self) -> list[str]:
        return ["static", "wrist"] if self.use_wrist else ["static"]

    def depth_views(self) -> list[str]:
        return ["static"] if self.use_depth else []

    @property
    def max_seq_len(self) -> int:
        return (self.patches_per_view * len(self.camera_views()) + self.t_max
                + 1 + len(self.depth_views()) + self.chunk)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FusedSequence:
    seq: Tensor
    segments: list[tuple[str, int, int]]

    @property
    def length(self) -> int:
        return self.seq.shape[1]


def init_policy_params(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    """All trainable tensors, keyed by dotted names with deterministic order."""
    if cfg.vocab_size <= 0:
        raise ValueError("vocab_size must be set before parameter init")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    params = encoders.init_encoder_params(rng, cfg)
    for view in cfg.depth_views():
        params.update(depth_encoder.init_depth_encoder_params(rng, cfg.d, view))
    d = cfg.d
    hidden = d * cfg.mlp_mult

    def w(shape, fan_in):
        return Tensor((rng.standard_normal(shape) / np.sqrt(fan_in)).astype(np.float32), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)

    for i in range(cfg.layers):
        pref = f"backbone.l{i}."
        params[pref + "ln1_g"] = ones((d,))
        params[pref + "ln1_b"] = zeros((d,))
        params[pref + "wq"] = w((d, d), d)
        params[pref + "bq"] = zeros((d,))
        params[pref + "wk"] = w((d, d), d)
        params[pref + "bk"] = zeros((d,))
        params[pref + "wv"] = w((d, d), d)
        params[pref + "bv"] = zeros((d,))
        # residual-path outputs start at zero so each block begins as identity
        params[pref + "wo"] = zeros((d, d))
        params[pref + "bo"] = zeros((d,))
        params[pref + "ln2_g"] = ones((d,))
        params[pref + "ln2_b"] = zeros((d,))
        params[pref + "mlp_w1"] = w((d, hidden), d)
        params[pref + "mlp_b1"] = zeros((hidden,))
        params[pref + "mlp_w2"] = zeros((hidden, d))
        params[pref + "mlp_b2"] = zeros((d,))
    params["queries"] = Tensor((0.02 * rng.standard_normal((cfg.chunk, d))).astype(np.float32), requires_grad=True)
    params["roi.null"] = Tensor((0.02 * rng.standard_normal((d,))).astype(np.float32), requires_grad=True)
    params["head.w"] = Tensor((0.02 * rng.standard_normal((d, cfg.action_dim))).astype(np.float32), requires_grad=True)
    params["head.b"] = zeros((cfg.action_dim,))
    return params


def parameter_count(params: dict) -> int:
    return int(sum(p.data.size for p in params.values()))


def cast_params(params: dict, dtype) -> dict:
    return {k: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad) for k, p in params.items()}


# ---------------------------------------------------------------------------
# forward pieces


def fuse(v_pooled: Tensor, v_wrist: Tensor | None, l: Tensor, p: Tensor,
         d_toks: list[Tensor], queries: Tensor) -> FusedSequence:
    """Concatenate modality streams in the fixed order, recording segment spans."""
    width = v_pooled.shape[-1]
    parts: list[tuple[str, Tensor]] = [("vision_static", v_pooled)]
    if v_wrist is not None:
        parts.append(("vision_wrist", v_wrist))
    parts.append(("text", l))
    if p.data.ndim == 2:
        p = ad.reshape(p, (p.shape[0], 1, p.shape[1]))
    parts.append(("proprio", p))
    for i, dt in enumerate(d_toks):
        if dt.data.ndim == 2:
            dt = ad.reshape(dt, (dt.shape[0], 1, dt.shape[1]))
        parts.append((f"depth_{i}", dt))
    if queries is not None and queries.shape[-2] > 0:
        parts.append(("queries", queries))
    segments = []
    off = 0
    for name, t in parts:
        if t.shape[-1] != width:
            raise ValueError(f"fuse: segment '{name}' width {t.shape[-1]} mismatches {width}")
        segments.append((name, off, off + t.shape[-2]))
        off += t.shape[-2]
    seq = ad.concat([t for _, t in parts], axis=-2)
    return FusedSequence(seq=seq, segments=segments)


def _ln(x, params, pref):
    return ad.add(ad.mul(ad.layer_norm(x), params[pref + "_g"]), params[pref + "_b"])


def _attention(x: Tensor, params: dict, pref: str, cfg: ModelConfig) -> Tensor:
    b, length, d = x.shape
    h, dk = cfg.heads, cfg.d // cfg.heads

    def proj(name):
        t = ad.add(ad.matmul(x, params[pref + name]), params[pref + "b" + name[-1]])
        return ad.transpose(ad.reshape(t, (b, length, h, dk)), (0, 2, 1, 3))

    q, k, v = proj("wq"), proj("wk"), proj("wv")
    scores = ad.mul(ad.batch_matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.batch_matmul(attn, v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, length, d))
    return ad.add(ad.matmul(ctx, params[pref + "wo"]), params[pref + "bo"])


def backbone_forward(z: Tensor, params: dict, cfg: ModelConfig) -> Tensor:
    """Bidirectional pre-norm transformer; zero residual weights make it the identity."""
    if z.data.ndim == 2:
        z = ad.reshape(z, (1, *z.shape))
    if z.shape[1] > cfg.max_seq_len:
        raise ValueError(f"sequence length {z.shape[1]} exceeds configured max {cfg.max_seq_len}")
    x = z
    for i in range(cfg.layers):
        pref = f"backbone.l{i}."
        x = ad.add(x, _attention(_ln(x, params, pref + "ln1"), params, pref, cfg))
        hmid = ad.relu(ad.add(ad.matmul(_ln(x, params, pref + "ln2"), params[pref + "mlp_w1"]),
                              params[pref + "mlp_b1"]))
        x = ad.add(x, ad.add(ad.matmul(hmid, params[pref + "mlp_w2"]), params[pref + "mlp_b2"]))
    return x


def action_head(h: Tensor, params: dict) -> Tensor:
    """Linear map from each query slot to one action vector."""
    return ad.add(ad.matmul(h, params["head.w"]), params["head.b"])


def training_loss(pred: Tensor, target, tnet_mats=(), penalty_weight: float = 1e-3) -> Tensor:
    """Mean absolute action error plus the weighted transform regularizer."""
    loss = ad.l1_loss(pred, target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype)))
    mats = list(tnet_mats)
    if mats and penalty_weight > 0:
        pen = depth_encoder.orthogonality_penalty(mats[0])
        for m in mats[1:]:
            pen = ad.add(pen, depth_encoder.orthogonality_penalty(m))
        loss = ad.add(loss, ad.mul(pen, penalty_weight / len(mats)))
    return loss


@dataclass
class PolicyInputs:
    rgb_static: np.ndarray
    tokens: np.ndarray
    proprio: np.ndarray
    keep: np.ndarray | None = None
    points: np.ndarray | None = None
    rgb_wrist: np.ndarray | None = None
    depth_emb: np.ndarray | None = None


def policy_forward(params: dict, cfg: ModelConfig, inputs: PolicyInputs) -> tuple[Tensor, list[Tensor]]:
    """Full forward pass to a (B, K, N) action chunk; also returns transform matrices."""
    COUNTERS["policy_forward"] += 1
    v = encoders.encode_image(inputs.rgb_static, params, cfg, "static")
    l = encoders.encode_text(inputs.tokens, params, cfg)
    vv, ll = encoders.project_common(v, l, params)
    b = vv.shape[0]
    d = cfg.d

    if inputs.keep is not None and cfg.use_roi:
        keep = np.asarray(inputs.keep, dtype=np.float32)
        if keep.ndim == 1:
            keep = keep[None]
        keep = keep[..., None]
        null = ad.reshape(params["roi.null"], (1, 1, d))
        vv = ad.add(ad.mul(vv, Tensor(keep)), ad.mul(null, Tensor(1.0 - keep)))

    v_wrist = None
    if cfg.use_wrist:
        if inputs.rgb_wrist is None:
            raise ValueError("wrist view enabled but rgb_wrist missing")
        vw = encoders.encode_image(inputs.rgb_wrist, params, cfg, "wrist")
        v_wrist = ad.matmul(vw, params["proj.vision_w"])

    p = encoders.encode_proprio(inputs.proprio, params)

    d_toks: list[Tensor] = []
    mats: list[Tensor] = []
    if cfg.use_depth:
        COUNTERS["depth_encode"] += 1
        if inputs.depth_emb is not None:
            emb = np.asarray(inputs.depth_emb, dtype=np.float32)
            if emb.ndim == 1:
                emb = emb[None]
            d_toks.append(Tensor(emb))
        else:
            if inputs.points is None:
                raise ValueError("depth branch enabled but points missing")
            emb, mat = depth_encoder.encode_cloud_full(Tensor(np.asarray(inputs.points, dtype=np.float32)),
                                                       params, "static")
            d_toks.append(emb)
            mats.append(mat)

    queries = ad.add(Tensor(np.zeros((b, cfg.chunk, d), dtype=np.float32)), params["queries"])
    fused = fuse(vv, v_wrist, ll, p, d_toks, queries)
    h = backbone_forward(fused.seq, params, cfg)
    length = fused.length
    q_out = ad.slice_axis(h, 1, length - cfg.chunk, length)
    return action_head(q_out, params), mats


# ---------------------------------------------------------------------------
# action scaling between metric deltas and the regression range


def normalize_actions(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float32)
    out = a.copy()
    out[..., 0:3] = a[..., 0:3] / POS_DELTA_MAX
    out[..., 3:6] = a[..., 3:6] / ROT_DELTA_MAX
    out[..., 6] = a[..., 6] * 2.0 - 1.0
    return out


def denormalize_actions(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float32)
    out = a.copy()
    out[..., 0:3] = np.clip(a[..., 0:3], -1.0, 1.0) * POS_DELTA_MAX
    out[..., 3:6] = np.clip(a[..., 3:6], -1.0, 1.0) * ROT_DELTA_MAX
    out[..., 6] = np.clip((a[..., 6] + 1.0) / 2.0, 0.0, 1.0)
    return out


# ---------------------------------------------------------------------------
# per-episode context and rollout


@dataclass
class EpisodeContext:
    token_ids: np.ndarray
    mask: ta_roi.ROIMask
    keep: np.ndarray
    disable: bool
    plan: lang_cot.CoTPlan | None
    instruction: lang_cot.Instruction
    seed: int


def _pad_tokens(ids: np.ndarray, t_max: int) -> np.ndarray:
    out = np.full(t_max, lang_cot.PAD_ID, dtype=np.int64)
    n = min(len(ids), t_max)
    out[:n] = ids[:n]
    return out


def prepare_episode(instr_text: str, frame_masks, cfg: ModelConfig, vocab: lang_cot.Vocabulary,
                    seed: int, mode: str = "inference",
                    noise: ta_roi.DetectorNoiseModel = ta_roi.DetectorNoiseModel(),
                    plan: lang_cot.CoTPlan | None = None) -> EpisodeContext:
    """One-time episode setup: tokenized instruction (+plan) and the pooling mask.

    frame_masks is a list of {entity name: bool mask} dicts, one per demo frame
    in training mode, or a single first-frame dict in inference mode (which
    must include a "gripper" entry).
    """
    COUNTERS["prepare_episode"] += 1
    if mode not in ("inference", "training"):
        raise ValueError(f"unknown mode '{mode}'")
    instr = lang_cot.parse_instruction(instr_text)
    if cfg.use_cot and plan is None:
        plan = lang_cot.decompose_rule_based(instr)
    if not cfg.use_cot:
        plan = None
    tok = lang_cot.plan_token_ids(instr, plan, vocab, cfg.t_max)
    token_ids = _pad_tokens(tok.ids, cfg.t_max)

    frames = frame_masks if isinstance(frame_masks, list) else [frame_masks]
    if not frames:
        raise ValueError("prepare_episode requires at least one frame of ground truth")
    entities = ta_roi.extract_entities(instr)
    p = cfg.patches_per_view
    disable = False
    if not cfg.use_roi or entities.empty:
        mask = ta_roi.ROIMask(pixels=np.zeros((cfg.image_size, cfg.image_size), dtype=bool))
        disable = True
    else:
        detected = []
        for fi, frame in enumerate(frames):
            masks, _missing = ta_roi.detect_entities(frame, entities, noise, seed=seed * 100003 + fi)
            detected.append(masks)
        if mode == "inference" and "gripper" in frames[0]:
            detected.append({"gripper": np.asarray(frames[0]["gripper"], dtype=bool)})
        mask = ta_roi.union_track_masks(detected)
        if mask.empty:
            disable = True
    keep = np.ones(p, dtype=bool) if disable else ta_roi.patch_keep(mask.pixels, cfg.patch_px, cfg.patch_threshold)
    return EpisodeContext(token_ids=token_ids, mask=mask, keep=keep, disable=disable,
                          plan=plan, instruction=instr, seed=seed)


def depth_to_points(depth_values: np.ndarray, intr: geometry.CameraIntrinsics,
                    n_points: int, seed: int) -> np.ndarray:
    """Depth map to a normalized, seeded fixed-size point set for the encoder."""
    cloud = geometry.back_project(geometry.DepthImage(values=depth_values), intr)
    if len(cloud) == 0:
        return np.zeros((n_points, 3), dtype=np.float32)
    normed, _c, _s = geometry.normalize_cloud(cloud)
    return geometry.subsample(normed, n_points, seed).points


class DepthWorker:
    """Dedicated thread that runs the fused depth kernel in parallel with the main encoders.

    The worker parks inside a GIL-free compiled spin loop with every buffer
    pre-bound, so handing it one task per chunk query needs no Python-level
    synchronization on the hot path. Requires numba; callers fall back to the
    inline branch otherwise (see evaluate/bench wiring). One task may be in
    flight at a time.
    """

    IDLE_BUDGET = 2_000_000

    def __init__(self, params: dict, cfg: ModelConfig, intrinsics: geometry.CameraIntrinsics):
        if not kernels.HAS_NUMBA:
            raise RuntimeError("DepthWorker requires the numba backend")
        self._cmd = np.zeros(1, dtype=np.int64)
        self._done = np.zeros(1, dtype=np.int64)
        self._depth = np.zeros((intrinsics.height, intrinsics.width), dtype=np.float32)
        self._u01 = np.zeros(cfg.n_points, dtype=np.float64)
        self._out = np.zeros(cfg.d, dtype=np.float32)
        self._weights = depth_encoder.pack_fast_weights(params, "static")
        self._args = (self._cmd, self._done, self._depth,
                      float(intrinsics.fx), float(intrinsics.fy),
                      float(intrinsics.cx), float(intrinsics.cy),
                      self._u01, cfg.n_points, *self._weights, self._out, self.IDLE_BUDGET)
        self._stop = False
        kernels._worker_spin_jit(*self._args)  # compile before the thread starts
        self._thread = threading.Thread(target=self._loop, daemon=True, name="deskvla-depth")
        self._thread.start()

    def _loop(self):
        while not self._stop:
            rc = kernels._worker_spin_jit(*self._args)
            if rc == 2:
                return

    def start(self, depth_values: np.ndarray, u01: np.ndarray) -> None:
        if depth_values.shape != self._depth.shape:
            raise ValueError(f"depth extent {depth_values.shape} mismatches worker {self._depth.shape}")
        self._depth[:] = depth_values
        self._u01[:] = u01
        self._done[0] = 0
        self._cmd[0] = kernels.CMD_TASK

    def result(self) -> np.ndarray:
        while self._done[0] != 1:
            if not kernels._wait_flag_jit(self._done, 50_000_000):
                raise TimeoutError("depth worker did not complete its task")
        return self._out.copy()

    def close(self):
        self._stop = True
        self._cmd[0] = kernels.CMD_STOP
        self._thread.join(timeout=2.0)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def rollout_point_draws(ctx_seed: int, step_index: int, n_points: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([ctx_seed, 1013, int(step_index)]))
    return rng.random(n_points)


def _depth_embedding(obs, ctx: EpisodeContext, params: dict, cfg: ModelConfig) -> np.ndarray:
    """Fused rollout depth branch: selection, back-projection, normalization, encoder."""
    u01 = rollout_point_draws(ctx.seed, obs.step_index, cfg.n_points)
    intr = obs.intrinsics
    return kernels.depth_branch_forward(obs.depth, intr.fx, intr.fy, intr.cx, intr.cy,
                                        u01, cfg.n_points,
                                        depth_encoder.pack_fast_weights(params, "static"))


def rollout_step(obs, ctx: EpisodeContext, params: dict, cfg: ModelConfig,
                 worker: DepthWorker | None = None) -> np.ndarray:
    """One chunk query: returns (K, N) metric actions for open-loop execution."""
    if ctx is None:
        raise ValueError("rollout_step requires a prepared episode context")
    COUNTERS["rollout_step"] += 1
    started = False
    if cfg.use_depth and worker is not None:
        worker.start(obs.depth, rollout_point_draws(ctx.seed, obs.step_index, cfg.n_points))
        started = True
    keep = None
    if cfg.use_roi:
        keep = (np.ones(cfg.patches_per_view, dtype=np.float32) if ctx.disable
                else ctx.keep.astype(np.float32))[None]
    depth_emb = None
    if cfg.use_depth:
        depth_emb = worker.result() if started else _depth_embedding(obs, ctx, params, cfg)
    inputs = PolicyInputs(
        rgb_static=obs.rgb_static[None],
        tokens=ctx.token_ids[None],
        proprio=np.asarray(obs.proprio, dtype=np.float32)[None],
        keep=keep,
        rgb_wrist=None if obs.rgb_wrist is None else obs.rgb_wrist[None],
        depth_emb=None if depth_emb is None else depth_emb[None],
    )
    pred, _ = policy_forward(params, cfg, inputs)
    return denormalize_actions(pred.data[0])
