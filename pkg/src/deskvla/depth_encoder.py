"""Trainable point-cloud branch: input transform, shared per-point layers, max pool, projection."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor

TNET_HIDDEN = (32, 64, 32)
MLP_WIDTHS = (32, 64, 128)
PARAM_BUDGET = 1_500_000

# pack_fast_weights must emit arrays in exactly this order.
_FAST_KEYS = (
    "tnet.w1", "tnet.b1", "tnet.w2", "tnet.b2", "tnet.w3", "tnet.b3", "tnet.w4", "tnet.b4",
    "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2", "mlp.w3", "mlp.b3",
    "proj.w", "proj.b",
)


def init_depth_encoder_params(rng: np.random.Generator, d: int, view: str = "static",
                              dtype=np.float32) -> dict[str, Tensor]:
    """Parameters for one per-view encoder; the input transform starts at identity."""
    h1, h2, h3 = TNET_HIDDEN
    m1, m2, m3 = MLP_WIDTHS

    def w(shape, fan_in):
        return Tensor((rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    pref = f"depth.{view}."
    params = {
        pref + "tnet.w1": w((3, h1), 3),
        pref + "tnet.b1": zeros((h1,)),
        pref + "tnet.w2": w((h1, h2), h1),
        pref + "tnet.b2": zeros((h2,)),
        pref + "tnet.w3": w((h2, h3), h2),
        pref + "tnet.b3": zeros((h3,)),
        pref + "tnet.w4": zeros((h3, 9)),
        pref + "tnet.b4": Tensor(np.eye(3, dtype=dtype).reshape(9), requires_grad=True),
        pref + "mlp.w1": w((3, m1), 3),
        pref + "mlp.b1": zeros((m1,)),
        pref + "mlp.w2": w((m1, m2), m1),
        pref + "mlp.b2": zeros((m2,)),
        pref + "mlp.w3": w((m2, m3), m2),
        pref + "mlp.b3": zeros((m3,)),
        pref + "proj.w": w((m3, d), m3),
        pref + "proj.b": zeros((d,)),
    }
    return params


def count_parameters(params: dict, prefix: str = "depth.") -> int:
    return int(sum(p.data.size for k, p in params.items() if k.startswith(prefix)))


def _as_batched(points) -> tuple[Tensor, bool]:
    if isinstance(points, Tensor):
        t = points
    else:
        t = Tensor(np.asarray(points, dtype=np.float32))
    if t.data.ndim == 2:
        return ad.reshape(t, (1, *t.data.shape)), True
    if t.data.ndim != 3:
        raise ValueError(f"points must be (n, 3) or (B, n, 3), got {t.shape}")
    return t, False


def tnet_transform(points, params: dict, view: str = "static") -> tuple[Tensor, Tensor]:
    """Predict a 3x3 transform from the point set and apply it.

    The matrix depends on the points only through a symmetric max pool, so it
    is invariant to point order.
    """
    pts, squeeze = _as_batched(points)
    pref = f"depth.{view}."
    h = ad.relu(ad.add(ad.matmul(pts, params[pref + "tnet.w1"]), params[pref + "tnet.b1"]))
    h = ad.relu(ad.add(ad.matmul(h, params[pref + "tnet.w2"]), params[pref + "tnet.b2"]))
    pooled = ad.max_over_axis(h, 1)
    g = ad.relu(ad.add(ad.matmul(pooled, params[pref + "tnet.w3"]), params[pref + "tnet.b3"]))
    mat = ad.add(ad.matmul(g, params[pref + "tnet.w4"]), params[pref + "tnet.b4"])
    mat = ad.reshape(mat, (pts.shape[0], 3, 3))
    transformed = ad.batch_matmul(pts, mat)
    if squeeze:
        return ad.reshape(mat, (3, 3)), ad.reshape(transformed, transformed.shape[1:])
    return mat, transformed


def encode_cloud_full(points, params: dict, view: str = "static") -> tuple[Tensor, Tensor]:
    """Embedding plus the input transform used (needed for the training regularizer)."""
    pts, squeeze = _as_batched(points)
    if pts.shape[1] < 1:
        raise ValueError("cannot encode an empty point set")
    mat, q = tnet_transform(pts, params, view)
    pref = f"depth.{view}."
    h = ad.relu(ad.add(ad.matmul(q, params[pref + "mlp.w1"]), params[pref + "mlp.b1"]))
    h = ad.relu(ad.add(ad.matmul(h, params[pref + "mlp.w2"]), params[pref + "mlp.b2"]))
    h = ad.relu(ad.add(ad.matmul(h, params[pref + "mlp.w3"]), params[pref + "mlp.b3"]))
    feat = ad.max_over_axis(h, 1)
    emb = ad.add(ad.matmul(feat, params[pref + "proj.w"]), params[pref + "proj.b"])
    if squeeze:
        return ad.reshape(emb, (emb.shape[-1],)), mat
    return emb, mat


def encode_cloud(points, params: dict, view: str = "static") -> Tensor:
    return encode_cloud_full(points, params, view)[0]


def orthogonality_penalty(mat) -> Tensor:
    """Squared Frobenius distance of M M^T from the identity, averaged over any batch."""
    if not isinstance(mat, Tensor):
        mat = Tensor(np.asarray(mat, dtype=np.float32))
    m = mat
    batched = m.data.ndim == 3
    if not batched:
        m = ad.reshape(m, (1, 3, 3))
    eye = Tensor(np.broadcast_to(np.eye(3, dtype=m.dtype), m.shape).copy())
    mmt = ad.batch_matmul(m, ad.transpose(m, (0, 2, 1)))
    diff = ad.sub(eye, mmt)
    sq = ad.mul(diff, diff)
    return ad.mul(ad.mean_over_axis(sq, None), 9.0)


def pack_fast_weights(params: dict, view: str = "static") -> tuple:
    pref = f"depth.{view}."
    return tuple(np.ascontiguousarray(params[pref + k].data, dtype=np.float32) for k in _FAST_KEYS)


def encode_cloud_fast(points: np.ndarray, packed: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Inference-only forward through the packed weights; see kernels.pointnet_forward."""
    return kernels.pointnet_forward(points, packed)
