"""Deterministic numeric kernels: scaled-dot-product cross attention, the
two-pathway BEV/spatial fusion block, weighted multi-scale neighbor
aggregation, and the training-objective functions, each with analytic
gradients suitable for finite-difference verification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import erf

from .errors import EmptyVoxelSet, ShapeMismatch

BCE_CLAMP = 1e-7


# ---------------------------------------------------------------------------
# elementwise pieces

def softmax(x, axis=-1):
    """Stabilized softmax along ``axis``; rows sum to one."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_vjp(p, grad):
    # p = softmax(x) along the last axis
    return p * (grad - (grad * p).sum(axis=-1, keepdims=True))


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x):
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * phi


# ---------------------------------------------------------------------------
# layer normalization

@dataclass
class LayerNormParams:
    gain: np.ndarray
    bias: np.ndarray

    @classmethod
    def identity(cls, dim):
        return cls(np.ones(dim), np.zeros(dim))


def _ln_forward(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gain + bias, (xhat, inv, gain)


def _ln_backward(grad, cache):
    xhat, inv, gain = cache
    dgain = (grad * xhat).sum(axis=0)
    dbias = grad.sum(axis=0)
    dxhat = grad * gain
    dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dx, dgain, dbias


def layer_norm(x, gain, bias, epsilon=1e-5):
    """Per-row normalization followed by affine gain/bias."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeMismatch("layer_norm expects an N x C matrix with C >= 2")
    out, _ = _ln_forward(x, np.asarray(gain, float), np.asarray(bias, float), epsilon)
    return out


# ---------------------------------------------------------------------------
# cross attention

@dataclass
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    @classmethod
    def random(cls, rng, c_q, c_kv, d_h, scale=0.3):
        return cls(rng.normal(0, scale, (c_q, d_h)),
                   rng.normal(0, scale, (c_kv, d_h)),
                   rng.normal(0, scale, (c_kv, d_h)))


def _ca_forward(Q, K, V, p):
    if K.shape[0] != V.shape[0]:
        raise ShapeMismatch("K and V must have the same row count")
    if Q.shape[1] != p.w_q.shape[0] or K.shape[1] != p.w_k.shape[0] \
            or V.shape[1] != p.w_v.shape[0]:
        raise ShapeMismatch("projection matrices do not match input channels")
    d_h = p.w_q.shape[1]
    if p.w_k.shape[1] != d_h or p.w_v.shape[1] != d_h:
        raise ShapeMismatch("projection output dims differ")
    qb, kb, vb = Q @ p.w_q, K @ p.w_k, V @ p.w_v
    scores = qb @ kb.T / np.sqrt(d_h)
    attn = softmax(scores, axis=-1)
    return attn @ vb, (Q, K, V, qb, kb, vb, attn, d_h)


def _ca_backward(grad, cache, p):
    Q, K, V, qb, kb, vb, attn, d_h = cache
    d_attn = grad @ vb.T
    d_vb = attn.T @ grad
    d_scores = _softmax_vjp(attn, d_attn) / np.sqrt(d_h)
    d_qb = d_scores @ kb
    d_kb = d_scores.T @ qb
    grads = {"w_q": Q.T @ d_qb, "w_k": K.T @ d_kb, "w_v": V.T @ d_vb}
    return d_qb @ p.w_q.T, d_kb @ p.w_k.T, d_vb @ p.w_v.T, grads


def cross_attention(Q, K, V, params: AttentionParams):
    """softmax(QWq (KWk)^T / sqrt(D_h)) VWv with row-wise softmax."""
    Q, K, V = (np.asarray(m, dtype=np.float64) for m in (Q, K, V))
    out, _ = _ca_forward(Q, K, V, params)
    return out


def cross_attention_grads(Q, K, V, params: AttentionParams, grad_out=None):
    """Gradients of sum(grad_out * output) w.r.t. inputs and projections.

    ``grad_out`` defaults to all-ones (gradient of the plain output sum).
    Returns (dQ, dK, dV, {"w_q", "w_k", "w_v"}).
    """
    Q, K, V = (np.asarray(m, dtype=np.float64) for m in (Q, K, V))
    out, cache = _ca_forward(Q, K, V, params)
    g = np.ones_like(out) if grad_out is None else np.asarray(grad_out, float)
    return _ca_backward(g, cache, params)


# ---------------------------------------------------------------------------
# feed-forward network (also used as a generic two-layer MLP)

@dataclass
class FfnParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def random(cls, rng, d_in, d_out, hidden=None, scale=0.3):
        hidden = 4 * d_in if hidden is None else hidden
        return cls(rng.normal(0, scale, (d_in, hidden)), rng.normal(0, scale, hidden),
                   rng.normal(0, scale, (hidden, d_out)), rng.normal(0, scale, d_out))


def _ffn_forward(x, p):
    if x.shape[1] != p.w1.shape[0]:
        raise ShapeMismatch("FFN input width mismatch")
    h = x @ p.w1 + p.b1
    ha = gelu(h)
    return ha @ p.w2 + p.b2, (x, h, ha)


def _ffn_backward(grad, cache, p):
    x, h, ha = cache
    grads = {"w2": ha.T @ grad, "b2": grad.sum(axis=0)}
    dha = grad @ p.w2.T
    dh = dha * _gelu_grad(h)
    grads["w1"] = x.T @ dh
    grads["b1"] = dh.sum(axis=0)
    return dh @ p.w1.T, grads


def ffn(x, params: FfnParams):
    """Two affine maps with a smooth ramp nonlinearity between."""
    out, _ = _ffn_forward(np.asarray(x, dtype=np.float64), params)
    return out


# ---------------------------------------------------------------------------
# two-pathway fusion block

@dataclass
class BvatParams:
    ln_bev: LayerNormParams
    ln_sp: LayerNormParams
    attn_bev_q: AttentionParams  # queries from the BEV pathway
    attn_sp_q: AttentionParams   # queries from the spatial pathway
    ffn_bev_q: FfnParams
    ffn_sp_q: FfnParams
    epsilon: float = 1e-5

    @classmethod
    def random(cls, rng, c_bev, c_sp, d_h, d_out, scale=0.3):
        return cls(
            ln_bev=LayerNormParams(rng.normal(1, 0.1, c_bev), rng.normal(0, 0.1, c_bev)),
            ln_sp=LayerNormParams(rng.normal(1, 0.1, c_sp), rng.normal(0, 0.1, c_sp)),
            attn_bev_q=AttentionParams.random(rng, c_bev, c_sp, d_h, scale),
            attn_sp_q=AttentionParams.random(rng, c_sp, c_bev, d_h, scale),
            ffn_bev_q=FfnParams.random(rng, d_h, d_out, scale=scale),
            ffn_sp_q=FfnParams.random(rng, d_h, d_out, scale=scale),
        )

    def swapped(self):
        """Parameter set with the two pathways exchanged."""
        return BvatParams(ln_bev=self.ln_sp, ln_sp=self.ln_bev,
                          attn_bev_q=self.attn_sp_q, attn_sp_q=self.attn_bev_q,
                          ffn_bev_q=self.ffn_sp_q, ffn_sp_q=self.ffn_bev_q,
                          epsilon=self.epsilon)


def _bvat_forward(f_bev, f_sp, p):
    if f_bev.shape[0] != f_sp.shape[0]:
        raise ShapeMismatch("both pathways must carry the same token count")
    b, cache_b = _ln_forward(f_bev, p.ln_bev.gain, p.ln_bev.bias, p.epsilon)
    s, cache_s = _ln_forward(f_sp, p.ln_sp.gain, p.ln_sp.bias, p.epsilon)
    o1, cache1 = _ca_forward(b, s, s, p.attn_bev_q)
    o2, cache2 = _ca_forward(s, b, b, p.attn_sp_q)
    y1, cachef1 = _ffn_forward(o1, p.ffn_bev_q)
    y2, cachef2 = _ffn_forward(o2, p.ffn_sp_q)
    return y1 + y2, (cache_b, cache_s, cache1, cache2, cachef1, cachef2)


def bvat_fuse(f_bev, f_sp, params: BvatParams):
    """Fuse BEV and spatial feature rows by bidirectional cross attention.

    Each pathway is layer-normalized, attends to the other, passes through
    its own FFN, and the two results are summed elementwise.
    """
    f_bev = np.asarray(f_bev, dtype=np.float64)
    f_sp = np.asarray(f_sp, dtype=np.float64)
    out, _ = _bvat_forward(f_bev, f_sp, params)
    return out


def bvat_fuse_grads(f_bev, f_sp, params: BvatParams, grad_out=None):
    """Gradients of sum(grad_out * output) w.r.t. both inputs and all params."""
    f_bev = np.asarray(f_bev, dtype=np.float64)
    f_sp = np.asarray(f_sp, dtype=np.float64)
    out, caches = _bvat_forward(f_bev, f_sp, params)
    cache_b, cache_s, cache1, cache2, cachef1, cachef2 = caches
    g = np.ones_like(out) if grad_out is None else np.asarray(grad_out, float)

    do1, gf1 = _ffn_backward(g, cachef1, params.ffn_bev_q)
    do2, gf2 = _ffn_backward(g, cachef2, params.ffn_sp_q)
    db1, ds_k1, ds_v1, ga1 = _ca_backward(do1, cache1, params.attn_bev_q)
    ds2, db_k2, db_v2, ga2 = _ca_backward(do2, cache2, params.attn_sp_q)
    db = db1 + db_k2 + db_v2
    ds = ds_k1 + ds_v1 + ds2
    d_fbev, dgain_b, dbias_b = _ln_backward(db, cache_b)
    d_fsp, dgain_s, dbias_s = _ln_backward(ds, cache_s)
    return {
        "f_bev": d_fbev, "f_sp": d_fsp,
        "ln_bev": {"gain": dgain_b, "bias": dbias_b},
        "ln_sp": {"gain": dgain_s, "bias": dbias_s},
        "attn_bev_q": ga1, "attn_sp_q": ga2,
        "ffn_bev_q": gf1, "ffn_sp_q": gf2,
    }


# ---------------------------------------------------------------------------
# multi-scale neighbor aggregation

@dataclass
class SfwaParams:
    weight_mlp: FfnParams  # 3*C_v -> 3 scale logits
    out_mlp: FfnParams     # shared row-wise C_v -> C_sp

    @classmethod
    def random(cls, rng, k, c_v, c_sp, hidden=16, scale=0.3):
        return cls(weight_mlp=FfnParams.random(rng, 3 * c_v, 3, hidden, scale),
                   out_mlp=FfnParams.random(rng, c_v, c_sp, hidden, scale))


def _sfwa_forward(blocks, p):
    if len(blocks) != 3:
        raise ShapeMismatch("expected exactly three scale blocks")
    k, c_v = blocks[0].shape
    for b in blocks:
        if b.shape != (k, c_v):
            raise ShapeMismatch("all scale blocks must share the same k x C_v shape")
    argmaxes = [b.argmax(axis=0) for b in blocks]
    pooled = [b.max(axis=0) for b in blocks]
    svec = np.concatenate(pooled)[None, :]
    logits, cache_w = _ffn_forward(svec, p.weight_mlp)
    weights = softmax(logits, axis=-1)[0]
    scaled = np.vstack([w * b for w, b in zip(weights, blocks)])
    rows, cache_o = _ffn_forward(scaled, p.out_mlp)
    argmax_out = rows.argmax(axis=0)
    out = rows.max(axis=0, keepdims=True)
    return out, weights, (blocks, argmaxes, cache_w, weights, cache_o,
                          argmax_out, rows.shape, k, c_v)


def sfwa_aggregate(blocks, params: SfwaParams):
    """Weighted abstraction of three k x C_v neighbor blocks into one row.

    Each block is max-pooled, the pooled vectors drive softmax scale weights,
    the weighted rows pass through the shared output MLP and are max-pooled
    into a single feature, so neighbor order inside a block cannot matter.
    Returns (1 x C_sp feature, 3 scale weights).
    """
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    out, weights, _ = _sfwa_forward(blocks, params)
    return out, weights


def sfwa_aggregate_grads(blocks, params: SfwaParams, grad_out=None):
    """Gradients of sum(grad_out * output) w.r.t. blocks and both MLPs."""
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    out, _, cache = _sfwa_forward(blocks, params)
    blocks, argmaxes, cache_w, weights, cache_o, argmax_out, rows_shape, k, c_v = cache
    g = np.ones_like(out) if grad_out is None else np.asarray(grad_out, float)

    drows = np.zeros(rows_shape)
    drows[argmax_out, np.arange(rows_shape[1])] = g[0]
    dscaled, g_out_mlp = _ffn_backward(drows, cache_o, params.out_mlp)
    dblocks = []
    dweights = np.zeros(3)
    for n in range(3):
        piece = dscaled[n * k:(n + 1) * k]
        dblocks.append(weights[n] * piece)
        dweights[n] = float((piece * blocks[n]).sum())
    dlogits = _softmax_vjp(weights, dweights)[None, :]
    dsvec, g_weight_mlp = _ffn_backward(dlogits, cache_w, params.weight_mlp)
    for n in range(3):
        ds = dsvec[0, n * c_v:(n + 1) * c_v]
        cols = np.arange(c_v)
        dblocks[n][argmaxes[n], cols] += ds
    return {"blocks": dblocks, "weight_mlp": g_weight_mlp, "out_mlp": g_out_mlp}


# ---------------------------------------------------------------------------
# neighbor gathering and objectives

def knn_gather(query, voxel_centers, voxel_features, k):
    """Features of the k nearest voxel centers, ascending by distance.

    When fewer than k voxels exist the nearest one is repeated to pad;
    the returned index array exposes the duplication. Returns (block, indices).
    """
    centers = np.asarray(voxel_centers, dtype=np.float64).reshape(-1, 3)
    feats = np.asarray(voxel_features, dtype=np.float64)
    if centers.shape[0] == 0:
        raise EmptyVoxelSet("no voxels to gather from")
    if feats.shape[0] != centers.shape[0]:
        raise ShapeMismatch("one feature row per voxel center required")
    d = np.linalg.norm(centers - np.asarray(query, float).reshape(3), axis=1)
    order = np.argsort(d, kind="stable")
    if order.size >= k:
        sel = order[:k]
    else:
        sel = np.concatenate([order, np.full(k - order.size, order[0])])
    return feats[sel], sel


def bce_loss(p, y):
    """Binary cross entropy with predictions clamped away from 0 and 1."""
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def bce_loss_grad(p, y):
    """d/dp of bce_loss; zero where the clamp is active."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return np.where(inside, (pc - y) / (pc * (1.0 - pc)), 0.0)


def smooth_l1(x, beta=1.0):
    """Huber-style loss: quadratic near zero, linear in the tails."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    return np.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)


def smooth_l1_grad(x, beta=1.0):
    x = np.asarray(x, dtype=np.float64)
    return np.clip(x / beta, -1.0, 1.0)


def confidence_labels(proposals, gt_points, tau=0.5):
    """True where a proposal has a ground-truth point within tau meters."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    props = np.asarray(proposals, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if props.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    if gt.shape[0] == 0:
        return np.zeros(props.shape[0], dtype=bool)
    d, _ = cKDTree(gt).query(props)
    return d <= tau
