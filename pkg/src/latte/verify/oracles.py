"""Brute-force reference implementations.

Everything here loops over sequences, heads and tokens with plain numpy and
``math``; nothing is shared with the autograd path except parameter names.
"""

from __future__ import annotations

import math

import numpy as np


def layer_norm(x: np.ndarray, eps: float) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    flat_in, flat_out = x.reshape(-1, x.shape[-1]), out.reshape(-1, x.shape[-1])
    for i, row in enumerate(flat_in):
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        flat_out[i] = [(v - mu) / math.sqrt(var + eps) for v in row]
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    return np.vectorize(lambda v: 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0))))(x)


def silu(x: np.ndarray) -> np.ndarray:
    return np.vectorize(lambda v: v / (1.0 + math.exp(-v)))(x)


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    out = np.einsum("...i,io->...o", x, w)
    return out if b is None else out + b


def rotate(vec: np.ndarray, pos: float, base: float = 10000.0) -> np.ndarray:
    """Rotary embedding of one head vector: pair (2i, 2i+1) turns by pos * base^(-2i/d)."""
    d = vec.shape[0]
    out = np.empty_like(vec)
    for i in range(0, d, 2):
        ang = pos * base ** (-i / d)
        c, s = math.cos(ang), math.sin(ang)
        out[i] = vec[i] * c - vec[i + 1] * s
        out[i + 1] = vec[i] * s + vec[i + 1] * c
    return out


def attention(q, k, v, heads: int, q_pos=None, k_pos=None, key_mask=None) -> np.ndarray:
    """One sequence: q (S_q, D), k/v (S_k, D). Explicit per-head, per-query loops."""
    s_q, d = q.shape
    s_k = k.shape[0]
    dh = d // heads
    out = np.zeros((s_q, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(s_q):
            qi = q[i, sl] if q_pos is None else rotate(q[i, sl], q_pos[i])
            scores = []
            for j in range(s_k):
                if key_mask is not None and not key_mask[j]:
                    scores.append(None)
                    continue
                kj = k[j, sl] if k_pos is None else rotate(k[j, sl], k_pos[j])
                scores.append(float(np.dot(qi, kj)) / math.sqrt(dh))
            top = max(s for s in scores if s is not None)
            w = [0.0 if s is None else math.exp(s - top) for s in scores]
            total = sum(w)
            for j in range(s_k):
                out[i, sl] += (w[j] / total) * v[j, sl]
    return out


def mha(x, kv, p: dict, prefix: str, heads: int, q_pos=None, k_pos=None, key_mask=None) -> np.ndarray:
    def proj(a, n):
        return dense(a, p[f"{prefix}.{n}.weight"], p[f"{prefix}.{n}.bias"])

    return proj(attention(proj(x, "q"), proj(kv, "k"), proj(kv, "v"), heads, q_pos, k_pos, key_mask), "o")


def mlp(x, p: dict, prefix: str) -> np.ndarray:
    h = gelu(dense(x, p[f"{prefix}.mlp.fc1.weight"], p[f"{prefix}.mlp.fc1.bias"]))
    return dense(h, p[f"{prefix}.mlp.fc2.weight"], p[f"{prefix}.mlp.fc2.bias"])


class _Setup:
    def __init__(self, p, prefix, c, cond_mode, eps, rope, n_valid, n_frames):
        self.p, self.prefix, self.cond_mode, self.eps, self.rope = p, prefix, cond_mode, eps, rope
        self.n_valid, self.n_frames = n_valid, n_frames
        d = c.shape[-1]
        if cond_mode == "s_adaln":
            m = dense(silu(c), p[f"{prefix}.adaLN.weight"], p[f"{prefix}.adaLN.bias"])
            self.mods = [m[i * d : (i + 1) * d] for i in range(6)]
            self.token = None
        else:
            self.mods = None
            self.token = self.affine(c[None], "norm1")[0]

    def affine(self, x, name):
        return layer_norm(x, self.eps) * self.p[f"{self.prefix}.{name}.weight"] + self.p[f"{self.prefix}.{name}.bias"]

    def pre(self, x, which: int):
        if self.mods is None:
            return self.affine(x, f"norm{which + 1}")
        shift, scale = self.mods[3 * which], self.mods[3 * which + 1]
        return layer_norm(x, self.eps) * (1.0 + scale) + shift

    def gate(self, which: int):
        return 1.0 if self.mods is None else self.mods[3 * which + 2]

    def kv(self, seq):
        return seq if self.token is None else np.concatenate([self.token[None], seq], axis=0)

    def temporal_pos(self, n):
        if not self.rope:
            return None, None
        q = list(range(n))
        return q, ([0] + q if self.token is not None else q)

    def temporal_mask(self, n):
        if self.n_valid == self.n_frames:
            return None
        m = [f < self.n_valid for f in range(n)]
        return ([True] + m) if self.token is not None else m


def _spatial_attn(h, s: _Setup, prefix, heads):
    out = np.zeros_like(h)
    for f in range(h.shape[0]):
        out[f] = mha(h[f], s.kv(h[f]), s.p, prefix, heads)
    return out


def _temporal_attn(h, s: _Setup, prefix, heads):
    out = np.zeros_like(h)
    nf = h.shape[0]
    qp, kp = s.temporal_pos(nf)
    mask = s.temporal_mask(nf)
    for loc in range(h.shape[1]):
        out[:, loc] = mha(h[:, loc], s.kv(h[:, loc]), s.p, prefix, heads, qp, kp, mask)
    return out


def _split_attn(h, s: _Setup, prefix, heads):
    """Shared projections; lower half of the channels attends per frame, upper half per location."""
    p = s.p
    d = h.shape[-1]
    half = d // 2
    nf, t = h.shape[:2]

    def proj(a, n):
        return dense(a, p[f"{prefix}.{n}.weight"], p[f"{prefix}.{n}.bias"])

    q, k, v = proj(h, "q"), proj(h, "k"), proj(h, "v")
    tok_k = tok_v = None
    if s.token is not None:
        tok_k, tok_v = proj(s.token, "k"), proj(s.token, "v")
    mixed = np.zeros((nf, t, d))
    for f in range(nf):
        ks, vs = k[f, :, :half], v[f, :, :half]
        if tok_k is not None:
            ks, vs = np.concatenate([tok_k[None, :half], ks]), np.concatenate([tok_v[None, :half], vs])
        mixed[f, :, :half] = attention(q[f, :, :half], ks, vs, heads // 2)
    qp, kp = s.temporal_pos(nf)
    mask = s.temporal_mask(nf)
    for loc in range(t):
        kt, vt = k[:, loc, half:], v[:, loc, half:]
        if tok_k is not None:
            kt, vt = np.concatenate([tok_k[None, half:], kt]), np.concatenate([tok_v[None, half:], vt])
        col = attention(q[:, loc, half:], kt, vt, heads // 2, qp, kp, mask)
        for f in range(nf):
            mixed[f, loc, half:] = col[f] if f < s.n_valid else 0.0
    return proj(mixed, "o")


def block(
    kind: str,
    params: dict,
    prefix: str,
    z: np.ndarray,
    c: np.ndarray,
    heads: int,
    cond_mode: str = "s_adaln",
    rope: bool = False,
    n_valid: int | None = None,
    eps: float = 1e-6,
) -> np.ndarray:
    """Reference forward of one block for a single sample: z (n_f, t, D), c (D,)."""
    p = {k: np.asarray(v, dtype=np.float64) for k, v in params.items() if k.startswith(prefix + ".")}
    z = np.asarray(z, dtype=np.float64)
    nf = z.shape[0]
    nv = nf if n_valid is None else n_valid
    s = _Setup(p, prefix, np.asarray(c, dtype=np.float64), cond_mode, eps, rope, nv, nf)
    h = s.pre(z, 0)
    if kind == "spatial":
        a = _spatial_attn(h, s, f"{prefix}.attn", heads)
    elif kind == "temporal":
        a = _temporal_attn(h, s, f"{prefix}.attn", heads)
    elif kind == "seq":
        sp = _spatial_attn(h, s, f"{prefix}.attn_s", heads)
        tp = _temporal_attn(sp, s, f"{prefix}.attn_t", heads)
        tp[nv:] = 0.0
        a = sp + tp
    elif kind == "split":
        a = _split_attn(h, s, f"{prefix}.attn", heads)
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    x = z + s.gate(0) * a
    out = x + s.gate(1) * mlp(s.pre(x, 1), p, prefix)
    if kind == "temporal" and nv < nf:
        out[nv:] = z[nv:]
    return out


def sinusoid(t: float, dim: int, max_period: float = 10000.0) -> np.ndarray:
    half = dim // 2
    out = np.zeros(dim)
    for i in range(half):
        f = math.exp(-math.log(max_period) * i / half)
        out[i] = math.sin(t * f)
        out[half + i] = math.cos(t * f)
    return out


def conditioning(params: dict, t: float, y: int | None, freq_dim: int) -> np.ndarray:
    p = params
    h = silu(dense(sinusoid(t, freq_dim), p["t_embed.fc1.weight"], p["t_embed.fc1.bias"]))
    c = dense(h, p["t_embed.fc2.weight"], p["t_embed.fc2.bias"])
    return c if y is None else c + p["y_embed.table"][y]
