"""Multi-head attention and rotary position embedding.

One kernel serves both spatial and temporal attention: callers arrange the
axis to attend over as the second-to-last one and keep everything else as
leading (batch-like) dims.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, concat, linear, matmul, mul, add, softmax, get_dtype


def rope_tables(positions, head_dim: int, base: float = 10000.0) -> tuple[np.ndarray, np.ndarray]:
    """Cos/sin tables of shape (len(positions), head_dim) for interleaved pairs."""
    if head_dim % 2:
        raise ValueError(f"rotary embedding needs an even head dim, got {head_dim}")
    pos = np.asarray(positions, dtype=np.float64)
    inv_freq = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    angles = np.repeat(pos[:, None] * inv_freq[None, :], 2, axis=1)
    dt = get_dtype()
    return np.cos(angles).astype(dt), np.sin(angles).astype(dt)


def _rotate_pairs_matrix(head_dim: int) -> np.ndarray:
    # maps (x0, x1) -> (-x1, x0) for each interleaved pair
    r = np.zeros((head_dim, head_dim), dtype=get_dtype())
    for i in range(0, head_dim, 2):
        r[i + 1, i] = -1.0
        r[i, i + 1] = 1.0
    return r


def apply_rope(x, positions) -> Tensor:
    """Rotate the last axis of ``x`` (..., S, head_dim) by per-position angles."""
    x = as_tensor(x)
    cos, sin = rope_tables(positions, x.shape[-1])
    if cos.shape[0] != x.shape[-2]:
        raise ValueError(f"{cos.shape[0]} rope positions for a sequence of {x.shape[-2]}")
    rotated = matmul(x, _rotate_pairs_matrix(x.shape[-1]))
    return add(mul(x, cos), mul(rotated, sin))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, s, d = x.shape
    nd = len(lead)
    x = x.reshape(tuple(lead) + (s, heads, d // heads))
    return x.transpose(tuple(range(nd)) + (nd + 1, nd, nd + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, s, dh = x.shape
    nd = len(lead)
    x = x.transpose(tuple(range(nd)) + (nd + 1, nd, nd + 2))
    return x.reshape(tuple(lead) + (s, h * dh))


def attend(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int,
    q_positions=None,
    k_positions=None,
    key_mask: np.ndarray | None = None,
    record: list | None = None,
) -> Tensor:
    """Scaled dot-product attention over already projected q, k, v.

    Shapes are (..., S, D) with D split into ``heads`` equal heads. When
    positions are given, queries and keys are rotated before the dot product.
    ``key_mask`` is boolean (..., S_k); False keys receive zero weight.
    """
    if q.shape[-1] % heads:
        raise ValueError(f"model dim {q.shape[-1]} not divisible by {heads} heads")
    if q.shape[:-2] != k.shape[:-2] or k.shape != v.shape:
        raise ValueError(f"mismatched batch dims: q {q.shape}, k {k.shape}, v {v.shape}")
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    if q_positions is not None:
        qh = apply_rope(qh, q_positions)
    if k_positions is not None:
        kh = apply_rope(kh, k_positions)
    scale = 1.0 / np.sqrt(q.shape[-1] // heads)
    scores = matmul(qh, kh.transpose(tuple(range(kh.ndim - 2)) + (kh.ndim - 1, kh.ndim - 2))) * scale
    mask = None
    if key_mask is not None:
        mask = np.asarray(key_mask, dtype=bool)
        mask = np.expand_dims(mask, (-3, -2))  # over heads and queries
    weights = softmax(scores, axis=-1, mask=mask)
    if record is not None:
        record.append(weights.data)
    return _merge_heads(matmul(weights, vh))


def multi_head_attention(
    q_src,
    kv_src,
    heads: int,
    params: dict,
    prefix: str,
    rope_positions=None,
    kv_rope_positions=None,
    key_mask: np.ndarray | None = None,
    record: list | None = None,
) -> Tensor:
    """Project, attend and re-project.

    ``params`` holds ``{prefix}.{q,k,v,o}.{weight,bias}`` with (in, out)
    weights. ``rope_positions`` rotates queries; keys use
    ``kv_rope_positions`` or, if omitted, the same positions.
    """
    q_src, kv_src = as_tensor(q_src), as_tensor(kv_src)
    if q_src.shape[-1] != kv_src.shape[-1]:
        raise ValueError("q_src and kv_src must share the model dim")
    if q_src.shape[:-2] != kv_src.shape[:-2]:
        raise ValueError(f"mismatched batch dims {q_src.shape[:-2]} vs {kv_src.shape[:-2]}")
    if q_src.shape[-1] % heads:
        raise ValueError(f"model dim {q_src.shape[-1]} not divisible by {heads} heads")

    def proj(x, name):
        return linear(x, params[f"{prefix}.{name}.weight"], params[f"{prefix}.{name}.bias"])

    q, k, v = proj(q_src, "q"), proj(kv_src, "k"), proj(kv_src, "v")
    if rope_positions is not None and kv_rope_positions is None:
        kv_rope_positions = rope_positions
    out = attend(q, k, v, heads, rope_positions, kv_rope_positions, key_mask, record)
    return proj(out, "o")


def concat_prefix(prefix_token: Tensor, seq: Tensor) -> Tensor:
    """Prepend one token (shape broadcastable to seq[..., :1, :]) to every sequence."""
    prefix_token = as_tensor(prefix_token)
    target = seq.shape[:-2] + (1, seq.shape[-1])
    if prefix_token.shape != target:
        prefix_token = add(prefix_token, np.zeros(target, dtype=seq.data.dtype))
    return concat([prefix_token, seq], axis=-2)
