"""Video latents to tokens and back, positional and conditioning embeddings.

Latent batches are laid out (B, F, H, W, C). Token grids are (B, n_f, t, d)
with ``t = n_h * n_w`` tokens per temporal index, row-major over (n_h, n_w).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, add, getitem, get_dtype, linear, silu


@dataclass
class TokenGrid:
    values: Tensor  # (B, n_f, n_h * n_w, d)
    n_f: int
    n_h: int
    n_w: int
    mode: str = "uniform"
    stride: int = 1

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def num_tokens(self) -> int:
        return self.n_f * self.n_h * self.n_w


@dataclass
class Conditioning:
    timestep: np.ndarray  # (B,) integer timesteps
    class_label: np.ndarray | None = None  # (B,) integer labels

    def validate(self, num_steps: int | None = None, num_classes: int | None = None) -> None:
        t = np.asarray(self.timestep)
        if num_steps is not None and (t.min() < 1 or t.max() > num_steps):
            raise ValueError(f"timestep outside [1, {num_steps}]")
        if self.class_label is None:
            return
        if not num_classes:
            raise ValueError("class label given to an unconditional model")
        y = np.asarray(self.class_label)
        if y.min() < 0 or y.max() >= num_classes:
            raise ValueError(f"class label outside [0, {num_classes})")


# ---------------------------------------------------------------- patching


def _check_latent(shape, h, w, s):
    if len(shape) != 5:
        raise ValueError(f"expected a (B, F, H, W, C) latent batch, got shape {shape}")
    _, f, hh, ww, _ = shape
    if hh % h or ww % w:
        raise ValueError(f"latent {hh}x{ww} not divisible by patch {h}x{w}")
    if f % s:
        raise ValueError(f"{f} frames not divisible by temporal stride {s}")


def patchify(v, h: int, w: int, s: int = 1) -> Tensor:
    """(B, F, H, W, C) -> (B, F/s, (H/h)(W/w), s*h*w*C), tube contents flattened (s, h, w, C)."""
    v = as_tensor(v)
    _check_latent(v.shape, h, w, s)
    b, f, hh, ww, c = v.shape
    nf, nh, nw = f // s, hh // h, ww // w
    x = v.reshape(b, nf, s, nh, h, nw, w, c)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(b, nf, nh * nw, s * h * w * c)


def unpatchify(tokens, n_h: int, n_w: int, h: int, w: int, channels: int, s: int = 1) -> Tensor:
    """Inverse of :func:`patchify`."""
    tokens = as_tensor(tokens)
    b, nf, t, d = tokens.shape
    if t != n_h * n_w or d != s * h * w * channels:
        raise ValueError(f"token grid {tokens.shape} does not match {n_h}x{n_w} patches of {s}x{h}x{w}x{channels}")
    x = tokens.reshape(b, nf, n_h, n_w, s, h, w, channels)
    x = x.transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return x.reshape(b, nf * s, n_h * h, n_w * w, channels)


def uniform_patch_embed(v, h: int, w: int, weight, bias=None) -> TokenGrid:
    """Per-frame ViT patch embedding: one token per h x w x C patch of each frame."""
    v = as_tensor(v)
    _check_latent(v.shape, h, w, 1)
    tokens = linear(patchify(v, h, w, 1), weight, bias)
    _, f, hh, ww, _ = v.shape
    return TokenGrid(tokens, f, hh // h, ww // w, "uniform", 1)


def compression_patch_embed(v, h: int, w: int, s: int, weight, bias=None) -> TokenGrid:
    """Tube embedding: one token per s x h x w x C spatio-temporal tube."""
    v = as_tensor(v)
    _check_latent(v.shape, h, w, s)
    tokens = linear(patchify(v, h, w, s), weight, bias)
    _, f, hh, ww, _ = v.shape
    return TokenGrid(tokens, f // s, hh // h, ww // w, "compression", s)


def token_decode(
    tokens,
    target_shape: tuple[int, int, int, int],
    patch: tuple[int, int],
    weight,
    bias=None,
    stride: int = 1,
    upsample_weight=None,
    upsample_bias=None,
) -> tuple[Tensor, Tensor]:
    """Linear decode + reshape into (noise prediction, raw variance).

    ``target_shape`` is (F, H, W, C). Each token maps to h*w*2C values. With
    ``stride > 1`` a temporal transposed convolution (kernel = stride =
    ``stride``) upsamples n_f token frames to F output frames;
    ``upsample_weight`` is (s, 2C, 2C).
    """
    tokens = as_tensor(tokens)
    f, hh, ww, c = target_shape
    h, w = patch
    b, nf, t, _ = tokens.shape
    if hh % h or ww % w or t != (hh // h) * (ww // w) or nf * stride != f:
        raise ValueError(f"token grid {tokens.shape} incompatible with target {target_shape}, stride {stride}")
    out = linear(tokens, weight, bias)
    if out.shape[-1] != h * w * 2 * c:
        raise ValueError(f"decoder emits {out.shape[-1]} values per token, need {h * w * 2 * c}")
    video = unpatchify(out, hh // h, ww // w, h, w, 2 * c)  # (B, n_f, H, W, 2C)
    if stride > 1:
        if upsample_weight is None:
            raise ValueError("compression mode requires the temporal upsampling stage")
        uw = as_tensor(upsample_weight)
        if uw.shape != (stride, 2 * c, 2 * c):
            raise ValueError(f"upsample weight must be {(stride, 2 * c, 2 * c)}, got {uw.shape}")
        kernel = uw.transpose(1, 0, 2).reshape(2 * c, stride * 2 * c)
        up = linear(video, kernel)  # (B, n_f, H, W, s*2C)
        up = up.reshape(b, nf, hh, ww, stride, 2 * c).transpose(0, 1, 4, 2, 3, 5)
        video = up.reshape(b, f, hh, ww, 2 * c)
        if upsample_bias is not None:
            video = add(video, upsample_bias)
    return getitem(video, (Ellipsis, slice(0, c))), getitem(video, (Ellipsis, slice(c, 2 * c)))


# ---------------------------------------------------------------- positions


def sincos_1d(positions, dim: int) -> np.ndarray:
    """[sin(p w_0) .. sin(p w_{k-1}), cos(p w_0) ..] with k = ceil(dim / 2)."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1)
    n_sin = (dim + 1) // 2
    n_cos = dim // 2
    omega = 1.0 / 10000 ** (np.arange(n_sin, dtype=np.float64) / max(n_sin, 1))
    ang = pos[:, None] * omega[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang[:, :n_cos])], axis=1)


def sincos_2d(n_h: int, n_w: int, dim: int) -> np.ndarray:
    """Table (n_h * n_w, dim): first half encodes the row, second the column."""
    rows, cols = np.meshgrid(np.arange(n_h), np.arange(n_w), indexing="ij")
    half = dim // 2
    return np.concatenate([sincos_1d(rows.reshape(-1), half), sincos_1d(cols.reshape(-1), dim - half)], axis=1)


@dataclass
class PositionalEmbedding:
    table: np.ndarray  # (n_f * n_h * n_w, d) additive part
    spatial: np.ndarray  # (n_h * n_w, d) frame-independent table used for appended image frames
    rope_positions: np.ndarray | None = None  # temporal indices consumed inside temporal attention


def positional_embedding(n_f: int, n_h: int, n_w: int, d: int, temporal_mode: str = "absolute") -> PositionalEmbedding:
    if d % 4:
        raise ValueError(f"embedding dim {d} must be divisible by 4")
    t = n_h * n_w
    if temporal_mode == "absolute":
        spatial = sincos_2d(n_h, n_w, d // 2)
        temporal = sincos_1d(np.arange(n_f), d - d // 2)
        table = np.concatenate(
            [np.broadcast_to(spatial[None], (n_f, t, d // 2)), np.broadcast_to(temporal[:, None], (n_f, t, d - d // 2))],
            axis=-1,
        )
        spatial_only = np.concatenate([spatial, np.zeros((t, d - d // 2))], axis=1)
        return PositionalEmbedding(table.reshape(n_f * t, d), spatial_only)
    if temporal_mode == "rope":
        spatial = sincos_2d(n_h, n_w, d)
        return PositionalEmbedding(np.tile(spatial, (n_f, 1)), spatial, np.arange(n_f))
    raise ValueError(f"unknown temporal positional mode {temporal_mode!r}")


# ---------------------------------------------------------------- conditioning


def timestep_sinusoid(t, dim: int = 256, max_period: float = 10000.0) -> np.ndarray:
    """(B, dim) features, sines first then cosines."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / half)
    ang = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb.astype(get_dtype())


def timestep_class_embed(params: dict, cond: Conditioning, num_classes: int | None = None, freq_dim: int = 256) -> Tensor:
    """Conditioning vector: MLP(sinusoid(t)) plus a class-table row (nothing when unconditional)."""
    if cond.class_label is not None:
        if not num_classes:
            raise ValueError("class label given to an unconditional model")
        y = np.asarray(cond.class_label, dtype=np.int64).reshape(-1)
        if y.min() < 0 or y.max() >= num_classes:
            raise ValueError(f"class label outside [0, {num_classes})")
    feats = timestep_sinusoid(cond.timestep, freq_dim)
    hidden = silu(linear(feats, params["t_embed.fc1.weight"], params["t_embed.fc1.bias"]))
    c = linear(hidden, params["t_embed.fc2.weight"], params["t_embed.fc2.bias"])
    if cond.class_label is not None:
        c = add(c, getitem(params["y_embed.table"], y))
    return c

