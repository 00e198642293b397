"""Spatio-temporal Transformer denoiser and its four block arrangements.

Variant 1 interleaves spatial and temporal blocks, variant 2 runs all spatial
blocks then all temporal ones, variant 3 factorises the attention sublayer of
every block into spatial-then-temporal attention, and variant 4 splits the
heads of one attention sublayer between the two axes. Variant 0 is the
per-frame image model (spatial blocks only) used as a pretraining source.

Tokens travel as (B, n_f, t, D). Temporal attention transposes to
(B, t, n_f, D) so the frame axis is the one attended over.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import truncnorm

from .attention import attend, concat_prefix, multi_head_attention
from .embedding import (
    Conditioning,
    compression_patch_embed,
    positional_embedding,
    sincos_2d,
    timestep_class_embed,
    token_decode,
    uniform_patch_embed,
)
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    gelu,
    get_dtype,
    getitem,
    layer_norm,
    linear,
    mul,
    silu,
)

COND_MODES = ("s_adaln", "all_tokens")
TEMPORAL_POS = ("absolute", "rope")
PATCH_MODES = ("uniform", "compression")


@dataclass(frozen=True)
class ModelConfig:
    variant: int = 1
    layers: int = 4
    hidden: int = 64
    heads: int = 4
    patch: tuple[int, int] = (2, 2)
    stride: int = 1
    cond_mode: str = "s_adaln"
    temporal_pos: str = "absolute"
    patch_mode: str = "uniform"
    frames: int = 4
    latent: tuple[int, int, int] = (16, 16, 4)
    num_classes: int | None = None
    mlp_ratio: int = 4
    freq_dim: int = 256
    # variants 3/4 get the fewest blocks whose parameters reach the variant-1 budget
    equalize_depth: bool = True
    norm_eps: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "patch", tuple(self.patch))
        object.__setattr__(self, "latent", tuple(self.latent))
        self.validate()

    def validate(self) -> None:
        d, h = self.hidden, self.heads
        if self.variant not in (0, 1, 2, 3, 4):
            raise ValueError(f"unknown variant {self.variant}")
        if self.layers < 1 or d < 4 or h < 1:
            raise ValueError("layers, hidden and heads must be positive (hidden >= 4)")
        if d % h:
            raise ValueError(f"hidden {d} not divisible by {h} heads")
        if d % 4:
            raise ValueError(f"hidden {d} must be divisible by 4 for the positional split")
        if self.variant in (1, 2) and self.layers % 2:
            raise ValueError("variants 1 and 2 need an even number of layers")
        if self.variant == 4 and h % 2:
            raise ValueError("variant 4 splits heads in half and needs an even head count")
        if self.cond_mode not in COND_MODES:
            raise ValueError(f"cond_mode must be one of {COND_MODES}")
        if self.temporal_pos not in TEMPORAL_POS:
            raise ValueError(f"temporal_pos must be one of {TEMPORAL_POS}")
        if self.patch_mode not in PATCH_MODES:
            raise ValueError(f"patch_mode must be one of {PATCH_MODES}")
        if self.temporal_pos == "rope" and (d // h) % 2:
            raise ValueError("rotary temporal embedding needs an even head dim")
        ph, pw = self.patch
        lh, lw, lc = self.latent
        if min(ph, pw, lh, lw, lc, self.frames, self.stride) < 1:
            raise ValueError("patch, latent, frames and stride must be positive")
        if lh % ph or lw % pw:
            raise ValueError(f"latent {lh}x{lw} not divisible by patch {ph}x{pw}")
        if self.patch_mode == "uniform" and self.stride != 1:
            raise ValueError("uniform patch embedding uses stride 1")
        if self.frames % self.stride:
            raise ValueError(f"{self.frames} frames not divisible by stride {self.stride}")
        if self.num_classes is not None and self.num_classes < 1:
            raise ValueError("num_classes must be positive or None")

    # token grid
    @property
    def n_f(self) -> int:
        return self.frames // self.stride

    @property
    def n_h(self) -> int:
        return self.latent[0] // self.patch[0]

    @property
    def n_w(self) -> int:
        return self.latent[1] // self.patch[1]

    @property
    def patch_dim(self) -> int:
        return self.stride * self.patch[0] * self.patch[1] * self.latent[2]

    def block_layout(self) -> list[tuple[str, str]]:
        """(kind, parameter prefix) for every block in execution order."""
        if self.variant == 0:
            return [("spatial", f"spatial.{i}") for i in range(self.layers)]
        if self.variant in (1, 2):
            half = self.layers // 2
            if self.variant == 1:
                out = []
                for i in range(half):
                    out += [("spatial", f"spatial.{i}"), ("temporal", f"temporal.{i}")]
                return out
            return [("spatial", f"spatial.{i}") for i in range(half)] + [
                ("temporal", f"temporal.{i}") for i in range(half)
            ]
        kind = "seq" if self.variant == 3 else "split"
        return [(kind, f"blocks.{i}") for i in range(self.depth)]

    @property
    def depth(self) -> int:
        if self.variant in (0, 1, 2) or not self.equalize_depth:
            return self.layers
        kind = "seq" if self.variant == 3 else "split"
        budget = self.layers * _count(block_param_shapes("spatial", self))
        return math.ceil(budget / _count(block_param_shapes(kind, self)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch"] = list(self.patch)
        d["latent"] = list(self.latent)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- parameter layout


def _count(shapes: dict) -> int:
    return sum(int(np.prod(s)) for s in shapes.values())


def _attn_shapes(prefix: str, d: int) -> dict:
    out = {}
    for name in ("q", "k", "v", "o"):
        out[f"{prefix}.{name}.weight"] = (d, d)
        out[f"{prefix}.{name}.bias"] = (d,)
    return out


def block_param_shapes(kind: str, cfg: ModelConfig) -> dict:
    d, r = cfg.hidden, cfg.mlp_ratio
    shapes = {}
    if kind == "seq":
        shapes.update(_attn_shapes("attn_s", d))
        shapes.update(_attn_shapes("attn_t", d))
    else:
        shapes.update(_attn_shapes("attn", d))
    shapes.update(
        {"mlp.fc1.weight": (d, r * d), "mlp.fc1.bias": (r * d,), "mlp.fc2.weight": (r * d, d), "mlp.fc2.bias": (d,)}
    )
    if cfg.cond_mode == "s_adaln":
        shapes.update({"adaLN.weight": (d, 6 * d), "adaLN.bias": (6 * d,)})
    else:
        shapes.update({"norm1.weight": (d,), "norm1.bias": (d,), "norm2.weight": (d,), "norm2.bias": (d,)})
    return shapes


def param_shapes(cfg: ModelConfig) -> dict:
    d = cfg.hidden
    ph, pw = cfg.patch
    c = cfg.latent[2]
    shapes = {
        "x_embed.weight": (cfg.patch_dim, d),
        "x_embed.bias": (d,),
        "t_embed.fc1.weight": (cfg.freq_dim, d),
        "t_embed.fc1.bias": (d,),
        "t_embed.fc2.weight": (d, d),
        "t_embed.fc2.bias": (d,),
    }
    if cfg.num_classes:
        shapes["y_embed.table"] = (cfg.num_classes, d)
    for kind, prefix in cfg.block_layout():
        for name, shape in block_param_shapes(kind, cfg).items():
            shapes[f"{prefix}.{name}"] = shape
    if cfg.cond_mode == "s_adaln":
        shapes["final.adaLN.weight"] = (d, 2 * d)
        shapes["final.adaLN.bias"] = (2 * d,)
    else:
        shapes["final.norm.weight"] = (d,)
        shapes["final.norm.bias"] = (d,)
    shapes["final.linear.weight"] = (d, ph * pw * 2 * c)
    shapes["final.linear.bias"] = (ph * pw * 2 * c,)
    if cfg.patch_mode == "compression":
        shapes["final.upsample.weight"] = (cfg.stride, 2 * c, 2 * c)
        shapes["final.upsample.bias"] = (2 * c,)
    return shapes


def _is_gate(name: str) -> bool:
    return "adaLN" in name or name.startswith("final.linear")


def _init_array(name: str, shape, rng: np.random.Generator, zero_gates: bool) -> np.ndarray:
    if zero_gates and _is_gate(name):
        return np.zeros(shape)
    if name.startswith("final.upsample.weight"):
        # every tap is the identity: the transposed conv starts as frame replication
        s, c_in, _ = shape
        return np.broadcast_to(np.eye(c_in), (s, c_in, c_in)).copy()
    if name.endswith(".bias"):
        return np.zeros(shape)
    if ("norm" in name) and name.endswith(".weight"):
        return np.ones(shape)
    return truncnorm.rvs(-2.0, 2.0, scale=0.02, size=shape, random_state=rng)


def init_params(cfg: ModelConfig, seed: int = 0, zero_gates: bool = True) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    return {
        name: Tensor(_init_array(name, shape, rng, zero_gates), requires_grad=True, name=name)
        for name, shape in param_shapes(cfg).items()
    }


def default_buffers(cfg: ModelConfig) -> dict[str, np.ndarray]:
    if cfg.variant == 0:
        spatial = sincos_2d(cfg.n_h, cfg.n_w, cfg.hidden)
        return {"pos_embed": np.tile(spatial, (cfg.n_f, 1)), "pos_spatial": spatial}
    pe = positional_embedding(cfg.n_f, cfg.n_h, cfg.n_w, cfg.hidden, cfg.temporal_pos)
    return {"pos_embed": pe.table, "pos_spatial": pe.spatial}


# ---------------------------------------------------------------- forward pieces


@dataclass
class _Context:
    c: Tensor  # (B, D)
    silu_c: Tensor | None
    n_valid: int  # frames taking part in temporal modelling
    n_frames: int
    rope: bool
    record: dict | None = None
    cond_cache: dict = field(default_factory=dict)

    @property
    def key_mask(self) -> np.ndarray | None:
        if self.n_valid == self.n_frames:
            return None
        return np.arange(self.n_frames) < self.n_valid


class LatteModel:
    """Parameters, fixed positional buffers and the denoiser forward pass."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None, buffers=None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self.buffers = buffers if buffers is not None else default_buffers(config)
        expected = param_shapes(config)
        if set(expected) != set(self.params):
            missing, extra = set(expected) - set(self.params), set(self.params) - set(expected)
            raise ValueError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in expected.items():
            if self.params[name].shape != tuple(shape):
                raise ValueError(f"{name}: shape {self.params[name].shape} != {tuple(shape)}")

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    # -- conditioning helpers

    def _mods(self, prefix: str, ctx: _Context, n: int) -> list[Tensor]:
        d = self.config.hidden
        m = linear(ctx.silu_c, self.params[f"{prefix}.weight"], self.params[f"{prefix}.bias"])
        m = m.reshape(m.shape[0], 1, 1, n * d)
        return [getitem(m, (Ellipsis, slice(i * d, (i + 1) * d))) for i in range(n)]

    def _affine_norm(self, x, prefix: str) -> Tensor:
        h = layer_norm(x, self.config.norm_eps)
        return add(mul(h, self.params[f"{prefix}.weight"]), self.params[f"{prefix}.bias"])

    def _cond_token(self, ctx: _Context, norm_prefix: str) -> Tensor:
        """Normalised conditioning token, (B, 1, 1, D); all_tokens mode only."""
        key = norm_prefix
        if key not in ctx.cond_cache:
            c = ctx.c.reshape(ctx.c.shape[0], 1, 1, ctx.c.shape[1])
            ctx.cond_cache[key] = self._affine_norm(c, norm_prefix)
        return ctx.cond_cache[key]

    # -- attention over one axis

    def _rec(self, ctx, prefix):
        if ctx.record is None:
            return None
        return ctx.record.setdefault(prefix, [])

    def _spatial_attn(self, h, prefix, ctx, cond, heads=None) -> Tensor:
        kv = h if cond is None else concat_prefix(cond, h)
        return multi_head_attention(h, kv, heads or self.config.heads, self.params, prefix, record=self._rec(ctx, prefix))

    def _temporal_attn(self, h, prefix, ctx, cond) -> Tensor:
        """Attention across frames for (B, n_f, t, D) input; returns the same layout."""
        ht = h.transpose(0, 2, 1, 3)
        nf = ht.shape[-2]
        mask = ctx.key_mask
        kv = ht
        q_pos = k_pos = np.arange(nf) if ctx.rope else None
        if cond is not None:
            kv = concat_prefix(cond, ht)
            if mask is not None:
                mask = np.concatenate([[True], mask])
            if ctx.rope:
                # the conditioning token sits at relative position 0
                k_pos = np.concatenate([[0], np.arange(nf)])
        out = multi_head_attention(
            ht, kv, self.config.heads, self.params, prefix, q_pos, k_pos, mask, self._rec(ctx, prefix)
        )
        return out.transpose(0, 2, 1, 3)

    def _keep_appended(self, new: Tensor, old: Tensor, ctx: _Context) -> Tensor:
        """Frames past ``n_valid`` skip temporal modelling: take them from ``old``."""
        if ctx.n_valid == ctx.n_frames:
            return new
        head = getitem(new, (slice(None), slice(0, ctx.n_valid)))
        tail = getitem(old, (slice(None), slice(ctx.n_valid, None)))
        return concat([head, tail], axis=1)

    def _frame_gate(self, ctx: _Context) -> np.ndarray | None:
        if ctx.n_valid == ctx.n_frames:
            return None
        g = (np.arange(ctx.n_frames) < ctx.n_valid).astype(get_dtype())
        return g.reshape(1, ctx.n_frames, 1, 1)

    # -- blocks

    def _mlp(self, h, prefix) -> Tensor:
        p = self.params
        hid = gelu(linear(h, p[f"{prefix}.mlp.fc1.weight"], p[f"{prefix}.mlp.fc1.bias"]))
        return linear(hid, p[f"{prefix}.mlp.fc2.weight"], p[f"{prefix}.mlp.fc2.bias"])

    def _block(self, x, prefix, ctx, attn_fn) -> Tensor:
        """Pre-norm block: attention sublayer then MLP sublayer, each with its conditioning."""
        eps = self.config.norm_eps
        if self.config.cond_mode == "s_adaln":
            shift1, scale1, gate1, shift2, scale2, gate2 = self._mods(f"{prefix}.adaLN", ctx, 6)
            h = add(mul(layer_norm(x, eps), add(scale1, 1.0)), shift1)
            x = add(x, mul(gate1, attn_fn(h, None)))
            h = add(mul(layer_norm(x, eps), add(scale2, 1.0)), shift2)
            return add(x, mul(gate2, self._mlp(h, prefix)))
        cond = self._cond_token(ctx, f"{prefix}.norm1")
        x = add(x, attn_fn(self._affine_norm(x, f"{prefix}.norm1"), cond))
        return add(x, self._mlp(self._affine_norm(x, f"{prefix}.norm2"), prefix))

    def spatial_block(self, z, prefix, ctx) -> Tensor:
        return self._block(z, prefix, ctx, lambda h, cond: self._spatial_attn(h, f"{prefix}.attn", ctx, cond))

    def temporal_block(self, z, prefix, ctx) -> Tensor:
        out = self._block(z, prefix, ctx, lambda h, cond: self._temporal_attn(h, f"{prefix}.attn", ctx, cond))
        return self._keep_appended(out, z, ctx)

    def variant3_block(self, z, prefix, ctx) -> Tensor:
        gate = self._frame_gate(ctx)

        def attn(h, cond):
            s = self._spatial_attn(h, f"{prefix}.attn_s", ctx, cond)
            st = self._temporal_attn(s, f"{prefix}.attn_t", ctx, cond)
            if gate is not None:
                st = mul(st, gate)
            return add(s, st)

        return self._block(z, prefix, ctx, attn)

    def variant4_block(self, z, prefix, ctx) -> Tensor:
        cfg, p = self.config, self.params
        d, half = cfg.hidden, cfg.hidden // 2
        heads = cfg.heads // 2
        gate = self._frame_gate(ctx)
        ap = f"{prefix}.attn"

        def proj(x, name):
            return linear(x, p[f"{ap}.{name}.weight"], p[f"{ap}.{name}.bias"])

        def attn(h, cond):
            q, k, v = proj(h, "q"), proj(h, "k"), proj(h, "v")
            lo, hi = (Ellipsis, slice(0, half)), (Ellipsis, slice(half, d))
            ks, vs = getitem(k, lo), getitem(v, lo)
            kt, vt = getitem(k, hi).transpose(0, 2, 1, 3), getitem(v, hi).transpose(0, 2, 1, 3)
            qt = getitem(q, hi).transpose(0, 2, 1, 3)
            nf = qt.shape[-2]
            mask = ctx.key_mask
            q_pos = k_pos = np.arange(nf) if ctx.rope else None
            if cond is not None:
                kc, vc = proj(cond, "k"), proj(cond, "v")
                ks, vs = concat_prefix(getitem(kc, lo), ks), concat_prefix(getitem(vc, lo), vs)
                kt, vt = concat_prefix(getitem(kc, hi), kt), concat_prefix(getitem(vc, hi), vt)
                if mask is not None:
                    mask = np.concatenate([[True], mask])
                if ctx.rope:
                    k_pos = np.concatenate([[0], np.arange(nf)])
            spatial = attend(getitem(q, lo), ks, vs, heads, record=self._rec(ctx, f"{ap}.spatial"))
            temporal = attend(qt, kt, vt, heads, q_pos, k_pos, mask, self._rec(ctx, f"{ap}.temporal"))
            temporal = temporal.transpose(0, 2, 1, 3)
            if gate is not None:
                temporal = mul(temporal, gate)
            # the output projection of the concatenated halves sums both branches
            return proj(concat([spatial, temporal], axis=-1), "o")

        return self._block(z, prefix, ctx, attn)

    _KINDS = {"spatial": spatial_block, "temporal": temporal_block, "seq": variant3_block, "split": variant4_block}

    def apply_block(self, kind: str, prefix: str, z, c, n_valid: int | None = None, record: dict | None = None) -> Tensor:
        """Run one block on tokens ``z`` (B, n_f, t, D) under conditioning vector ``c`` (B, D)."""
        z, c = as_tensor(z), as_tensor(c)
        if z.ndim != 4 or z.shape[-1] != self.config.hidden:
            raise ValueError(f"tokens must be (B, n_f, t, {self.config.hidden}), got {z.shape}")
        nf = z.shape[1]
        ctx = _Context(
            c=c,
            silu_c=silu(c) if self.config.cond_mode == "s_adaln" else None,
            n_valid=nf if n_valid is None else n_valid,
            n_frames=nf,
            rope=self.config.temporal_pos == "rope",
            record=record,
        )
        return self._KINDS[kind](self, z, prefix, ctx)

    # -- full pass

    def embed(self, v: Tensor) -> Tensor:
        cfg, p = self.config, self.params
        ph, pw = cfg.patch
        if cfg.patch_mode == "compression":
            grid = compression_patch_embed(v, ph, pw, cfg.stride, p["x_embed.weight"], p["x_embed.bias"])
        else:
            grid = uniform_patch_embed(v, ph, pw, p["x_embed.weight"], p["x_embed.bias"])
        return grid.values

    def _positions(self, n_frames: int, n_valid: int) -> np.ndarray:
        cfg = self.config
        t = cfg.n_h * cfg.n_w
        table = self.buffers["pos_embed"].reshape(-1, t, cfg.hidden)
        if cfg.variant == 0:
            return np.broadcast_to(self.buffers["pos_spatial"], (n_frames, t, cfg.hidden))
        extra = np.broadcast_to(self.buffers["pos_spatial"], (n_frames - n_valid, t, cfg.hidden))
        return np.concatenate([table[:n_valid], extra], axis=0)

    def _stack(self, x, t, y, n_valid, record) -> tuple[Tensor, Tensor, _Context]:
        cfg = self.config
        x = as_tensor(x)
        if x.ndim != 5 or tuple(x.shape[2:]) != cfg.latent:
            raise ValueError(f"input {x.shape} does not match latent {cfg.latent}")
        b, f = x.shape[:2]
        t = np.broadcast_to(np.asarray(t), (b,))
        if y is not None:
            y = np.broadcast_to(np.asarray(y), (b,))
        if cfg.variant == 0:
            n_valid = f
        else:
            n_valid = cfg.frames if n_valid is None else n_valid
            if n_valid != cfg.frames or f < n_valid:
                raise ValueError(f"{f} input frames ({n_valid} temporal) but the model expects {cfg.frames} video frames")
            if f > n_valid and cfg.patch_mode == "compression":
                raise ValueError("appended image frames are not supported with compression patch embedding")
        z = self.embed(x)
        n_frames_tok = z.shape[1]
        n_valid_tok = n_valid // cfg.stride
        z0 = add(z, self._positions(n_frames_tok, n_valid_tok).astype(get_dtype()))
        c = timestep_class_embed(self.params, Conditioning(t, y), cfg.num_classes, cfg.freq_dim)
        ctx = _Context(
            c=c,
            silu_c=silu(c) if cfg.cond_mode == "s_adaln" else None,
            n_valid=n_valid_tok,
            n_frames=n_frames_tok,
            rope=cfg.temporal_pos == "rope" and cfg.variant != 0,
            record=record,
        )
        z = z0
        for kind, prefix in cfg.block_layout():
            z = self._KINDS[kind](self, z, prefix, ctx)
        return z0, z, ctx

    def forward(self, x, t, y=None, n_valid: int | None = None, record: dict | None = None) -> tuple[Tensor, Tensor]:
        """Predict (noise, raw variance) for latents ``x`` of shape (B, F, H, W, C).

        ``n_valid`` frames (default ``config.frames``) take part in temporal
        modelling; any frames after them are independent image frames.
        ``record``, if given, collects attention weights per attention prefix.
        """
        _, z, ctx = self._stack(x, t, y, n_valid, record)
        return self.decode(z, ctx, as_tensor(x).shape[1])

    def backbone_tokens(self, x, t, y=None) -> tuple[Tensor, Tensor]:
        """Tokens entering and leaving the block stack."""
        z0, z, _ = self._stack(x, t, y, None, None)
        return z0, z

    def decode(self, z, ctx: _Context, frames: int) -> tuple[Tensor, Tensor]:
        cfg, p = self.config, self.params
        if cfg.cond_mode == "s_adaln":
            shift, scale = self._mods("final.adaLN", ctx, 2)
            h = add(mul(layer_norm(z, cfg.norm_eps), add(scale, 1.0)), shift)
        else:
            h = self._affine_norm(z, "final.norm")
        lh, lw, lc = cfg.latent
        up_w = p.get("final.upsample.weight")
        up_b = p.get("final.upsample.bias")
        return token_decode(
            h, (frames, lh, lw, lc), cfg.patch, p["final.linear.weight"], p["final.linear.bias"], cfg.stride, up_w, up_b
        )

    __call__ = forward


def denoiser_forward(model: LatteModel, v, cond: Conditioning, n_valid: int | None = None) -> tuple[Tensor, Tensor]:
    return model.forward(v, cond.timestep, cond.class_label, n_valid)


# ---------------------------------------------------------------- pretrained adaptation


def image_config(video_cfg: ModelConfig, num_classes: int | None = None) -> ModelConfig:
    """Config of the per-frame image model whose blocks seed a variant 1/2 video model."""
    return replace(
        video_cfg,
        variant=0,
        layers=video_cfg.layers // 2,
        frames=1,
        stride=1,
        patch_mode="uniform",
        num_classes=num_classes,
    )


def adapt_image_checkpoint(image: LatteModel, config: ModelConfig, seed: int = 0) -> LatteModel:
    """Build a video model from an image model.

    Spatial blocks, patch embedder, timestep embedder and decoder are copied;
    the spatial positional table is replicated over every frame; the label
    table is replaced by zeros; temporal blocks are freshly initialised with
    their residual branches zero-gated so they start as the identity.
    """
    icfg = image.config
    if config.variant not in (1, 2):
        raise ValueError("image-checkpoint adaptation supports variants 1 and 2")
    if config.patch_mode != "uniform":
        raise ValueError("image-checkpoint adaptation needs uniform patch embedding")
    if icfg.variant != 0:
        raise ValueError("source must be an image model (variant 0)")
    for key in ("hidden", "heads", "patch", "cond_mode", "mlp_ratio", "freq_dim", "latent"):
        if getattr(icfg, key) != getattr(config, key):
            raise ValueError(f"dimension mismatch on {key}: {getattr(icfg, key)} vs {getattr(config, key)}")
    if icfg.layers != config.layers // 2:
        raise ValueError(f"image model has {icfg.layers} blocks, video model has {config.layers // 2} spatial blocks")

    video = LatteModel(config, seed=seed)
    params = video.params
    for name, tensor in image.params.items():
        if name.startswith("y_embed"):
            continue
        params[name] = Tensor(tensor.data.copy(), requires_grad=True, name=name)
    if config.num_classes:
        params["y_embed.table"] = Tensor(np.zeros((config.num_classes, config.hidden)), requires_grad=True, name="y_embed.table")
    for name in params:
        if not name.startswith("temporal."):
            continue
        if config.cond_mode == "s_adaln" and ".adaLN." in name:
            params[name] = Tensor(np.zeros(params[name].shape), requires_grad=True, name=name)
        if config.cond_mode == "all_tokens" and (".attn.o." in name or ".mlp.fc2." in name):
            params[name] = Tensor(np.zeros(params[name].shape), requires_grad=True, name=name)
    spatial = image.buffers["pos_spatial"]
    video.buffers = {"pos_embed": np.tile(spatial, (config.n_f, 1)), "pos_spatial": spatial.copy()}
    return video
