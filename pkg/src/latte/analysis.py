"""Analytic parameter and FLOP accounting, Fréchet distance, temporal coherence.

The cost model never allocates weights. One multiply-add counts as 2 FLOPs.
Elementwise work (norms, activations, softmax, residual adds) is left out,
so absolute numbers are a lower bound and only ratios are meaningful.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .backbone import ModelConfig

# preset widths of the four model sizes: (layers, hidden, heads)
PRESETS = {
    "S": (12, 384, 6),
    "B": (12, 768, 12),
    "L": (24, 1024, 16),
    "XL": (28, 1152, 16),
}


def preset_config(size: str = "XL", variant: int = 1, frames: int = 16, latent=(32, 32, 4), **overrides) -> ModelConfig:
    layers, hidden, heads = PRESETS[size.upper()]
    kw = dict(variant=variant, layers=layers, hidden=hidden, heads=heads, patch=(2, 2), frames=frames, latent=tuple(latent))
    kw.update(overrides)
    return ModelConfig(**kw)


# ---------------------------------------------------------------- parameters


def _linear(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def _block_params(cfg: ModelConfig, kind: str) -> int:
    d = cfg.hidden
    attn = 4 * _linear(d, d)
    n = (2 * attn if kind == "seq" else attn) + _linear(d, cfg.mlp_ratio * d) + _linear(cfg.mlp_ratio * d, d)
    return n + (_linear(d, 6 * d) if cfg.cond_mode == "s_adaln" else 4 * d)


def _blocks(cfg: ModelConfig) -> list[tuple[str, int]]:
    """(kind, count) pairs, with variants 3 and 4 equalised to the variant-1 budget."""
    n = cfg.layers
    if cfg.variant == 0:
        return [("spatial", n)]
    if cfg.variant in (1, 2):
        return [("spatial", n // 2), ("temporal", n // 2)]
    kind = "seq" if cfg.variant == 3 else "split"
    if not cfg.equalize_depth:
        return [(kind, n)]
    return [(kind, -(-n * _block_params(cfg, "spatial") // _block_params(cfg, kind)))]


def param_breakdown(cfg: ModelConfig) -> dict[str, int]:
    d = cfg.hidden
    ph, pw = cfg.patch
    out_c = 2 * cfg.latent[2]
    parts = {
        "patch_embed": _linear(cfg.patch_dim, d),
        "timestep_embed": _linear(cfg.freq_dim, d) + _linear(d, d),
        "label_embed": (cfg.num_classes or 0) * d,
    }
    for kind, count in _blocks(cfg):
        parts[f"blocks.{kind}"] = count * _block_params(cfg, kind)
    final = _linear(d, 2 * d) if cfg.cond_mode == "s_adaln" else 2 * d
    final += _linear(d, ph * pw * out_c)
    if cfg.patch_mode == "compression":
        final += cfg.stride * out_c * out_c + out_c
    parts["decoder"] = final
    return parts


def count_params(cfg: ModelConfig) -> int:
    cfg.validate()
    return sum(param_breakdown(cfg).values())


# ---------------------------------------------------------------- FLOPs


@dataclass
class CostReport:
    variant: int
    params: int
    flops_forward: int
    breakdown: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "params": self.params, "flops_forward": self.flops_forward, "breakdown": self.breakdown}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _attn_core(n_seq: int, s_q: int, s_k: int, width: int) -> int:
    # scores and weighted sum each cost 2 * s_q * s_k * width per sequence
    return n_seq * 2 * (2 * s_q * s_k * width)


def _block_flops(cfg: ModelConfig, kind: str, n_f: int, t: int, batch: int) -> int:
    d = cfg.hidden
    tokens = n_f * t
    prefix = 1 if cfg.cond_mode == "all_tokens" else 0
    proj = tokens * 4 * 2 * d * d
    mlp = tokens * 2 * 2 * d * cfg.mlp_ratio * d
    cond = 2 * d * 6 * d if cfg.cond_mode == "s_adaln" else 0
    # k/v projections of the conditioning token, once per attended sequence
    spatial_seq, temporal_seq = n_f, t
    if kind == "spatial":
        core = _attn_core(n_f, t, t + prefix, d)
        extra = spatial_seq * prefix * 2 * 2 * d * d
    elif kind == "temporal":
        core = _attn_core(t, n_f, n_f + prefix, d)
        extra = temporal_seq * prefix * 2 * 2 * d * d
    elif kind == "seq":
        core = _attn_core(n_f, t, t + prefix, d) + _attn_core(t, n_f, n_f + prefix, d)
        proj *= 2
        extra = (spatial_seq + temporal_seq) * prefix * 2 * 2 * d * d
    else:  # split: half the width attends per axis
        core = _attn_core(n_f, t, t + prefix, d // 2) + _attn_core(t, n_f, n_f + prefix, d // 2)
        extra = prefix * 2 * 2 * d * d  # one shared conditioning-token projection
    return batch * (proj + mlp + core + cond + extra)


def estimate_flops(cfg: ModelConfig, frames: int | None = None, latent=None, batch: int = 1) -> CostReport:
    """Forward-pass FLOPs of one denoiser call on ``batch`` clips."""
    cfg.validate()
    frames = cfg.frames if frames is None else frames
    lh, lw, lc = cfg.latent if latent is None else latent
    ph, pw = cfg.patch
    s = cfg.stride
    if lh % ph or lw % pw or frames % s:
        raise ValueError("latent dims or frame count incompatible with the patch/stride")
    n_f, t = frames // s, (lh // ph) * (lw // pw)
    d = cfg.hidden
    out_c = 2 * lc
    params = param_breakdown(cfg)

    flops = {
        "patch_embed": batch * n_f * t * 2 * cfg.patch_dim * d,
        "timestep_embed": batch * 2 * (cfg.freq_dim * d + d * d),
        "label_embed": 0,
    }
    for kind, count in _blocks(cfg):
        flops[f"blocks.{kind}"] = count * _block_flops(cfg, kind, n_f, t, batch)
    dec = batch * n_f * t * 2 * d * ph * pw * out_c
    if cfg.cond_mode == "s_adaln":
        dec += batch * 2 * d * 2 * d
    if cfg.patch_mode == "compression":
        dec += batch * n_f * lh * lw * 2 * out_c * s * out_c
    flops["decoder"] = dec

    breakdown = {k: {"params": params.get(k, 0), "flops": flops[k]} for k in flops}
    return CostReport(cfg.variant, sum(params.values()), sum(flops.values()), breakdown)


def report_text(reports: list[CostReport], baseline: CostReport | None = None) -> str:
    """Aligned-column table; ratios are relative to ``baseline`` (default: the first report)."""
    base = baseline or (reports[0] if reports else None)
    rows = [("variant", "params", "params_M", "gflops", "param_ratio", "flop_ratio")]
    for r in reports:
        rows.append(
            (
                str(r.variant),
                str(r.params),
                f"{r.params / 1e6:.2f}",
                f"{r.flops_forward / 1e9:.2f}",
                f"{r.params / base.params:.4f}",
                f"{r.flops_forward / base.flops_forward:.4f}",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows)


# ---------------------------------------------------------------- Fréchet distance


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int = 0

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean dim {n}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-10 * max(1.0, np.abs(self.cov).max())):
            raise ValueError("covariance is not symmetric")

    @classmethod
    def from_samples(cls, x) -> GaussianStats:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("need an (n >= 2, dim) sample matrix")
        return cls(x.mean(axis=0), np.cov(x, rowvar=False).reshape(x.shape[1], x.shape[1]), x.shape[0])


_NEG_TOL = -1e-8


def _psd_sqrt(m: np.ndarray, what: str) -> np.ndarray:
    w, v = eigh((m + m.T) / 2)
    if w.min(initial=0.0) < _NEG_TOL * max(1.0, np.abs(w).max(initial=0.0)):
        raise ValueError(f"{what} is indefinite (eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)."""
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape[0]} vs {b.mean.shape[0]}")
    ra = _psd_sqrt(a.cov, "first covariance")
    _psd_sqrt(b.cov, "second covariance")
    cross = _psd_sqrt(ra @ b.cov @ ra, "covariance product")
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return max(value, 0.0)


# ---------------------------------------------------------------- coherence


def temporal_coherence(clip) -> float:
    """Mean Pearson correlation between consecutive frames of a (F, ...) clip.

    Pairs where a frame is constant count as 1 if the frames are identical
    and are skipped otherwise. Returns NaN when every pair was skipped.
    """
    x = np.asarray(clip, dtype=np.float64)
    if x.ndim < 2 or x.shape[0] < 2:
        raise ValueError("temporal coherence needs at least 2 frames")
    flat = x.reshape(x.shape[0], -1)
    values = []
    for a, b in zip(flat[:-1], flat[1:]):
        ac, bc = a - a.mean(), b - b.mean()
        na, nb = math.sqrt(ac @ ac), math.sqrt(bc @ bc)
        if na == 0.0 or nb == 0.0:
            if np.array_equal(a, b):
                values.append(1.0)
            continue
        values.append(float(np.clip(ac @ bc / (na * nb), -1.0, 1.0)))
    return float(np.mean(values)) if values else float("nan")


def shuffled_coherence(clip, seed: int = 0, rounds: int = 8) -> float:
    """Coherence of the same frames in random order, averaged over ``rounds`` permutations."""
    x = np.asarray(clip)
    rng = np.random.default_rng(seed)
    vals = [temporal_coherence(x[rng.permutation(x.shape[0])]) for _ in range(rounds)]
    return float(np.nanmean(vals))
