"""Gradient, oracle-equivalence and invariant suites behind ``latte verify``."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace
from typing import Callable, Iterator

import numpy as np

from .. import tensor as T
from ..analysis import count_params, estimate_flops
from ..attention import attend, multi_head_attention
from ..backbone import LatteModel, ModelConfig, adapt_image_checkpoint, image_config, init_params
from ..data import codec_decode, codec_encode
from ..diffusion import DiffusionSchedule
from . import oracles as O
from .gradcheck import gradcheck, projected

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-10
KIND_VARIANT = {"spatial": 1, "temporal": 1, "seq": 3, "split": 4}


@dataclass
class CaseResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.suite}/{self.name}  {self.detail}"


Case = tuple[str, Callable[[], tuple[bool, str]]]


def _block_model(kind: str, cond_mode: str, temporal_pos: str = "absolute", seed: int = 0, heads: int = 2, hidden: int = 8):
    cfg = ModelConfig(
        variant=KIND_VARIANT[kind],
        layers=2,
        hidden=hidden,
        heads=heads,
        frames=4,
        latent=(4, 4, 4),
        cond_mode=cond_mode,
        temporal_pos=temporal_pos,
        mlp_ratio=2,
        freq_dim=8,
    )
    model = LatteModel(cfg, init_params(cfg, seed=seed, zero_gates=False))
    prefix = "temporal.0" if kind == "temporal" else cfg.block_layout()[0][1]
    return model, prefix


# ---------------------------------------------------------------- gradient suite


def _scramble(model: LatteModel, seed: int, scale: float = 0.3) -> LatteModel:
    """Redraw every parameter at a larger scale.

    At the small training init many gradients are ~1e-6 and central
    differences drown in round-off; a well-conditioned random point checks
    the same derivative code.
    """
    rng = np.random.default_rng(seed + 12345)
    for p in model.params.values():
        p.data = rng.standard_normal(p.shape) * scale
    return model


def _op_cases(seed: int = 0) -> list[Case]:
    rng = np.random.default_rng(seed)

    def leaf(*shape, positive=False):
        a = rng.standard_normal(shape)
        return T.Tensor(np.abs(a) + 0.5 if positive else a, requires_grad=True)

    def check(build, **inputs):
        def run():
            rep = gradcheck(lambda: projected(build(**inputs), seed), inputs, max_entries=None)
            return rep.ok(GRAD_TOL), f"max rel err {rep.max_rel_error:.2e} at {rep.worst}"

        return run

    mask = rng.random((3, 5)) < 0.7
    mask[:, 0] = True
    return [
        ("op:add", check(lambda a, b: T.add(a, b), a=leaf(3, 4), b=leaf(4))),
        ("op:mul", check(lambda a, b: T.mul(a, b), a=leaf(3, 4), b=leaf(3, 1))),
        ("op:div", check(lambda a, b: T.div(a, b), a=leaf(3, 4), b=leaf(4, positive=True))),
        ("op:pow", check(lambda a: T.power(a, 1.5), a=leaf(3, 4, positive=True))),
        ("op:exp", check(lambda a: T.exp(a), a=leaf(3, 4))),
        ("op:log", check(lambda a: T.log(a), a=leaf(3, 4, positive=True))),
        ("op:silu", check(lambda a: T.silu(a), a=leaf(3, 4))),
        ("op:gelu", check(lambda a: T.gelu(a), a=leaf(3, 4))),
        ("op:mean", check(lambda a: T.mean(a, axis=1), a=leaf(3, 4))),
        ("op:sum", check(lambda a: T.sum_(a, axis=0, keepdims=True), a=leaf(3, 4))),
        ("op:reshape_transpose", check(lambda a: a.reshape(4, 3).transpose(1, 0), a=leaf(3, 4))),
        ("op:getitem", check(lambda a: T.getitem(a, (slice(None), [0, 2, 2])), a=leaf(3, 4))),
        ("op:concat", check(lambda a, b: T.concat([a, b], axis=1), a=leaf(3, 2), b=leaf(3, 4))),
        ("op:matmul", check(lambda a, b: T.matmul(a, b), a=leaf(2, 3, 4), b=leaf(4, 5))),
        ("op:linear", check(lambda x, w, b: T.linear(x, w, b), x=leaf(2, 3, 4), w=leaf(4, 5), b=leaf(5))),
        ("op:softmax", check(lambda a: T.softmax(a, axis=-1), a=leaf(3, 5))),
        ("op:softmax_masked", check(lambda a: T.softmax(a, axis=-1, mask=mask), a=leaf(3, 5))),
        ("op:layer_norm", check(lambda a: T.layer_norm(a, 1e-6), a=leaf(3, 6))),
    ]


def _block_grad_case(kind: str, cond_mode: str, seed: int, temporal_pos: str = "absolute", n_valid=None) -> Callable:
    def run():
        with T.precision("f64"):
            model, prefix = _block_model(kind, cond_mode, temporal_pos, seed)
            _scramble(model, seed)
            rng = np.random.default_rng(seed + 100)
            params = {k: v for k, v in model.params.items() if k.startswith(prefix + ".")}
            params["z"] = T.Tensor(rng.standard_normal((2, 3, 4, 8)), requires_grad=True)
            params["c"] = T.Tensor(rng.standard_normal((2, 8)), requires_grad=True)
            rep = gradcheck(
                lambda: projected(model.apply_block(kind, prefix, params["z"], params["c"], n_valid), seed),
                params,
                max_entries=12,
                seed=seed,
            )
        return rep.ok(GRAD_TOL), f"max rel err {rep.max_rel_error:.2e} at {rep.worst} ({rep.checked} probes)"

    return run


def _model_grad_case(patch_mode: str, cond_mode: str, seed: int) -> Callable:
    def run():
        with T.precision("f64"):
            stride = 2 if patch_mode == "compression" else 1
            cfg = ModelConfig(
                variant=1,
                layers=2,
                hidden=8,
                heads=2,
                frames=4,
                latent=(4, 4, 2),
                stride=stride,
                patch_mode=patch_mode,
                cond_mode=cond_mode,
                num_classes=3,
                mlp_ratio=2,
                freq_dim=8,
            )
            model = _scramble(LatteModel(cfg, init_params(cfg, seed=seed, zero_gates=False)), seed)
            rng = np.random.default_rng(seed + 7)
            params = dict(model.params)
            params["x"] = T.Tensor(rng.standard_normal((2, 4, 4, 4, 2)), requires_grad=True)
            rep = gradcheck(
                lambda: projected(model(params["x"], [3, 40], [0, 2]), seed), params, max_entries=6, seed=seed
            )
        return rep.ok(GRAD_TOL), f"max rel err {rep.max_rel_error:.2e} at {rep.worst} ({rep.checked} probes)"

    return run


def grad_cases(seeds=range(5)) -> Iterator[Case]:
    with T.precision("f64"):
        ops = _op_cases()
    yield from ops
    for kind, cond_mode, seed in itertools.product(("spatial", "temporal", "seq", "split"), ("s_adaln", "all_tokens"), seeds):
        yield f"block:{kind}/{cond_mode}/seed{seed}", _block_grad_case(kind, cond_mode, seed)
    for kind in ("temporal", "seq", "split"):
        yield f"block:{kind}/rope/masked", _block_grad_case(kind, "all_tokens", 0, "rope", n_valid=2)
    for patch_mode, cond_mode, seed in itertools.product(("uniform", "compression"), ("s_adaln", "all_tokens"), seeds):
        yield f"model:{patch_mode}/{cond_mode}/seed{seed}", _model_grad_case(patch_mode, cond_mode, seed)


# ---------------------------------------------------------------- oracle suite


def _attention_sweep() -> tuple[bool, str]:
    worst = 0.0
    n = 0
    with T.precision("f64"):
        for s_q, s_k, heads, use_rope, masked in itertools.product(range(1, 5), range(1, 5), (1, 2), (False, True), (False, True)):
            rng = np.random.default_rng(n)
            q, k, v = rng.standard_normal((s_q, 4)), rng.standard_normal((s_k, 4)), rng.standard_normal((s_k, 4))
            qp = np.arange(s_q) if use_rope else None
            kp = np.arange(s_k) + 1 if use_rope else None
            mask = None
            if masked:
                mask = rng.random(s_k) < 0.6
                mask[rng.integers(s_k)] = True
            got = attend(T.Tensor(q), T.Tensor(k), T.Tensor(v), heads, qp, kp, mask).data
            ref = O.attention(q, k, v, heads, qp, kp, mask)
            worst = max(worst, float(np.abs(got - ref).max()))
            n += 1
    return worst < ORACLE_TOL, f"{n} shapes, max abs err {worst:.2e}"


def _mha_case() -> tuple[bool, str]:
    with T.precision("f64"):
        model, prefix = _block_model("spatial", "s_adaln", seed=5)
        rng = np.random.default_rng(1)
        x, kv = rng.standard_normal((3, 8)), rng.standard_normal((4, 8))
        got = multi_head_attention(x, kv, 2, model.params, f"{prefix}.attn").data
        p = {k: v.data for k, v in model.params.items()}
        ref = O.mha(x, kv, p, f"{prefix}.attn", 2)
    err = float(np.abs(got - ref).max())
    return err < ORACLE_TOL, f"max abs err {err:.2e}"


def _block_sweep(kind: str, cond_mode: str, temporal_pos: str) -> Callable:
    def run():
        worst, n = 0.0, 0
        heads_options = (2,) if kind == "split" else (1, 2)
        with T.precision("f64"):
            for heads in heads_options:
                model, prefix = _block_model(kind, cond_mode, temporal_pos, seed=heads, heads=heads, hidden=4)
                p = {k: v.data for k, v in model.params.items()}
                for nf, t in itertools.product(range(1, 5), range(1, 5)):
                    for n_valid in sorted({nf, max(1, nf - 1)}):
                        rng = np.random.default_rng(100 * nf + t)
                        z = rng.standard_normal((1, nf, t, 4))
                        c = rng.standard_normal((1, 4))
                        got = model.apply_block(kind, prefix, z, c, n_valid).data[0]
                        ref = O.block(kind, p, prefix, z[0], c[0], heads, cond_mode, temporal_pos == "rope", n_valid)
                        worst = max(worst, float(np.abs(got - ref).max()))
                        n += 1
        return worst < ORACLE_TOL, f"{n} shapes, max abs err {worst:.2e}"

    return run


def _conditioning_case() -> tuple[bool, str]:
    from ..embedding import Conditioning, timestep_class_embed

    with T.precision("f64"):
        cfg = ModelConfig(variant=1, layers=2, hidden=8, heads=2, frames=2, latent=(4, 4, 4), num_classes=3, freq_dim=10)
        params = init_params(cfg, seed=2, zero_gates=False)
        got = timestep_class_embed(params, Conditioning(np.array([1, 999]), np.array([2, 0])), 3, 10).data
        p = {k: v.data for k, v in params.items()}
        ref = np.stack([O.conditioning(p, 1, 2, 10), O.conditioning(p, 999, 0, 10)])
    err = float(np.abs(got - ref).max())
    return err < ORACLE_TOL, f"max abs err {err:.2e}"


def oracle_cases() -> Iterator[Case]:
    yield "attention:sweep", _attention_sweep
    yield "attention:projected", _mha_case
    yield "conditioning:embed", _conditioning_case
    for kind, cond_mode, tp in itertools.product(("spatial", "temporal", "seq", "split"), ("s_adaln", "all_tokens"), ("absolute", "rope")):
        if kind == "spatial" and tp == "rope":
            continue  # rotary positions only enter temporal attention
        yield f"block:{kind}/{cond_mode}/{tp}", _block_sweep(kind, cond_mode, tp)


# ---------------------------------------------------------------- invariant suite


def _small_cfg(**kw) -> ModelConfig:
    base = dict(variant=1, layers=2, hidden=8, heads=2, frames=4, latent=(4, 4, 4), mlp_ratio=2, freq_dim=8)
    base.update(kw)
    return ModelConfig(**base)


def _zero_init_identity() -> tuple[bool, str]:
    with T.precision("f64"):
        bad = []
        for v in (1, 2, 3, 4):
            model = LatteModel(_small_cfg(variant=v, num_classes=2), seed=v)
            x = np.random.default_rng(v).standard_normal((2, 4, 4, 4, 4))
            eps, var = model(x, [1, 500], [0, 1])
            z0, z = model.backbone_tokens(x, [1, 500], [0, 1])
            if np.any(eps.data != 0) or np.any(var.data != 0) or not np.array_equal(z0.data, z.data):
                bad.append(v)
    return not bad, "variants failing: " + str(bad) if bad else "output exactly 0, backbone is the identity"


def _zero_temporal(model: LatteModel) -> None:
    for name, p in model.params.items():
        if name.startswith("temporal.") and ".adaLN." in name:
            p.data = np.zeros_like(p.data)
        if ".attn_t.o." in name:
            p.data = np.zeros_like(p.data)
        if name.startswith("blocks.") and ".attn.o.weight" in name and model.config.variant == 4:
            p.data = p.data.copy()
            p.data[model.config.hidden // 2 :] = 0.0


def _cross_frame_isolation() -> tuple[bool, str]:
    with T.precision("f64"):
        bad = []
        for v in (1, 2, 3, 4):
            cfg = _small_cfg(variant=v)
            model = LatteModel(cfg, init_params(cfg, seed=v, zero_gates=False))
            _zero_temporal(model)
            rng = np.random.default_rng(v)
            x = rng.standard_normal((1, 4, 4, 4, 4))
            x2 = x.copy()
            x2[:, 2] = rng.standard_normal((4, 4, 4))
            a, b = model(x, [7])[0].data, model(x2, [7])[0].data
            if not np.array_equal(np.delete(a, 2, axis=1), np.delete(b, 2, axis=1)):
                bad.append(v)
    return not bad, f"variants failing: {bad}" if bad else "other frames bit-identical"


def _spatial_isolation() -> tuple[bool, str]:
    with T.precision("f64"):
        model, prefix = _block_model("temporal", "s_adaln", seed=4)
        rng = np.random.default_rng(0)
        z = rng.standard_normal((1, 3, 4, 8))
        c = rng.standard_normal((1, 8))
        z2 = z.copy()
        z2[:, :, 1] += rng.standard_normal((3, 8))
        a = model.apply_block("temporal", prefix, z, c).data
        b = model.apply_block("temporal", prefix, z2, c).data
    same = np.array_equal(np.delete(a, 1, axis=2), np.delete(b, 1, axis=2))
    return same, "other locations bit-identical" if same else "temporal block leaked across locations"


def _frame_permutation() -> tuple[bool, str]:
    with T.precision("f64"):
        cfg = _small_cfg(variant=1)
        model = LatteModel(cfg, init_params(cfg, seed=9, zero_gates=False))
        model.buffers = {"pos_embed": np.tile(model.buffers["pos_spatial"], (4, 1)), "pos_spatial": model.buffers["pos_spatial"]}
        x = np.random.default_rng(3).standard_normal((1, 4, 4, 4, 4))
        perm = np.array([2, 0, 3, 1])
        a = model(x, [11])[0].data
        b = model(x[:, perm], [11])[0].data
    err = float(np.abs(a[:, perm] - b).max())
    return err < 1e-12, f"max abs err {err:.2e}"


def joint_mask_weights(cfg: ModelConfig, seed: int = 0, extra: int = 2) -> float:
    """Largest temporal attention weight placed on appended frames (0 means fully excluded)."""
    model = LatteModel(cfg, init_params(cfg, seed=seed, zero_gates=False))
    x = np.random.default_rng(seed).standard_normal((1, cfg.frames + extra) + cfg.latent)
    record: dict = {}
    model(x, [5], n_valid=cfg.frames, record=record)
    prefix = 1 if cfg.cond_mode == "all_tokens" else 0
    worst = 0.0
    for name, mats in record.items():
        if ".attn_s" in name or name.endswith(".spatial") or name.startswith("spatial."):
            continue
        for w in mats:
            worst = max(worst, float(np.abs(w[..., prefix + cfg.frames :]).max()))
    return worst


def joint_grad_invariance(cfg: ModelConfig, seed: int = 0, extra: int = 2) -> bool:
    """Temporal-parameter gradients are bit-identical when appended frames change."""
    model = LatteModel(cfg, init_params(cfg, seed=seed, zero_gates=False))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, cfg.frames + extra) + cfg.latent)
    x2 = x.copy()
    x2[:, cfg.frames :] = rng.standard_normal(x2[:, cfg.frames :].shape) * 3.0
    names = [k for k in model.params if k.startswith("temporal.") or ".attn_t." in k]
    if cfg.variant == 4:
        names = [k for k in model.params if k.startswith("blocks.") and ".attn." in k]

    def grads(inp):
        eps, var = model(inp, [3, 9], n_valid=cfg.frames)
        return T.backward(projected((eps, var), seed), {k: model.params[k] for k in names})

    a, b = grads(x), grads(x2)
    if cfg.variant == 4:
        # projections are shared with the spatial half; compare the temporal half only
        half = cfg.hidden // 2

        def temporal_part(name, g):
            return g[half:] if ".o." in name else g[..., half:]

        # the output bias is shared by both branches, so it is not a temporal parameter
        return all(np.array_equal(temporal_part(k, a[k]), temporal_part(k, b[k])) for k in names if ".o.bias" not in k)
    return all(np.array_equal(a[k], b[k]) for k in names)


def _joint_masking() -> tuple[bool, str]:
    with T.precision("f64"):
        worst = 0.0
        for v, cm, tp in itertools.product((1, 2, 3, 4), ("s_adaln", "all_tokens"), ("absolute", "rope")):
            worst = max(worst, joint_mask_weights(_small_cfg(variant=v, cond_mode=cm, temporal_pos=tp), seed=v))
    return worst == 0.0, f"max weight on appended frames {worst!r}"


def _joint_gradients() -> tuple[bool, str]:
    with T.precision("f64"):
        bad = [
            (v, cm)
            for v, cm in itertools.product((1, 2, 3, 4), ("s_adaln", "all_tokens"))
            if not joint_grad_invariance(_small_cfg(variant=v, cond_mode=cm), seed=v)
        ]
    return not bad, f"failing: {bad}" if bad else "temporal gradients bit-identical"


def _adaptation() -> tuple[bool, str]:
    with T.precision("f64"):
        video_cfg = _small_cfg(variant=1, num_classes=3)
        icfg = image_config(video_cfg, num_classes=5)
        image = LatteModel(icfg, init_params(icfg, seed=1, zero_gates=False))
        video = adapt_image_checkpoint(image, video_cfg, seed=2)
        frame = np.random.default_rng(0).standard_normal((1, 1) + video_cfg.latent)
        clip = np.repeat(frame, 4, axis=1)
        ref_eps, ref_var = image(frame, [21])  # the adapted model drops the image label table
        eps, var = video(clip, [21], [1])
        err = max(float(np.abs(eps.data - ref_eps.data).max()), float(np.abs(var.data - ref_var.data).max()))
        labels_zero = not np.any(video.params["y_embed.table"].data)
    return err < 1e-6 and labels_zero, f"max per-frame deviation {err:.2e}, label table zero: {labels_zero}"


def _accounting() -> tuple[bool, str]:
    bad = []
    for v, cm, pm in itertools.product((0, 1, 2, 3, 4), ("s_adaln", "all_tokens"), ("uniform", "compression")):
        kw = dict(variant=v, cond_mode=cm, patch_mode=pm, stride=2 if pm == "compression" else 1, num_classes=3)
        cfg = _small_cfg(**kw)
        allocated = LatteModel(cfg, seed=0).num_params()
        if count_params(cfg) != allocated:
            bad.append((v, cm, pm))
    r1, r2 = estimate_flops(_small_cfg(variant=1)), estimate_flops(_small_cfg(variant=2))
    parity = (r1.params, r1.flops_forward) == (r2.params, r2.flops_forward)
    return not bad and parity, f"count mismatches: {bad}; variant 1/2 parity: {parity}"


def _codec() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    ok = True
    for f, shape in ((8, (3, 32, 16, 1)), (2, (2, 4, 6, 3)), (4, (8, 8, 2))):
        x = rng.uniform(-1, 1, shape)
        z = codec_encode(x, f)
        ok &= np.array_equal(codec_decode(z, f), x) and float(np.sum(z * z)) == float(np.sum(x * x))
    return bool(ok), "bit-exact round trip"


def _schedule() -> tuple[bool, str]:
    ok = True
    for steps in (1, 2, 10, 1000):
        s = DiffusionSchedule.linear(steps)
        ok &= bool(np.all(np.diff(s.alpha_bar) < 0)) and s.alpha_bar[0] == 1 - s.betas[0]
        post = np.exp(s.posterior_log_variance_clipped)
        ok &= bool(np.all(post > 0) and np.all(post <= s.betas * (1 + 1e-12)))
    return ok, "alpha_bar decreasing, posterior variances positive"


def invariant_cases() -> Iterator[Case]:
    yield "zero_init_identity", _zero_init_identity
    yield "cross_frame_isolation", _cross_frame_isolation
    yield "spatial_token_isolation", _spatial_isolation
    yield "frame_permutation_equivariance", _frame_permutation
    yield "joint_attention_mask", _joint_masking
    yield "joint_gradient_exclusion", _joint_gradients
    yield "image_adaptation", _adaptation
    yield "param_accounting", _accounting
    yield "codec_bijective", _codec
    yield "schedule", _schedule


SUITES: dict[str, Callable[[], Iterator[Case]]] = {"grad": grad_cases, "oracle": oracle_cases, "invariants": invariant_cases}


def run_suites(names=None, name_filter: str | None = None, on_result: Callable[[CaseResult], None] | None = None) -> list[CaseResult]:
    """Run the named suites (default all). ``name_filter`` keeps suites whose name contains it."""
    selected = [n for n in (names or SUITES) if name_filter is None or name_filter in n]
    if not selected:
        raise ValueError(f"no suite matches {name_filter!r}; available: {sorted(SUITES)}")
    results = []
    for suite in selected:
        for name, fn in SUITES[suite]():
            t0 = time.perf_counter()
            try:
                passed, detail = fn()
            except Exception as exc:  # a crashing case is a failing case
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            res = CaseResult(suite, name, bool(passed), detail, time.perf_counter() - t0)
            results.append(res)
            if on_result:
                on_result(res)
    return results
