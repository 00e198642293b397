"""Generate clips from a checkpoint and score their temporal coherence."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .analysis import temporal_coherence
from .backbone import LatteModel, param_shapes
from .checkpoint import Checkpoint, load_checkpoint
from .config import RunConfig
from .data import codec_decode, save_frame_dir
from .diffusion import DiffusionSchedule, model_denoiser, p_sample_loop
from .tensor import Tensor, precision
from .train import schedule_for


def model_from_checkpoint(ck: Checkpoint, use_ema: bool = True) -> tuple[RunConfig, LatteModel]:
    run = RunConfig.from_dict(ck.config)
    group = ck.group("ema" if use_ema else "params")
    expected = param_shapes(run.model)
    if set(group) != set(expected):
        raise ValueError("checkpoint arrays do not match the model layout in its config")
    params = {}
    for name, shape in expected.items():
        if group[name].shape != tuple(shape):
            raise ValueError(f"{name}: checkpoint shape {group[name].shape} != {tuple(shape)}")
        params[name] = Tensor(group[name], name=name)
    return run, LatteModel(run.model, params)


def generate(
    ckpt_dir,
    count: int,
    seed: int = 0,
    out_dir=None,
    use_ema: bool = True,
    chunk: int = 8,
    num_steps: int | None = None,
) -> dict:
    """Sample ``count`` clips, write ``sample_{i}`` frame directories and ``report.json``.

    Clips are produced in chunks; chunk ``j`` draws its noise from seed
    ``(seed, j)``, so results do not depend on anything but the arguments.
    ``num_steps`` overrides the number of diffusion steps for quick looks.
    """
    ck = load_checkpoint(ckpt_dir)
    out = Path(out_dir) if out_dir is not None else Path(ckpt_dir) / f"samples_seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    mode = ck.meta.get("precision", "f32")
    with precision(mode):
        run, model = model_from_checkpoint(ck, use_ema)
        schedule = schedule_for(run)
        if num_steps is not None:
            schedule = DiffusionSchedule.linear(num_steps)
        cfg = run.model
        denoise = model_denoiser(model)
        samples = []
        for j, start in enumerate(range(0, count, chunk)):
            n = min(chunk, count - start)
            labels = (np.arange(start, start + n) % cfg.num_classes) if cfg.num_classes else None
            z = p_sample_loop(denoise, schedule, (n, cfg.frames) + cfg.latent, labels, seed=[seed, j])
            pixels = np.clip(codec_decode(z.astype(np.float64), run.dataset.codec_factor), -1.0, 1.0)
            for k in range(n):
                i = start + k
                d = out / f"sample_{i}"
                save_frame_dir(d, pixels[k])
                samples.append(
                    {
                        "index": i,
                        "label": None if labels is None else int(labels[k]),
                        "dir": d.name,
                        "temporal_coherence": temporal_coherence(pixels[k]),
                    }
                )
    coh = [s["temporal_coherence"] for s in samples if np.isfinite(s["temporal_coherence"])]
    report = {
        "checkpoint": str(ckpt_dir),
        "step": ck.step,
        "seed": seed,
        "weights": "ema" if use_ema else "raw",
        "count": count,
        "samples": samples,
        "mean_temporal_coherence": float(np.mean(coh)) if coh else None,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
