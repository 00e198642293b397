"""AdamW, the training loop and checkpoint-based resumption."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import LatteModel
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import MovingShapesDataset, clip_sample, load_frame_dir, prefetch
from .diffusion import DiffusionSchedule, EmaState, ema_update, training_losses
from .tensor import NonFiniteError, Tensor, backward, precision

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "l_simple", "l_vlb", "wall_ms"]


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, detail: str):
        self.step = step
        super().__init__(f"non-finite value at step {step}: {detail}")


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: dict, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps, self.weight_decay = lr, beta1, beta2, eps, weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1**self.t, 1.0 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            upd = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            data = p.data * (1.0 - self.lr * self.weight_decay) if self.weight_decay else p.data
            p.data = (data - self.lr * upd).astype(p.data.dtype)


class FrameDirDataset(MovingShapesDataset):
    """Same batching as the synthetic set, over videos read from frame directories."""

    def __init__(self, root, frames, interval, codec_factor, hflip, extra_images, seed=0):
        dirs = sorted(p for p in Path(root).iterdir() if p.is_dir())
        if not dirs:
            raise FileNotFoundError(f"no video directories under {root}")
        videos = [load_frame_dir(d) for d in dirs]
        length = min(len(v) for v in videos)
        self.seed, self.frames, self.interval = seed, frames, interval
        self.codec_factor, self.hflip, self.extra_images = codec_factor, False, extra_images
        self.num_classes = 1
        self.videos = np.stack([v[:length] for v in videos])
        self.labels = np.zeros(len(videos), dtype=np.int64)
        clip_sample(self.videos[0], interval, frames, 0)


def build_dataset(run: RunConfig) -> MovingShapesDataset:
    ds = run.dataset
    if ds.kind == "frame_dirs":
        return FrameDirDataset(ds.path, run.model.frames, ds.interval, ds.codec_factor, ds.hflip, run.joint_frames, run.seed)
    return MovingShapesDataset(
        seed=run.seed,
        num_videos=ds.num_videos,
        video_length=ds.video_length,
        height=ds.height,
        width=ds.width,
        num_classes=ds.num_classes,
        channels=ds.channels,
        frames=run.model.frames,
        interval=ds.interval,
        codec_factor=ds.codec_factor,
        hflip=ds.hflip,
        extra_images=run.joint_frames,
        speed=ds.speed,
    )


def schedule_for(run: RunConfig) -> DiffusionSchedule:
    d = run.diffusion
    return DiffusionSchedule.linear(d.steps, d.beta_start, d.beta_end)


@dataclass
class TrainState:
    step: int
    model: LatteModel
    ema: EmaState
    opt: AdamW


def _state_arrays(state: TrainState) -> dict:
    out = {f"params/{k}": p.data for k, p in state.model.params.items()}
    out.update({f"ema/{k}": v for k, v in state.ema.shadow.items()})
    out.update({f"adam_m/{k}": v for k, v in state.opt.m.items()})
    out.update({f"adam_v/{k}": v for k, v in state.opt.v.items()})
    return out


def save_state(run: RunConfig, state: TrainState, directory) -> Path:
    meta = {"adam_t": state.opt.t, "precision": run.precision, "ema_decay": state.ema.decay}
    return save_checkpoint(directory, state.step, run.to_dict(), run.model_hash(), _state_arrays(state), meta)


def fresh_state(run: RunConfig) -> TrainState:
    model = LatteModel(run.model, seed=run.seed)
    o = run.optim
    return TrainState(
        0,
        model,
        EmaState.from_params(model.params, run.ema_decay),
        AdamW(model.params, o.lr, o.beta1, o.beta2, o.eps, o.weight_decay),
    )


def restore_state(run: RunConfig, directory) -> TrainState:
    ck = load_checkpoint(directory)
    if ck.config_hash != run.model_hash():
        raise ValueError(f"checkpoint {directory} was written for a different model/diffusion config")
    state = fresh_state(run)
    dt = state.model.params[next(iter(state.model.params))].data.dtype
    for k, p in state.model.params.items():
        p.data = ck.arrays[f"params/{k}"].astype(dt)
    state.ema.shadow = {k: v.astype(dt) for k, v in ck.group("ema").items()}
    state.opt.m = {k: v.astype(dt) for k, v in ck.group("adam_m").items()}
    state.opt.v = {k: v.astype(dt) for k, v in ck.group("adam_v").items()}
    state.opt.t = int(ck.meta.get("adam_t", ck.step))
    state.step = ck.step
    return state


def checkpoint_dir(run: RunConfig, step: int) -> Path:
    return Path(run.output_dir) / "checkpoints" / f"step_{step:07d}"


def latest_checkpoint(output_dir) -> Path | None:
    root = Path(output_dir) / "checkpoints"
    if not root.is_dir():
        return None
    found = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("step_") and (p / "manifest.json").is_file())
    return found[-1] if found else None


def _rewrite_metrics(path: Path, upto: int) -> None:
    """Drop rows at or beyond ``upto`` so a resumed run appends cleanly."""
    if not path.exists():
        return
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh)][1:]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        w.writerows(r for r in rows if int(r[0]) < upto)


def train_step(run: RunConfig, state: TrainState, schedule: DiffusionSchedule, batch) -> tuple[float, float]:
    step = state.step
    rng = np.random.default_rng([run.seed, step, 1])
    x = batch.latents
    t = rng.integers(1, schedule.num_steps + 1, size=x.shape[0])
    eps = rng.standard_normal(x.shape)
    y = batch.labels if run.model.num_classes else None
    total, l_simple, l_vlb = training_losses(
        state.model, schedule, x, t, eps, y, batch.temporal_valid, run.diffusion.vlb_weight
    )
    grads = backward(total, state.model.params)
    state.opt.step(state.model.params, grads)
    for k, p in state.model.params.items():
        if not np.isfinite(p.data).all():
            raise NonFiniteError("adamw", f"parameter {k}")
    ema_update(state.ema, state.model.params)
    state.step += 1
    return l_simple.item(), l_vlb.item()


def train(run: RunConfig, resume: bool = True, max_steps: int | None = None) -> TrainState:
    """Train to ``run.steps`` (or stop after ``max_steps`` further steps), checkpointing as configured.

    Returns the final state. Metrics go to ``<output_dir>/metrics.csv``.
    """
    out = Path(run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with precision(run.precision):
        latest = latest_checkpoint(out) if resume else None
        state = restore_state(run, latest) if latest else fresh_state(run)
        if latest:
            log.info("resuming from %s at step %d", latest, state.step)
        run.save(out / "config.json")
        schedule = schedule_for(run)
        dataset = build_dataset(run)
        metrics = out / "metrics.csv"
        _rewrite_metrics(metrics, state.step) if latest else metrics.write_text(",".join(METRICS_HEADER) + "\n")
        if state.step == 0:
            save_state(run, state, checkpoint_dir(run, 0))
        end = run.steps if max_steps is None else min(run.steps, state.step + max_steps)
        with metrics.open("a", newline="") as fh:
            writer = csv.writer(fh)
            for step, batch in prefetch(lambda s: dataset.batch(s, run.batch_size), range(state.step, end)):
                t0 = time.perf_counter()
                try:
                    l_simple, l_vlb = train_step(run, state, schedule, batch)
                except NonFiniteError as exc:
                    raise TrainingDiverged(step, str(exc)) from exc
                wall_ms = (time.perf_counter() - t0) * 1000.0
                if step % run.log_every == 0:
                    writer.writerow([step, repr(l_simple), repr(l_vlb), f"{wall_ms:.1f}"])
                    fh.flush()
                if state.step % run.ckpt_every == 0 or state.step == run.steps:
                    save_state(run, state, checkpoint_dir(run, state.step))
        if state.step == run.steps and not checkpoint_dir(run, state.step).exists():
            save_state(run, state, checkpoint_dir(run, state.step))
    return state


def read_metrics(path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in METRICS_HEADER}
