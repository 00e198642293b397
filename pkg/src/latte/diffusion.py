"""Gaussian diffusion: schedule, forward corruption, losses, ancestral sampling, EMA.

Timesteps are 1-based throughout (``t`` in ``[1, T]``); arrays indexed by
step use ``t - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import NonFiniteError, Tensor, as_tensor, exp, get_dtype, mean, mul, square, sub

Denoiser = Callable[[np.ndarray, np.ndarray, np.ndarray | None], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if not ((b > 0) & (b < 1)).all():
            raise ValueError("every beta must lie in (0, 1)")
        object.__setattr__(self, "betas", b)
        alphas = 1.0 - b
        alpha_bar = np.cumprod(alphas)
        alpha_bar_prev = np.append(1.0, alpha_bar[:-1])
        post_var = b * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
        # the t=1 posterior variance is 0; clip it to the next step's value (or beta_1 when T=1)
        clip_first = post_var[1] if b.size > 1 else b[0]
        post_log_var = np.log(np.append(clip_first, post_var[1:]))
        for name, value in (
            ("alphas", alphas),
            ("alpha_bar", alpha_bar),
            ("alpha_bar_prev", alpha_bar_prev),
            ("posterior_variance", post_var),
            ("posterior_log_variance_clipped", post_log_var),
            ("posterior_mean_coef1", b * np.sqrt(alpha_bar_prev) / (1.0 - alpha_bar)),
            ("posterior_mean_coef2", (1.0 - alpha_bar_prev) * np.sqrt(alphas) / (1.0 - alpha_bar)),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def linear(cls, num_steps: int = 1000, beta_start: float | None = None, beta_end: float | None = None):
        """Linear betas, 1e-4 to 2e-2 at T=1000; rescaled by 1000/T for other T."""
        if num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        scale = 1000.0 / num_steps
        start = beta_start if beta_start is not None else 1e-4 * scale
        end = beta_end if beta_end is not None else 2e-2 * scale
        return cls(np.clip(np.linspace(start, end, num_steps), 1e-8, 0.999))

    @property
    def num_steps(self) -> int:
        return self.betas.size

    def index(self, t) -> np.ndarray:
        t = np.asarray(t)
        if (t < 1).any() or (t > self.num_steps).any():
            raise ValueError(f"timestep outside [1, {self.num_steps}]")
        return t.astype(np.int64) - 1

    def posterior(self, z0, zt, t) -> tuple[np.ndarray, np.ndarray]:
        """Mean and clipped log-variance of q(z_{t-1} | z_t, z_0)."""
        i = _expand(self.index(t), np.ndim(z0))
        mean_ = self.posterior_mean_coef1[i] * z0 + self.posterior_mean_coef2[i] * zt
        return mean_, np.broadcast_to(self.posterior_log_variance_clipped[i], np.shape(mean_))

    def model_log_variance(self, var_raw, t):
        """Interpolate log-variance between the posterior variance (v=-1) and beta_t (v=+1)."""
        i = _expand(self.index(t), np.ndim(var_raw.data if isinstance(var_raw, Tensor) else var_raw))
        lo = self.posterior_log_variance_clipped[i]
        hi = np.log(self.betas[i])
        frac = (var_raw + 1.0) * 0.5
        return frac * hi + (1.0 - frac) * lo if not isinstance(var_raw, Tensor) else mul(frac, hi - lo) + lo

    def mean_from_eps(self, zt, eps, t) -> np.ndarray:
        """Posterior mean with the clean sample replaced by its noise-based estimate."""
        i = _expand(self.index(t), np.ndim(zt))
        ab = self.alpha_bar[i]
        x0 = np.sqrt(1.0 / ab) * zt - np.sqrt(1.0 / ab - 1.0) * eps
        return self.posterior_mean_coef1[i] * x0 + self.posterior_mean_coef2[i] * zt


def _expand(idx: np.ndarray, ndim: int) -> np.ndarray:
    """Broadcast per-sample indices over trailing data dims."""
    idx = np.asarray(idx)
    if idx.ndim == 0:
        return idx
    return idx.reshape(idx.shape + (1,) * (ndim - idx.ndim))


def q_sample(schedule: DiffusionSchedule, z0, t, eps) -> np.ndarray:
    """sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    z0, eps = np.asarray(z0), np.asarray(eps)
    if z0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} != sample shape {z0.shape}")
    i = _expand(schedule.index(t), z0.ndim)
    ab = schedule.alpha_bar[i]
    return (np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps).astype(z0.dtype if z0.dtype.kind == "f" else get_dtype())


# ---------------------------------------------------------------- losses


def normal_kl(mean1, logvar1, mean2, logvar2):
    """KL(N(mean1, exp(logvar1)) || N(mean2, exp(logvar2))), elementwise."""
    if isinstance(logvar2, Tensor) or isinstance(mean2, Tensor):
        diff = sub(mean1, mean2)
        return mul(0.5, sub(exp(sub(logvar1, logvar2)), 1.0) + sub(logvar2, logvar1) + mul(square(diff), exp(-as_tensor(logvar2))))
    return 0.5 * (-1.0 + logvar2 - logvar1 + np.exp(logvar1 - logvar2) + (mean1 - mean2) ** 2 * np.exp(-logvar2))


def gaussian_nll(x, mean_, logvar):
    """-log N(x; mean, exp(logvar)), elementwise."""
    if isinstance(logvar, Tensor):
        return mul(0.5, (as_tensor(logvar) + math.log(2 * math.pi)) + mul(square(sub(x, mean_)), exp(-as_tensor(logvar))))
    return 0.5 * (math.log(2 * math.pi) + logvar + (x - mean_) ** 2 * np.exp(-logvar))


def _model_out(model, zt, t, y, n_valid):
    if n_valid is None:
        return model(zt, t, y)
    return model(zt, t, y, n_valid=n_valid)


def vlb_terms(schedule: DiffusionSchedule, z0, zt, t, eps_pred: Tensor, var_raw: Tensor) -> Tensor:
    """Per-element variational bound term; the mean path is detached.

    KL(q(z_{t-1}|z_t,z_0) || p(z_{t-1}|z_t)) for t > 1 and -log p(z_0|z_1) at t = 1.
    """
    t = np.broadcast_to(np.asarray(t), (np.shape(z0)[0],))
    true_mean, true_logvar = schedule.posterior(z0, zt, t)
    model_mean = schedule.mean_from_eps(zt, eps_pred.data, t)  # no gradient into the mean path
    model_logvar = schedule.model_log_variance(var_raw, t)
    dt = get_dtype()
    kl = normal_kl(true_mean.astype(dt), true_logvar.astype(dt), model_mean.astype(dt), model_logvar)
    if (t > 1).all():
        return kl
    nll = gaussian_nll(np.asarray(z0, dtype=dt), model_mean.astype(dt), model_logvar)
    first = _expand((t == 1).astype(dt), np.ndim(z0))
    return mul(kl, 1.0 - first) + mul(nll, first)


def loss_simple(model, schedule: DiffusionSchedule, z0, t, eps, y=None, n_valid=None) -> Tensor:
    """Mean squared error between the injected noise and the model's prediction."""
    zt = q_sample(schedule, z0, t, eps)
    eps_pred, _ = _model_out(model, zt, t, y, n_valid)
    return mean(square(sub(eps, eps_pred)))


def loss_vlb(model, schedule: DiffusionSchedule, z0, t, eps, y=None, n_valid=None) -> Tensor:
    zt = q_sample(schedule, z0, t, eps)
    eps_pred, var_raw = _model_out(model, zt, t, y, n_valid)
    return mean(vlb_terms(schedule, z0, zt, t, eps_pred, var_raw))


def training_losses(model, schedule, z0, t, eps, y=None, n_valid=None, vlb_weight: float = 0.001):
    """(total, l_simple, l_vlb) from one forward pass; total = l_simple + vlb_weight * l_vlb."""
    zt = q_sample(schedule, z0, t, eps)
    eps_pred, var_raw = _model_out(model, zt, t, y, n_valid)
    l_simple = mean(square(sub(eps, eps_pred)))
    l_vlb = mean(vlb_terms(schedule, z0, zt, t, eps_pred, var_raw))
    return l_simple + mul(l_vlb, vlb_weight), l_simple, l_vlb


# ---------------------------------------------------------------- sampling


def model_denoiser(model, n_valid: int | None = None) -> Denoiser:
    """Adapt a :class:`LatteModel` to the array-in/array-out sampler interface."""

    def run(z, t, y):
        eps, var_raw = _model_out(model, z, t, y, n_valid)
        return eps.data, var_raw.data

    return run


def p_sample_step(schedule: DiffusionSchedule, denoiser: Denoiser, z, t: int, y, noise) -> np.ndarray:
    tt = np.full((z.shape[0],), t)
    eps, var_raw = denoiser(z, tt, y)
    mean_ = schedule.mean_from_eps(z, np.asarray(eps), tt)
    if t == 1:
        return mean_
    logvar = schedule.model_log_variance(np.asarray(var_raw), tt)
    return mean_ + np.exp(0.5 * logvar) * noise


def p_sample_loop(
    denoiser: Denoiser,
    schedule: DiffusionSchedule,
    shape: tuple[int, ...],
    y=None,
    seed: int = 0,
    progress: Callable[[int], None] | None = None,
) -> np.ndarray:
    """Ancestral sampling from pure noise at t=T down to t=1; the last step adds no noise."""
    rng = np.random.default_rng(seed)
    dt = get_dtype()
    z = rng.standard_normal(shape).astype(dt)
    for t in range(schedule.num_steps, 0, -1):
        noise = rng.standard_normal(shape).astype(dt)
        z = p_sample_step(schedule, denoiser, z, t, y, noise).astype(dt)
        if not np.isfinite(z).all():
            raise NonFiniteError("p_sample", f"at step t={t}")
        if progress is not None:
            progress(t)
    return z


# ---------------------------------------------------------------- EMA


@dataclass
class EmaState:
    shadow: dict[str, np.ndarray]
    decay: float = 0.9999

    @classmethod
    def from_params(cls, params: dict, decay: float = 0.9999) -> EmaState:
        if not 0.0 < decay < 1.0:
            raise ValueError("EMA decay must lie in (0, 1)")
        return cls({k: np.array(_arr(v), copy=True) for k, v in params.items()}, decay)


def _arr(v) -> np.ndarray:
    return v.data if isinstance(v, Tensor) else np.asarray(v)


def ema_update(ema: EmaState, params: dict) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * param, in place; returns ``ema``."""
    if set(params) != set(ema.shadow):
        raise ValueError("EMA shadow and parameters have different names")
    d = ema.decay
    for name, p in params.items():
        arr = _arr(p)
        if arr.shape != ema.shadow[name].shape:
            raise ValueError(f"{name}: shape {arr.shape} != shadow {ema.shadow[name].shape}")
        ema.shadow[name] = d * ema.shadow[name] + (1.0 - d) * arr
    return ema
