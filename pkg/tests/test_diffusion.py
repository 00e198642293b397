from __future__ import annotations

import math

import numpy as np
import pytest

from latte import tensor as T
from latte.backbone import LatteModel, init_params
from latte.diffusion import (
    DiffusionSchedule,
    EmaState,
    ema_update,
    loss_simple,
    loss_vlb,
    normal_kl,
    p_sample_loop,
    q_sample,
    training_losses,
    vlb_terms,
)
from latte.tensor import NonFiniteError, Tensor

from conftest import tiny_model_config


def test_schedule_shape_and_monotone():
    s = DiffusionSchedule.linear(1000)
    assert s.betas[0] == pytest.approx(1e-4) and s.betas[-1] == pytest.approx(2e-2)
    assert np.all(np.diff(s.alpha_bar) < 0)
    post = np.exp(s.posterior_log_variance_clipped)
    assert np.all(post > 0) and np.all(post <= s.betas * (1 + 1e-12))
    with pytest.raises(ValueError):
        s.index(0)
    with pytest.raises(ValueError):
        s.index(1001)


def test_q_sample_examples():
    s = DiffusionSchedule(np.array([0.75]))  # alpha_bar_1 = 0.25
    z = q_sample(s, np.zeros((2, 3)), 1, np.ones((2, 3)))
    np.testing.assert_allclose(z, math.sqrt(0.75), atol=1e-12)
    assert z[0, 0] == pytest.approx(0.86603, abs=1e-5)
    tiny = DiffusionSchedule(np.array([1e-12]))
    x0 = np.random.default_rng(0).standard_normal(5)
    np.testing.assert_allclose(q_sample(tiny, x0, 1, np.ones(5)), x0, atol=1e-5)
    big = DiffusionSchedule(np.array([1 - 1e-12]))
    np.testing.assert_allclose(q_sample(big, x0, 1, np.ones(5)), 1.0, atol=1e-5)
    with pytest.raises(ValueError):
        q_sample(s, np.zeros(3), 2, np.zeros(3))


def test_kl_analytic_and_zero():
    assert normal_kl(0.0, 0.0, 1.0, 0.0) == pytest.approx(0.5)
    assert normal_kl(0.3, -0.7, 0.3, -0.7) == 0.0


def test_kl_zero_when_model_matches_posterior():
    with T.precision("f64"):
        s = DiffusionSchedule.linear(50)
        rng = np.random.default_rng(0)
        z0 = rng.standard_normal((3, 4))
        eps = rng.standard_normal((3, 4))
        t = np.array([2, 17, 50])
        zt = q_sample(s, z0, t, eps)
        terms = vlb_terms(s, z0, zt, t, Tensor(eps), Tensor(-np.ones((3, 4))))
    np.testing.assert_allclose(terms.data, 0.0, atol=1e-10)


def test_vlb_non_negative_for_t_above_one():
    with T.precision("f64"):
        s = DiffusionSchedule.linear(20)
        rng = np.random.default_rng(1)
        for _ in range(20):
            z0, eps = rng.standard_normal((2, 5)), rng.standard_normal((2, 5))
            t = rng.integers(2, 21, size=2)
            zt = q_sample(s, z0, t, eps)
            terms = vlb_terms(s, z0, zt, t, Tensor(rng.standard_normal((2, 5))), Tensor(rng.uniform(-1.5, 1.5, (2, 5))))
            assert terms.data.min() >= 0.0


def test_loss_simple_examples():
    s = DiffusionSchedule.linear(10)
    rng = np.random.default_rng(2)
    z0, eps = rng.standard_normal((2, 6)), rng.standard_normal((2, 6))
    with T.precision("f64"):

        def oracle(zt, t, y):
            return Tensor(eps), Tensor(np.zeros_like(eps))

        assert loss_simple(oracle, s, z0, 3, eps).item() == 0.0

        def zero(zt, t, y):
            return Tensor(np.zeros_like(eps)), Tensor(np.zeros_like(eps))

        assert loss_simple(zero, s, z0, 3, eps).item() == pytest.approx(float(np.mean(eps**2)), abs=0.0)


def test_loss_simple_matches_recomputation_on_tiny_model():
    with T.precision("f64"):
        cfg = tiny_model_config()
        model = LatteModel(cfg, init_params(cfg, seed=1, zero_gates=False))
        s = DiffusionSchedule.linear(10)
        rng = np.random.default_rng(3)
        z0 = rng.standard_normal((2, 4) + cfg.latent)
        eps = rng.standard_normal(z0.shape)
        t = np.array([1, 7])
        loss = loss_simple(model, s, z0, t, eps).item()
        ab = s.alpha_bar[t - 1].reshape(2, 1, 1, 1, 1)
        pred = model(np.sqrt(ab) * z0 + np.sqrt(1 - ab) * eps, t)[0].data
    assert loss == pytest.approx(float(np.sum((eps - pred) ** 2) / eps.size), rel=1e-12)


def test_stop_gradient_through_mean_path():
    with T.precision("f64"):
        s = DiffusionSchedule.linear(10)
        rng = np.random.default_rng(4)
        z0, eps = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
        t = np.array([1, 6])
        zt = q_sample(s, z0, t, eps)
        eps_pred = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        var_raw = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        grads = T.backward(T.mean(vlb_terms(s, z0, zt, t, eps_pred, var_raw)), {"eps": eps_pred, "var": var_raw})
    assert np.all(grads["eps"] == 0.0)
    assert np.any(grads["var"] != 0.0)


def test_stop_gradient_on_decoder_columns():
    with T.precision("f64"):
        cfg = tiny_model_config()
        model = LatteModel(cfg, init_params(cfg, seed=2, zero_gates=False))
        s = DiffusionSchedule.linear(10)
        rng = np.random.default_rng(5)
        z0 = rng.standard_normal((2, 4) + cfg.latent)
        loss = loss_vlb(model, s, z0, np.array([1, 8]), rng.standard_normal(z0.shape))
        grads = T.backward(loss, model.params)
    c = cfg.latent[2]
    channel = np.arange(grads["final.linear.bias"].size) % (2 * c)
    assert np.all(grads["final.linear.weight"][:, channel < c] == 0.0)
    assert np.all(grads["final.linear.bias"][channel < c] == 0.0)
    assert np.any(grads["final.linear.bias"][channel >= c] != 0.0)


def test_training_losses_weighting():
    with T.precision("f64"):
        cfg = tiny_model_config()
        model = LatteModel(cfg, init_params(cfg, seed=3, zero_gates=False))
        s = DiffusionSchedule.linear(10)
        rng = np.random.default_rng(6)
        z0 = rng.standard_normal((1, 4) + cfg.latent)
        eps = rng.standard_normal(z0.shape)
        total, ls, lv = training_losses(model, s, z0, np.array([4]), eps, vlb_weight=0.001)
    assert total.item() == pytest.approx(ls.item() + 0.001 * lv.item(), rel=1e-14)


def test_sampler_zero_model_single_step():
    s = DiffusionSchedule.linear(1)

    def zero(z, t, y):
        return np.zeros_like(z), np.zeros_like(z)

    with T.precision("f64"):
        out = p_sample_loop(zero, s, (2, 3), seed=11)
    z1 = np.random.default_rng(11).standard_normal((2, 3))
    np.testing.assert_allclose(out, z1 / math.sqrt(1 - s.betas[0]), atol=1e-12)


def test_sampler_hand_trace_two_steps():
    s = DiffusionSchedule.linear(2)
    b1, b2 = 0.05, 0.999  # linear at T=2: 1e-4 * 500 and 2e-2 * 500 clipped
    np.testing.assert_allclose(s.betas, [b1, b2])
    outputs = {2: (0.3, 0.5), 1: (-0.2, 0.0)}

    def model(z, t, y):
        e, v = outputs[int(t[0])]
        return np.full_like(z, e), np.full_like(z, v)

    with T.precision("f64"):
        got = p_sample_loop(model, s, (1,), seed=4)
    rng = np.random.default_rng(4)
    z = rng.standard_normal(1)[0]
    n2 = rng.standard_normal(1)[0]
    a1, a2 = 1 - b1, 1 - b2
    ab1, ab2 = a1, a1 * a2
    # t = 2
    x0 = (z - math.sqrt(1 - ab2) * 0.3) / math.sqrt(ab2)
    mean = b2 * math.sqrt(ab1) / (1 - ab2) * x0 + (1 - ab1) * math.sqrt(a2) / (1 - ab2) * z
    post = b2 * (1 - ab1) / (1 - ab2)
    logvar = 0.75 * math.log(b2) + 0.25 * math.log(post)
    z = mean + math.exp(0.5 * logvar) * n2
    # t = 1, no noise
    x0 = (z + math.sqrt(1 - ab1) * 0.2) / math.sqrt(ab1)
    z = b1 / (1 - ab1) * x0
    assert got[0] == pytest.approx(z, rel=1e-12)


def test_sampler_determinism_and_nan_step():
    cfg = tiny_model_config()
    model = LatteModel(cfg, init_params(cfg, seed=0, zero_gates=False))
    from latte.diffusion import model_denoiser

    s = DiffusionSchedule.linear(5)
    a = p_sample_loop(model_denoiser(model), s, (1, 4) + cfg.latent, seed=3)
    b = p_sample_loop(model_denoiser(model), s, (1, 4) + cfg.latent, seed=3)
    assert np.array_equal(a, b)

    def bad(z, t, y):
        return np.full_like(z, np.inf if t[0] == 3 else 0.0), np.zeros_like(z)

    with pytest.raises(NonFiniteError, match="t=3"):
        p_sample_loop(bad, s, (2,), seed=0)


def test_sampler_matches_gaussian_data_with_exact_posterior_model():
    m, sd, n = 0.5, 0.3, 20000
    s = DiffusionSchedule.linear(1000)

    def exact(z, t, y):
        ab = s.alpha_bar[t - 1][:, None]
        var_t = ab * sd**2 + 1 - ab
        eps = np.sqrt(1 - ab) * (z - np.sqrt(ab) * m) / var_t
        var0 = sd**2 * (1 - ab) / var_t
        i = t - 1
        want = np.exp(s.posterior_log_variance_clipped[i])[:, None] + s.posterior_mean_coef1[i][:, None] ** 2 * var0
        lo = s.posterior_log_variance_clipped[i][:, None]
        hi = np.log(s.betas[i])[:, None]
        return eps, 2 * (np.log(want) - lo) / (hi - lo) - 1

    with T.precision("f64"):
        x = p_sample_loop(exact, s, (n, 1), seed=0)[:, 0]
    assert abs(x.mean() - m) < 3 * sd / math.sqrt(n)
    assert abs(x.var() - sd**2) < 3 * sd**2 * math.sqrt(2 / (n - 1))


def test_ema_examples():
    e = ema_update(EmaState({"w": np.zeros(3)}, 0.9), {"w": np.ones(3)})
    np.testing.assert_allclose(e.shadow["w"], 0.1)
    fixed = ema_update(EmaState({"w": np.full(2, 0.4)}, 0.9), {"w": np.full(2, 0.4)})
    np.testing.assert_allclose(fixed.shadow["w"], 0.4)
    d, s0, p = 0.7, 2.0, -1.0
    e = EmaState({"w": np.array([s0])}, d)
    for _ in range(3):
        ema_update(e, {"w": np.array([p])})
    assert e.shadow["w"][0] == pytest.approx(d**3 * s0 + (1 - d**3) * p, rel=1e-14)
    with pytest.raises(ValueError):
        ema_update(e, {"w": np.zeros(2)})
