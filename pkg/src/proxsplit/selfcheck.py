"""Numerical self-checks run by ``proxsplit selfcheck``.

Each check returns (name, passed, detail). They use float64 throughout and are
sized to finish in a few seconds.
"""

from __future__ import annotations

import numpy as np

from . import neural
from .prox import gradient_step_prox_approx, quadratic_prox_exact, soft_threshold
from .psn import PsnConfig, init_model, multiscale_loss, psn_backward, psn_forward
from .tensor import DownsampleOperator, Kernel, conv2d, conv2d_adjoint


def check_adjoint(trials=25, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        kh, kw = rng.choice([1, 3, 5], 2)
        k = Kernel(rng.standard_normal((int(kh), int(kw))))
        x = rng.standard_normal((1, 1, 9, 8))
        kx = conv2d(x, k)
        g = rng.standard_normal(kx.shape)
        err = abs(np.vdot(kx, g) - np.vdot(x, conv2d_adjoint(g, k))) / (np.linalg.norm(kx) * np.linalg.norm(g))
        worst = max(worst, err)
    d = DownsampleOperator(2)
    x = rng.standard_normal((1, 1, 12, 10))
    g = rng.standard_normal((1, 1, 6, 5))
    dx = d.apply(x)
    worst = max(worst, abs(np.vdot(dx, g) - np.vdot(x, d.adjoint(g))) / (np.linalg.norm(dx) * np.linalg.norm(g)))
    return "adjoint <Kx,g> = <x,K^T g>", worst <= 1e-6, f"worst relative error {worst:.2e}"


def _grid_argmin(objective, lo=-5.0, hi=5.0, step=1e-4):
    z = np.arange(lo, hi + step / 2, step)
    return z[np.argmin(objective(z))]


def check_prox_oracles(count=50, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        x = rng.uniform(-3, 3)
        lam, alpha, beta = rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0.5, 4)
        zs = _grid_argmin(lambda z: beta * (z - x) ** 2 + lam * np.abs(z))
        zq = _grid_argmin(lambda z: beta * (z - x) ** 2 + alpha * z * z)
        worst = max(worst, abs(soft_threshold(x, lam, beta) - zs), abs(quadratic_prox_exact(x, alpha, beta) - zq))
    return "prox vs grid search", worst <= 1e-4, f"worst deviation {worst:.2e}"


def beta_slope(constant: str, betas=(125.0, 250.0, 500.0, 1000.0), alpha=1.0, seed=2):
    x = np.random.default_rng(seed).standard_normal(64)
    errs = []
    for b in betas:
        approx = gradient_step_prox_approx(x, lambda z: 2 * alpha * z, b, constant)
        errs.append(np.linalg.norm(approx - quadratic_prox_exact(x, alpha, b)) / np.linalg.norm(x))
    return float(np.polyfit(np.log(betas), np.log(errs), 1)[0]), errs


def check_beta_convergence():
    s_cons, _ = beta_slope("consistent")
    s_two, _ = beta_slope("two_over_beta")
    ok = abs(s_cons + 2) <= 0.2 and abs(s_two + 1) <= 0.2
    return "beta convergence of gradient-step prox", ok, f"slopes consistent {s_cons:.3f}, 2/beta {s_two:.3f}"


def fd_relative_error(analytic, numeric, floor=1e-8):
    """Elementwise |a - n| / max(|a|, |n|, floor); the floor absorbs FD noise on zero gradients."""
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)))


def check_layer_gradients(seed=3, eps=1e-5):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for spec in (neural.conv(2, 3), neural.relu(2), neural.batchnorm(2), neural.transposed_conv(2, 2)):
        store = neural.init_params([spec], seed)
        for k in store.params:
            store.params[k] = store.params[k] + 0.1 * rng.standard_normal(store.params[k].shape)
        p = store.view("0")
        x = rng.standard_normal((2, 2, 5, 5))
        out, cache = neural.layer_forward(spec, p, x, "train")
        gout = rng.standard_normal(out.shape)
        gx, _ = neural.layer_backward(spec, p, cache, gout)
        num = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            o = x[i]
            x[i] = o + eps
            a = np.vdot(neural.layer_forward(spec, p, x, "train")[0], gout)
            x[i] = o - eps
            b = np.vdot(neural.layer_forward(spec, p, x, "train")[0], gout)
            x[i] = o
            num[i] = (a - b) / (2 * eps)
        worst = max(worst, fd_relative_error(gx, num))
    return "layer input gradients vs finite differences", worst <= 1e-4, f"worst relative error {worst:.2e}"


def check_network_gradient(seed=4, eps=1e-6, per_tensor=2):
    cfg = PsnConfig(stages=2, block_depth=2, channels=4, scales=2, precision=64)
    model = init_model(cfg, seed)
    rng = np.random.default_rng(seed)
    x_gt = rng.random((2, 1, 8, 8))
    y = x_gt + 0.1 * rng.standard_normal(x_gt.shape)
    res = psn_forward(model, y, mode="train", keep_cache=True)
    _, gouts = multiscale_loss(res.per_scale, x_gt)
    grads = psn_backward(model, res, gouts)

    def loss():
        return multiscale_loss(psn_forward(model, y, mode="train").per_scale, x_gt)[0]

    worst = 0.0
    for name, p in model.store.params.items():
        flat = p.reshape(-1)
        for i in rng.choice(flat.size, min(per_tensor, flat.size), replace=False):
            o = flat[i]
            flat[i] = o + eps
            a = loss()
            flat[i] = o - eps
            b = loss()
            flat[i] = o
            worst = max(worst, fd_relative_error(grads[name].reshape(-1)[i], (a - b) / (2 * eps)))
    return "end-to-end network gradient vs finite differences", worst <= 1e-3, f"worst relative error {worst:.2e}"


CHECKS = (check_adjoint, check_prox_oracles, check_beta_convergence, check_layer_gradients, check_network_gradient)


def run_all():
    return [check() for check in CHECKS]
