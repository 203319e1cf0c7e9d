"""Proximal operators and the half-quadratic splitting solver.

All proximal maps here minimize ``beta * ||z - x||^2 + h(z)`` over z.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import ShapeError, as_operator


def soft_threshold(x, lam: float, beta: float):
    """Exact prox of lam * |z|: shrink towards zero by lam / (2 beta)."""
    if lam < 0 or beta <= 0:
        raise ValueError("need lam >= 0 and beta > 0")
    x = np.asarray(x)
    t = lam / (2.0 * beta)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def quadratic_prox_exact(x, alpha: float, beta: float):
    """Exact prox of alpha * ||z||^2, i.e. beta x / (beta + alpha)."""
    if alpha < 0 or beta <= 0:
        raise ValueError("need alpha >= 0 and beta > 0")
    return np.asarray(x) * (beta / (beta + alpha))


# step size multiplying grad h for each constant convention
_STEP = {
    "two_over_beta": lambda beta: 2.0 / beta,
    "consistent": lambda beta: 1.0 / (2.0 * beta),
}
_STEP["paper"] = _STEP["two_over_beta"]


def gradient_step_prox_approx(x, grad_h: Callable, beta: float, constant: str = "two_over_beta"):
    """Approximate prox_{h,beta}(x) by a single gradient step on h.

    ``two_over_beta`` uses step 2/beta; ``consistent`` uses 1/(2 beta), the step that
    falls out of the second-order expansion of beta ||z - x||^2 + h(z).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if constant not in _STEP:
        raise ValueError(f"constant must be one of {sorted(_STEP)}, got {constant!r}")
    x = np.asarray(x)
    return x - _STEP[constant](beta) * grad_h(x)


def data_fidelity_step(v, y, k, beta: float):
    """x = v - (2/beta) K^T (K v - y)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    op = as_operator(k)
    v = np.asarray(v)
    kv = op.apply(v)
    y = np.asarray(y, dtype=v.dtype)
    try:
        resid = kv - np.broadcast_to(y, kv.shape)
    except ValueError as err:
        raise ShapeError(f"K v has shape {kv.shape}, measurement has {y.shape}") from err
    step = v.dtype.type(2.0 / beta)
    return v - step * op.adjoint(resid)


def data_fidelity_step_vjp(g, k, beta: float):
    """Vector-Jacobian product of data_fidelity_step in v: g - (2/beta) K^T K g."""
    op = as_operator(k)
    g = np.asarray(g)
    return g - g.dtype.type(2.0 / beta) * op.adjoint(op.apply(g))


class ProxOperator:
    """Abstract per-stage proximal map x -> v."""

    def apply(self, x, stage: int):
        raise NotImplementedError


class IdentityProx(ProxOperator):
    def apply(self, x, stage):
        return np.array(x, copy=True)


@dataclass
class SoftThreshold(ProxOperator):
    lam: float
    beta: float

    def apply(self, x, stage):
        return soft_threshold(x, self.lam, self.beta)


@dataclass
class QuadraticProx(ProxOperator):
    alpha: float
    beta: float

    def apply(self, x, stage):
        return quadratic_prox_exact(x, self.alpha, self.beta)


@dataclass
class GradientStepProx(ProxOperator):
    grad_h: Callable
    beta: float
    constant: str = "two_over_beta"

    def apply(self, x, stage):
        return gradient_step_prox_approx(x, self.grad_h, self.beta, self.constant)


@dataclass(frozen=True)
class HqsConfig:
    beta: float = 8.0
    stages: int = 3

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.stages < 1:
            raise ValueError("need at least one stage")


def hqs_solve(y, k, prox_g: ProxOperator, config: HqsConfig, x0=None):
    """Run S alternating prior / data-fidelity updates.

    Returns the final estimate and the trace [(v_1, x_1), ..., (v_S, x_S)].
    x0 defaults to y (the denoising initialization).
    """
    op = as_operator(k)
    x = np.array(y if x0 is None else x0, copy=True)
    trace = []
    for t in range(1, config.stages + 1):
        v = prox_g.apply(x, t)
        if v.shape != x.shape:
            raise ShapeError(f"prox at stage {t} changed shape {x.shape} -> {v.shape}")
        x = data_fidelity_step(v, y, op, config.beta)
        trace.append((v, x))
    return x, trace
