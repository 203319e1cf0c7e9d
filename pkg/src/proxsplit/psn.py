"""Proximal Splitting Network: learned per-stage proximal blocks unrolled with
the half-quadratic data-fidelity step, optionally over a multi-scale pyramid.

Level 0 is full resolution; level l works at 1/2**l. The coarsest level runs
first. Each finer level starts from its own downsampled input plus the learned
2x upsampling of the coarser level's correction (its output minus its input),
so an untrained identity network passes x0 through unchanged. Coarse levels
pull toward their downsampled initial estimate; only level 0 uses the true K
and y.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import neural
from .degradation import DegradationSpec, add_gaussian_noise, apply_forward_model, initial_estimate
from .neural import ParamStore, TrainConfig, adam_step, sequential_backward, sequential_forward
from .prox import ProxOperator, data_fidelity_step, data_fidelity_step_vjp
from .tensor import (
    ConfigError,
    IdentityOperator,
    Kernel,
    ShapeError,
    as_operator,
    bicubic_resample,
    build_target_pyramid,
    resize,
)

TASKS = ("denoise", "superres")
# the last conv of each block starts at 0.1 x He so every block begins near the identity
BLOCK_OUTPUT_INIT_SCALE = 0.1
FIDELITY = ("hqs", "residual")


@dataclass
class PsnConfig:
    stages: int = 3
    beta: float = 8.0
    scales: int = 2
    block_depth: int = 10
    channels: int = 64
    input_channels: int = 1
    task: str = "denoise"
    sr_scale: int = 1
    known_sigma: float | None = None
    sigma_range: tuple | None = None
    residual_skip: bool = True
    fidelity: str = "hqs"
    precision: int = 32

    def __post_init__(self):
        if self.stages < 1:
            raise ConfigError("stages must be >= 1")
        if self.scales < 1:
            raise ConfigError("scales must be >= 1")
        if self.block_depth < 2:
            raise ConfigError("block_depth must be >= 2")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.input_channels not in (1, 3):
            raise ConfigError("input_channels must be 1 or 3")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.task == "denoise" and self.sr_scale != 1:
            raise ConfigError("denoising models use sr_scale = 1")
        if self.task == "superres" and self.sr_scale not in (2, 3, 4):
            raise ConfigError("super-resolution scale must be 2, 3 or 4")
        if self.fidelity not in FIDELITY:
            raise ConfigError(f"fidelity must be one of {FIDELITY}")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if self.sigma_range is not None:
            self.sigma_range = tuple(float(s) for s in self.sigma_range)

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    @classmethod
    def desk(cls, **overrides) -> "PsnConfig":
        """Reduced-size defaults that train on a desktop CPU in minutes."""
        base = dict(stages=3, scales=2, block_depth=4, channels=16)
        base.update(overrides)
        return cls(**base)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                continue
            if isinstance(val, tuple):
                val = " ".join(repr(v) for v in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "PsnConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kw = {}
        for name, raw in values.items():
            if name in ("stages", "scales", "block_depth", "channels", "input_channels", "sr_scale", "precision"):
                kw[name] = int(raw)
            elif name in ("beta", "known_sigma"):
                kw[name] = float(raw)
            elif name == "sigma_range":
                kw[name] = tuple(float(s) for s in str(raw).replace(",", " ").split())
            elif name == "residual_skip":
                kw[name] = _parse_bool(raw)
            else:
                kw[name] = str(raw)
        return cls(**kw)


def _parse_bool(raw):
    if isinstance(raw, bool):
        return raw
    s = str(raw).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def block_layers(config: PsnConfig) -> list:
    """conv+relu, then (depth - 2) x conv+relu+bn, then a conv back to image channels."""
    c, cin = config.channels, config.input_channels
    layers = [neural.conv(cin, c), neural.relu(c)]
    for _ in range(config.block_depth - 2):
        layers += [neural.conv(c, c), neural.relu(c), neural.batchnorm(c)]
    layers.append(neural.conv(c, cin))
    return layers


def block_prefix(level: int, stage: int) -> str:
    return f"block.l{level}.s{stage}."


def up_prefix(level: int) -> str:
    return f"up.l{level}."


@dataclass
class PsnModel:
    config: PsnConfig
    store: ParamStore
    block_specs: list = field(default_factory=list)
    up_specs: list = field(default_factory=list)

    @property
    def dtype(self):
        return self.config.dtype

    def n_blocks(self) -> int:
        names = {k.split(".")[1] + "." + k.split(".")[2] for k in self.store.params if k.startswith("block.")}
        return len(names)


def init_model(config: PsnConfig, seed: int = 0) -> PsnModel:
    """Independent parameters for every (level, stage) block and each upsampler."""
    specs = block_layers(config)
    ups = [neural.transposed_conv(config.input_channels, config.input_channels)]
    store = ParamStore()
    seq = np.random.SeedSequence(seed)
    n = config.scales * config.stages + config.scales - 1
    seeds = [int(s.generate_state(1)[0]) for s in seq.spawn(n)]
    i = 0
    for level in range(config.scales):
        for stage in range(1, config.stages + 1):
            prefix = block_prefix(level, stage)
            neural.init_params(specs, seeds[i], prefix, config.dtype, store)
            last = f"{prefix}{len(specs) - 1}.weight"
            store.params[last] = (store.params[last] * BLOCK_OUTPUT_INIT_SCALE).astype(config.dtype)
            i += 1
    for level in range(config.scales - 1):
        neural.init_params(ups, seeds[i], up_prefix(level), config.dtype, store)
        i += 1
    return PsnModel(config, store, specs, ups)


def zero_blocks(model: PsnModel) -> PsnModel:
    """Set every block conv weight and bias to zero (blocks become identity with the skip)."""
    for name, p in model.store.params.items():
        if name.startswith("block.") and (name.endswith(".weight") or name.endswith(".bias")):
            p[...] = 0
    return model


# --------------------------------------------------------------------------
# forward


def proximal_network(model: PsnModel, level: int, stage: int, x, mode: str = "infer"):
    """v = Gamma(x) for one block; returns (v, layer caches)."""
    out, caches = sequential_forward(model.block_specs, model.store, block_prefix(level, stage), x, mode)
    if model.config.residual_skip:
        out = out + x
    return out, caches


def proximal_block_forward(model: PsnModel, level: int, stage: int, x_prev, y, k, beta=None, mode="infer"):
    """One unrolled iteration: v = Gamma(x_prev), x = fidelity(v). Returns (v, x, caches)."""
    beta = model.config.beta if beta is None else beta
    v, caches = proximal_network(model, level, stage, x_prev, mode)
    if model.config.fidelity == "residual":
        x = v + np.asarray(y, dtype=v.dtype)
    else:
        x = data_fidelity_step(v, y, k, beta)
    return v, x, caches


class LearnedProx(ProxOperator):
    """Stage-wise learned proximal map taken from one level of a PsnModel."""

    def __init__(self, model: PsnModel, level: int = 0, mode: str = "infer"):
        self.model = model
        self.level = level
        self.mode = mode

    def apply(self, x, stage):
        return proximal_network(self.model, self.level, stage, x, self.mode)[0]


@dataclass
class PsnResult:
    final: np.ndarray
    per_scale: list  # coarse to fine, finest last
    trace: list  # executed operations, in order
    stages: dict  # level -> [(v_t, x_t), ...]
    cache: dict | None = None

    @property
    def pyramid(self) -> list:
        """Per-level outputs ordered fine to coarse, like build_target_pyramid."""
        return self.per_scale[::-1]


def default_x0(model: PsnModel, y):
    cfg = model.config
    if cfg.task == "superres":
        return bicubic_resample(y, cfg.sr_scale, "up")
    return np.array(y, copy=True)


def default_operator(model: PsnModel, k=None):
    if k is not None:
        return as_operator(k)
    cfg = model.config
    if cfg.task == "superres":
        return DegradationSpec("superres", scale=cfg.sr_scale).operator()
    return as_operator(Kernel.delta())


def psn_forward(model: PsnModel, y, k=None, mode: str = "infer", x0=None, keep_cache: bool = False) -> PsnResult:
    """Run all levels coarse to fine; every level runs its S blocks."""
    cfg = model.config
    dt = model.dtype
    y = np.asarray(y, dtype=dt)
    op = default_operator(model, k)
    x0 = (default_x0(model, y) if x0 is None else np.asarray(x0)).astype(dt, copy=False)
    h, w = x0.shape[2:]
    div = 2 ** (cfg.scales - 1)
    if h % div or w % div:
        raise ShapeError(f"{h}x{w} input not divisible by {div} for {cfg.scales} scales")
    levels = list(range(cfg.scales - 1, -1, -1))
    x0s = {lvl: (x0 if lvl == 0 else resize(x0, h >> lvl, w >> lvl)) for lvl in levels}

    per_scale, trace, stages_out = [], [], {}
    cache = {"levels": {}, "x0": x0s} if keep_cache else None
    prev = None
    for lvl in levels:
        lcache = {}
        if prev is None:
            x = x0s[lvl]
        else:
            correction = prev - x0s[lvl + 1]
            upped, ucache = sequential_forward(model.up_specs, model.store, up_prefix(lvl), correction, mode)
            trace.append(f"L{lvl}.upsample")
            x = x0s[lvl] + upped
            trace.append(f"L{lvl}.merge")
            lcache["up"] = ucache
        if lvl == 0:
            yl, opl = (x0s[0] if cfg.fidelity == "residual" else y), op
        else:
            yl, opl = x0s[lvl], IdentityOperator()
        seq = []
        bcaches = []
        for t in range(1, cfg.stages + 1):
            v, x, bc = proximal_block_forward(model, lvl, t, x, yl, opl, cfg.beta, mode)
            trace.append(f"L{lvl}.S{t}.block")
            trace.append(f"L{lvl}.S{t}." + ("residual_add" if cfg.fidelity == "residual" else "fidelity"))
            seq.append((v, x))
            bcaches.append(bc)
        stages_out[lvl] = seq
        per_scale.append(x)
        lcache.update(blocks=bcaches, op=opl)
        if keep_cache:
            cache["levels"][lvl] = lcache
        prev = x
    return PsnResult(per_scale[-1], per_scale, trace, stages_out, cache)


def psn_backward(model: PsnModel, result: PsnResult, grads_per_scale) -> dict:
    """Parameter gradients given d loss / d output for each level (coarse to fine order)."""
    if result.cache is None:
        raise ValueError("psn_forward was not run with keep_cache=True")
    cfg = model.config
    levels = list(range(cfg.scales))  # fine to coarse
    seeds = {lvl: g for lvl, g in zip(range(cfg.scales - 1, -1, -1), grads_per_scale)}
    grads: dict = {}
    carry = None
    for lvl in levels:
        lc = result.cache["levels"][lvl]
        g = seeds[lvl] if carry is None else seeds[lvl] + carry
        for t in range(cfg.stages, 0, -1):
            if cfg.fidelity == "residual":
                gv = g
            else:
                gv = data_fidelity_step_vjp(g, lc["op"], cfg.beta)
            gin, grads = sequential_backward(model.block_specs, model.store, block_prefix(lvl, t),
                                             lc["blocks"][t - 1], gv, grads)
            g = gin + gv if cfg.residual_skip else gin
        if "up" in lc:
            gup, grads = sequential_backward(model.up_specs, model.store, up_prefix(lvl), lc["up"], g, grads)
            carry = gup
        else:
            carry = None
    return grads


# --------------------------------------------------------------------------
# loss and training


def multiscale_loss(outputs, x_gt):
    """Sum over levels of the MSE to the bicubic target pyramid.

    ``outputs`` is ordered coarse to fine (as PsnResult.per_scale). Returns the
    scalar loss and d loss / d output for each entry.
    """
    x_gt = np.asarray(x_gt)
    targets = build_target_pyramid(x_gt.astype(np.asarray(outputs[-1]).dtype, copy=False), len(outputs))[::-1]
    total = 0.0
    grads = []
    for out, tgt in zip(outputs, targets):
        if out.shape != tgt.shape:
            raise ShapeError(f"output {out.shape} does not match target {tgt.shape}")
        diff = out - tgt
        total += float(np.mean(diff.astype(np.float64) ** 2))
        grads.append(diff * diff.dtype.type(2.0 / diff.size))
    return total, grads


@dataclass
class TrainResult:
    model: PsnModel
    losses: list


def _batch_seed(seed, epoch, batch):
    return int(np.random.SeedSequence([seed, epoch, batch]).generate_state(1, np.uint64)[0])


def synthesize_batch(x, degradation, seed: int):
    """Draw (y, x0, operator) for a clean batch, with fresh noise per call.

    ``degradation`` is a DegradationSpec or a (lo, hi) sigma range; for a range
    sigma is drawn uniformly per sample.
    """
    if isinstance(degradation, DegradationSpec):
        if degradation.kind == "superres":
            y = apply_forward_model(x, degradation)
            return y, initial_estimate(y, degradation), degradation.operator()
        y = add_gaussian_noise(x, degradation.sigma, seed)
        return y, y.copy(), degradation.operator()
    lo, hi = degradation
    rng = np.random.default_rng(seed)
    sig = rng.uniform(lo, hi, size=x.shape[0])
    y = add_gaussian_noise(x, sig, seed + 1)
    return y, y.copy(), as_operator(Kernel.delta())


def train_psn(model: PsnModel, patches, degradation, tc: TrainConfig, log=None) -> TrainResult:
    """Minimize the multi-scale loss over block and upsampler parameters with Adam."""
    data = np.asarray(patches, dtype=model.dtype)
    if data.ndim != 4 or data.shape[0] == 0:
        raise ConfigError("training needs a non-empty N x C x H x W patch array")
    if isinstance(degradation, DegradationSpec):
        want = "superres" if degradation.kind == "superres" else "denoise"
        if want != model.config.task:
            raise ConfigError(f"model task {model.config.task} does not match degradation {degradation.kind}")
    n = data.shape[0]
    losses = []
    for epoch in range(tc.epochs):
        order = np.random.default_rng([tc.seed, epoch]).permutation(n)
        lr = tc.lr_at(epoch)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, tc.batch_size)):
            x = data[order[start:start + tc.batch_size]]
            y, x0, op = synthesize_batch(x, degradation, _batch_seed(tc.seed, epoch, b))
            res = psn_forward(model, y, op, mode="train", x0=x0, keep_cache=True)
            loss, gouts = multiscale_loss(res.per_scale, x)
            grads = psn_backward(model, res, gouts)
            adam_step(model.store, grads, tc, lr)
            total += loss * x.shape[0]
            count += x.shape[0]
        losses.append(total / count)
        if log is not None:
            log(epoch, losses[-1])
    return TrainResult(model, losses)


def restore(model: PsnModel, y, spec: DegradationSpec | None = None):
    """Single forward pass in inference mode; output clipped to [0, 1]."""
    cfg = model.config
    if spec is not None:
        kind = "superres" if cfg.task == "superres" else "denoise"
        if spec.kind != kind or (kind == "superres" and spec.scale != cfg.sr_scale):
            raise ConfigError(f"model does {cfg.task} x{cfg.sr_scale}, spec asks for {spec.kind} x{spec.scale}")
        op = spec.operator()
        x0 = initial_estimate(np.asarray(y, dtype=model.dtype), spec)
    else:
        op, x0 = None, None
    res = psn_forward(model, y, op, mode="infer", x0=x0)
    return np.clip(res.final, 0.0, 1.0)


def make_special_case_config(which: str, **overrides) -> PsnConfig:
    """Single-stage, single-scale reductions with x_1 = Gamma(x_0) + K^T y."""
    if which == "vdsr":
        base = dict(stages=1, scales=1, task="superres", sr_scale=2, beta=2.0, block_depth=20,
                    residual_skip=False, fidelity="residual")
    elif which == "dncnn":
        base = dict(stages=1, scales=1, task="denoise", sr_scale=1, beta=2.0, block_depth=17,
                    residual_skip=False, fidelity="residual")
    else:
        raise ConfigError(f"unknown special case {which!r}")
    base.update(overrides)
    return PsnConfig(**base)


def with_config(model: PsnModel, **changes) -> PsnModel:
    """Same parameters, modified non-structural config (e.g. beta)."""
    return PsnModel(replace(model.config, **changes), model.store, model.block_specs, model.up_specs)
