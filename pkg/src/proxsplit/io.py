"""Binary PGM/PPM codecs, patch sampling, key = value configs and checkpoints."""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

from .neural import ParamStore
from . import neural
from .psn import PsnConfig, PsnModel, block_layers, init_model
from .tensor import ConfigError

log = logging.getLogger(__name__)

MAGIC = b"PSN1"
FORMAT_VERSION = 1
IMAGE_EXTENSIONS = (".pgm", ".ppm")


class DecodeError(ValueError):
    """Malformed input; ``offset`` is the byte position where decoding failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


# --------------------------------------------------------------------------
# PGM / PPM


def _header_tokens(data: bytes, count: int):
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise DecodeError("truncated header", pos)
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append((data[start:pos], start))
    return tokens, pos


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode binary P5/P6 with maxval 255 into a 1 x C x H x W float array in [0, 1]."""
    if len(data) < 2:
        raise DecodeError("file too short for a PNM header", 0)
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise DecodeError(f"unsupported magic {magic!r}", 0)
    tokens, pos = _header_tokens(data[2:], 3)
    values = []
    for tok, off in tokens:
        if not tok.isdigit():
            raise DecodeError(f"expected a decimal integer, got {tok!r}", off + 2)
        values.append(int(tok))
    width, height, maxval = values
    pos += 2
    if width < 1 or height < 1:
        raise DecodeError(f"bad image size {width}x{height}", tokens[0][1] + 2)
    if maxval != 255:
        raise DecodeError(f"unsupported maxval {maxval}", tokens[2][1] + 2)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise DecodeError("missing whitespace after maxval", pos)
    pos += 1
    need = width * height * channels
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise DecodeError(f"truncated payload: need {need} bytes, have {len(payload)}", pos + len(payload))
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return (arr.transpose(2, 0, 1)[None].astype(np.float64)) / 255.0


def to_uint8(x) -> np.ndarray:
    """Clip to [0, 1], scale by 255 and round half up."""
    return np.floor(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_pnm(x) -> bytes:
    x = np.asarray(x)
    if x.ndim == 4:
        if x.shape[0] != 1:
            raise ValueError("write one image at a time")
        x = x[0]
    if x.ndim == 2:
        x = x[None]
    c, h, w = x.shape
    if c not in (1, 3):
        raise ValueError(f"cannot encode {c} channels as PGM/PPM")
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    return header + to_uint8(x).transpose(1, 2, 0).tobytes()


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def write_image(x, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pnm(x))


def list_images(directory) -> list:
    names = sorted(f for f in os.listdir(directory) if f.lower().endswith(IMAGE_EXTENSIONS))
    return [os.path.join(directory, f) for f in names]


def pnm_extension(x) -> str:
    return ".ppm" if np.shape(x)[-3] == 3 else ".pgm"


# --------------------------------------------------------------------------
# patches


@dataclass
class PatchSource:
    directory: str
    patch_size: int = 32
    samples_per_image: int = 100
    seed: int = 0
    flips: bool = False
    rotations: bool = False


def sample_patches(src: PatchSource, images=None):
    """Yield C x P x P patches at uniform random positions, deterministic per seed.

    Images smaller than the patch size are skipped with a warning.
    """
    rng = np.random.default_rng(src.seed)
    if images is None:
        images = [read_image(p)[0] for p in list_images(src.directory)]
    p = src.patch_size
    for img in images:
        h, w = img.shape[-2:]
        if h < p or w < p:
            log.warning("skipping %dx%d image smaller than patch size %d", h, w, p)
            continue
        for _ in range(src.samples_per_image):
            i = int(rng.integers(0, h - p + 1))
            j = int(rng.integers(0, w - p + 1))
            patch = img[:, i:i + p, j:j + p]
            if src.flips and rng.random() < 0.5:
                patch = patch[:, :, ::-1]
            if src.rotations:
                patch = np.rot90(patch, int(rng.integers(4)), axes=(1, 2))
            yield np.ascontiguousarray(patch)


# --------------------------------------------------------------------------
# key = value config files


def parse_config(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def read_config(path) -> dict:
    with open(path) as fh:
        return parse_config(fh.read())


# --------------------------------------------------------------------------
# checkpoints


def _u32(n):
    if not 0 <= n < 2**32:
        raise ValueError(f"value {n} does not fit in u32")
    return struct.pack("<I", n)


def _lp_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def encode_checkpoint(model: PsnModel) -> bytes:
    tensors = model.store.tensors()
    parts = [MAGIC, _u32(FORMAT_VERSION), _lp_str(model.config.to_text()), _u32(len(tensors))]
    for name, arr in tensors.items():
        parts.append(_lp_str(name))
        parts.append(_u32(arr.ndim))
        parts.extend(_u32(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise DecodeError(f"truncated checkpoint while reading {what}", self.pos)
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what):
        n = self.u32(what + " length")
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as err:
            raise DecodeError(f"invalid UTF-8 in {what}", self.pos - n) from err


def decode_checkpoint(data: bytes) -> PsnModel:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise DecodeError("bad checkpoint magic", 0)
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise DecodeError(f"unsupported checkpoint version {version}", 4)
    config = PsnConfig.from_mapping(parse_config(r.string("config")))
    count = r.u32("tensor count")
    tensors = {}
    for _ in range(count):
        name = r.string("tensor name")
        rank = r.u32("rank")
        if rank > 8:
            raise DecodeError(f"implausible rank {rank} for {name}", r.pos - 4)
        dims = tuple(r.u32("dims") for _ in range(rank))
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        if size * 4 > len(data) - r.pos:
            raise DecodeError(f"tensor {name} of size {dims} overflows the file", r.pos)
        raw = r.take(size * 4, f"data of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(config.dtype)
    if r.pos != len(data):
        raise DecodeError("trailing bytes after last tensor", r.pos)

    model = init_model(config, 0)
    expected = model.store.tensors()
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise DecodeError(f"tensor set mismatch (missing {missing[:3]}, unexpected {extra[:3]})", r.pos)
    store = ParamStore()
    for name in model.store.params:
        if tensors[name].shape != expected[name].shape:
            raise DecodeError(f"tensor {name} has shape {tensors[name].shape}, expected {expected[name].shape}", r.pos)
        store.add_param(name, tensors[name].copy())
    for name in model.store.buffers:
        if tensors[name].shape != expected[name].shape:
            raise DecodeError(f"tensor {name} has shape {tensors[name].shape}, expected {expected[name].shape}", r.pos)
        store.add_buffer(name, tensors[name].copy())
    return PsnModel(config, store, block_layers(config),
                    [neural.transposed_conv(config.input_channels, config.input_channels)])


def save_checkpoint(model: PsnModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(model))


def load_checkpoint(path) -> PsnModel:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
