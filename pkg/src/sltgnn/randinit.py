"""Seeded generation of frozen random weights and initial scores.

Every stream comes from Philox4x32-10 (the counter-based generator of
Salmon et al., exposed by numpy as ``numpy.random.Philox``), keyed by a
64-bit seed with the counter starting at zero. Only the raw 64-bit outputs
are consumed, and the transforms to signs, uniforms and normals are written
out here, so a stream depends on nothing but the published algorithm.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "InitMethod",
    "InitSpec",
    "generate_weights",
    "kaiming_normal",
    "kaiming_uniform_scores",
    "layer_seed",
    "seed_from_hash",
    "signed_kaiming_constant",
]

_U64 = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


class InitMethod(str, enum.Enum):
    SIGNED_KAIMING_CONSTANT = "sc"
    KAIMING_NORMAL = "kn"


@dataclass(frozen=True)
class InitSpec:
    method: InitMethod
    fan_in: int
    base_sparsity_k1: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "method", InitMethod(self.method))
        if self.fan_in < 1:
            raise InputError("fan_in must be >= 1")
        if not 0.0 <= self.base_sparsity_k1 < 1.0:
            raise InputError("k1 must lie in [0, 1)")
        if not 0 <= self.seed <= _U64:
            raise InputError("seed must be a 64-bit unsigned integer")

    @property
    def std(self) -> float:
        """Kaiming-normal standard deviation with ReLU gain, sqrt(2 / fan_in)."""
        return math.sqrt(2.0 / self.fan_in)

    @property
    def scale(self) -> float:
        return math.sqrt(1.0 / (1.0 - self.base_sparsity_k1))


def _raw(seed: int, count: int) -> np.ndarray:
    gen = np.random.Philox(key=seed)
    return gen.random_raw(count).astype(np.uint64)


def _unit_uniform(raw: np.ndarray) -> np.ndarray:
    """53-bit uniforms on [0, 1)."""
    return (raw >> np.uint64(11)).astype(np.float64) * _INV_2_53


def signed_kaiming_constant(spec: InitSpec, rows: int, cols: int) -> np.ndarray:
    if spec.method is not InitMethod.SIGNED_KAIMING_CONSTANT:
        raise InputError("spec is not a signed Kaiming constant spec")
    raw = _raw(spec.seed, rows * cols)
    negative = (raw >> np.uint64(63)).astype(bool)
    magnitude = np.float32(spec.std * spec.scale)
    out = np.where(negative, -magnitude, magnitude).astype(np.float32)
    return out.reshape(rows, cols)


def _standard_normal(seed: int, count: int) -> np.ndarray:
    pairs = (count + 1) // 2
    raw = _raw(seed, 2 * pairs)
    # shift u1 into (0, 1] so the log is finite
    u1 = _unit_uniform(raw[0::2]) + _INV_2_53
    u2 = _unit_uniform(raw[1::2])
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:count]


def kaiming_normal(spec: InitSpec, rows: int, cols: int) -> np.ndarray:
    if spec.method is not InitMethod.KAIMING_NORMAL:
        raise InputError("spec is not a Kaiming normal spec")
    z = _standard_normal(spec.seed, rows * cols) * (spec.std * spec.scale)
    return z.astype(np.float32).reshape(rows, cols)


def generate_weights(spec: InitSpec, rows: int, cols: int) -> np.ndarray:
    """Dispatch on ``spec.method``; the result is read-only."""
    if spec.method is InitMethod.SIGNED_KAIMING_CONSTANT:
        w = signed_kaiming_constant(spec, rows, cols)
    else:
        w = kaiming_normal(spec, rows, cols)
    w.setflags(write=False)
    return w


def kaiming_uniform_scores(seed: int, rows: int, cols: int, fan_in: int) -> np.ndarray:
    """Scores drawn uniformly from [-sqrt(6/fan_in), +sqrt(6/fan_in)]."""
    if fan_in < 1:
        raise InputError("fan_in must be >= 1")
    bound = math.sqrt(6.0 / fan_in)
    u = _unit_uniform(_raw(seed, rows * cols))
    return ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(rows, cols)


def seed_from_hash(model_metadata: bytes) -> int:
    """First 8 bytes (big-endian) of the SHA-256 digest."""
    digest = hashlib.sha256(bytes(model_metadata)).digest()
    return int.from_bytes(digest[:8], "big")


def layer_seed(global_seed: int, layer_index: int, role: str) -> int:
    """Independent per-tensor seed: hash of global seed, tensor index and role."""
    payload = struct.pack("<QI", global_seed & _U64, layer_index) + role.encode("utf-8")
    return seed_from_hash(payload)
