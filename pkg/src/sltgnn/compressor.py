"""Packed-model format, seed-based regeneration, accounting and sparse inference.

File layout (version 1, all integers and reals little-endian)::

    magic      4s   b"SLTG"
    version    u8   1
    meta_len   u32  length of the metadata block
    metadata   JSON, UTF-8, sorted keys: {"model": ModelSpec, "plan": SparsityPlan}
    n_weights  u32
      per weight set:
        method  u8   0 signed Kaiming constant, 1 Kaiming normal
        seed    u64
        fan_in  u32
        k1      f64  base sparsity the weight scale was derived from
        rows    u32
        cols    u32
    n_masks    u32
      per score set:
        rows    u32
        cols    u32
        n_coats u8
        k       f32 * n_coats
        per coat:
          n_bits  u32  coat 1: rows * cols; coat c: survivors of coat c - 1
          bits    ceil(n_bits / 8) bytes, LSB-first
    n_norms    u32
      per norm:
        width   u32
        eps     f32
        momentum f32
        gamma, beta, running_mean, running_var   f32 * width each

No weights and no scores are stored: weights are regenerated from their
init records, and the nested coat bitmaps decode to the coat-count tensors.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError
from .graph import CsrMatrix, Graph, spmm
from .models import Architecture, BatchNormState, Model, ModelSpec, compute_counts, forward, model_layout
from .randinit import InitMethod, InitSpec, generate_weights
from .supermask import SparsityPlan, bits_per_weight, nested_encoding_bits_per_weight

__all__ = [
    "MAGIC",
    "VERSION",
    "MaskRecord",
    "MemoryReport",
    "PackedModel",
    "SparseWeight",
    "decode_coats",
    "dense_masked_weights",
    "encode_coats",
    "mac_count",
    "memory_report",
    "pack",
    "read_packed",
    "sparse_inference",
    "unpack",
    "write_packed",
]

MAGIC = b"SLTG"
VERSION = 1
MIB = 1 << 20

_METHOD_CODES = {InitMethod.SIGNED_KAIMING_CONSTANT: 0, InitMethod.KAIMING_NORMAL: 1}
_CODE_METHODS = {v: k for k, v in _METHOD_CODES.items()}


def encode_coats(counts: np.ndarray, n_coats: int) -> list[tuple[int, bytes]]:
    """Nested bitmaps: coat c is stored only over the survivors of coat c - 1."""
    flat = np.asarray(counts).ravel()
    if flat.size and int(flat.max()) > n_coats:
        raise FormatError(f"coat count {int(flat.max())} exceeds {n_coats} coats")
    out = []
    alive = flat
    for c in range(1, n_coats + 1):
        bits = (alive >= c).astype(np.uint8)
        out.append((bits.size, np.packbits(bits, bitorder="little").tobytes()))
        alive = alive[bits == 1]
    return out


def decode_coats(coats: list[tuple[int, bytes]], shape) -> np.ndarray:
    size = int(np.prod(shape))
    counts = np.zeros(size, dtype=np.uint8)
    alive = np.arange(size)
    for n_bits, payload in coats:
        if n_bits != alive.size:
            raise FormatError(f"coat covers {n_bits} bits, expected {alive.size} survivors")
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n_bits, bitorder="little")
        alive = alive[bits == 1]
        counts[alive] += 1
    return counts.reshape(shape)


@dataclass
class MaskRecord:
    shape: tuple[int, int]
    sparsities: tuple[float, ...]
    coats: list[tuple[int, bytes]]

    @property
    def payload_bytes(self) -> int:
        return sum(len(b) for _, b in self.coats)

    @property
    def bits(self) -> int:
        return sum(n for n, _ in self.coats)


@dataclass
class PackedModel:
    spec: ModelSpec
    plan: SparsityPlan
    weight_sets: list[tuple[InitSpec, tuple[int, int]]]
    masks: list[MaskRecord]
    norms: list[BatchNormState]

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<B", VERSION)]
        meta = json.dumps(
            {"model": self.spec.to_dict(), "plan": _plan_to_dict(self.plan)},
            sort_keys=True, separators=(",", ":"),
        ).encode("utf-8")
        parts.append(struct.pack("<I", len(meta)))
        parts.append(meta)
        parts.append(struct.pack("<I", len(self.weight_sets)))
        for init, (rows, cols) in self.weight_sets:
            parts.append(struct.pack(
                "<BQIdII", _METHOD_CODES[init.method], init.seed, init.fan_in,
                init.base_sparsity_k1, rows, cols,
            ))
        parts.append(struct.pack("<I", len(self.masks)))
        for rec in self.masks:
            parts.append(struct.pack("<IIB", *rec.shape, len(rec.coats)))
            parts.append(np.asarray(rec.sparsities, dtype="<f4").tobytes())
            for n_bits, payload in rec.coats:
                parts.append(struct.pack("<I", n_bits))
                parts.append(payload)
        parts.append(struct.pack("<I", len(self.norms)))
        for bn in self.norms:
            parts.append(struct.pack("<Iff", bn.width, bn.eps, bn.momentum))
            for arr in (bn.gamma, bn.beta, bn.running_mean, bn.running_var):
                parts.append(np.asarray(arr, dtype="<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> PackedModel:
        r = _Reader(data)
        if r.take(4) != MAGIC:
            raise FormatError("bad magic, not a packed model", 0)
        version = r.unpack("<B")[0]
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", 4)
        meta_len = r.unpack("<I")[0]
        meta_at = r.pos
        try:
            meta = json.loads(r.take(meta_len).decode("utf-8"))
            spec = ModelSpec.from_dict(meta["model"])
            plan = _plan_from_dict(meta["plan"])
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad metadata: {exc}", meta_at) from None
        weight_sets = []
        for _ in range(r.unpack("<I")[0]):
            at = r.pos
            code, seed, fan_in, k1, rows, cols = r.unpack("<BQIdII")
            if code not in _CODE_METHODS:
                raise FormatError(f"unknown init method {code}", at)
            try:
                init = InitSpec(_CODE_METHODS[code], fan_in, k1, seed)
            except InputError as exc:
                raise FormatError(str(exc), at) from None
            weight_sets.append((init, (rows, cols)))
        masks = []
        for _ in range(r.unpack("<I")[0]):
            rows, cols, n_coats = r.unpack("<IIB")
            ks = tuple(float(k) for k in np.frombuffer(r.take(4 * n_coats), dtype="<f4"))
            coats = []
            for _ in range(n_coats):
                n_bits = r.unpack("<I")[0]
                coats.append((n_bits, r.take((n_bits + 7) // 8)))
            masks.append(MaskRecord((rows, cols), ks, coats))
        norms = []
        for _ in range(r.unpack("<I")[0]):
            width, eps, momentum = r.unpack("<Iff")
            arrays = [np.frombuffer(r.take(4 * width), dtype="<f4").astype(np.float32) for _ in range(4)]
            norms.append(BatchNormState(*arrays, eps=float(eps), momentum=float(momentum)))
        if r.pos != len(data):
            raise FormatError(f"{len(data) - r.pos} trailing bytes", r.pos)
        return cls(spec, plan, weight_sets, masks, norms)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated: need {n} bytes, {len(self.data) - self.pos} left", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _plan_to_dict(plan: SparsityPlan) -> dict:
    return {
        "sparsities": list(plan.sparsities),
        "threshold_mode": plan.threshold_mode.value,
        "alpha": plan.alpha,
        "scope": plan.scope,
        "requested_coats": plan.requested_coats,
    }


def _plan_from_dict(d: dict) -> SparsityPlan:
    return SparsityPlan(
        tuple(d["sparsities"]), d["threshold_mode"], d["alpha"], d["scope"], d["requested_coats"]
    )


def pack(model: Model, plan: SparsityPlan) -> PackedModel:
    """Packed form of a trained model at the plan's final sparsities."""
    counts = compute_counts(model, plan.sparsities, plan.scope)
    weight_sets = [(init, w.shape) for init, w in zip(model.init_specs, model.weights)]
    masks = [MaskRecord(c.shape, plan.sparsities, encode_coats(c, plan.coats)) for c in counts]
    return PackedModel(model.spec, plan, weight_sets, masks, model.copy_norms())


def unpack(packed: PackedModel | bytes) -> Model:
    """Executable model: weights regenerated from their seeds, masks decoded."""
    if isinstance(packed, (bytes, bytearray)):
        packed = PackedModel.from_bytes(bytes(packed))
    shapes, slots, norm_widths = model_layout(packed.spec)
    if [tuple(s) for _, s in packed.weight_sets] != [tuple(s) for s in shapes]:
        raise FormatError("weight-set shapes do not match the model layout")
    if [bn.width for bn in packed.norms] != norm_widths:
        raise FormatError("norm widths do not match the model layout")
    weights = [generate_weights(init, *shape) for init, shape in packed.weight_sets]
    counts = [decode_coats(rec.coats, rec.shape) for rec in packed.masks]
    score_shapes = {}
    for slot in slots:
        score_shapes.setdefault(slot.score, shapes[slot.weight])
    if [tuple(c.shape) for c in counts] != [tuple(score_shapes[i]) for i in range(len(score_shapes))]:
        raise FormatError("mask shapes do not match the model layout")
    return Model(
        spec=packed.spec,
        init_specs=[init for init, _ in packed.weight_sets],
        weights=weights,
        scores=None,
        norms=[bn.copy() for bn in packed.norms],
        slots=slots,
        frozen_counts=counts,
    )


def write_packed(packed: PackedModel, path) -> int:
    data = packed.to_bytes()
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_packed(path) -> PackedModel:
    with open(path, "rb") as fh:
        return PackedModel.from_bytes(fh.read())


class SparseWeight:
    """Effective weight held as CSR of its transpose, surviving entries only.

    ``h @ SparseWeight`` evaluates ``h @ W_eff`` as ``(W_eff^T h^T)^T`` with
    :func:`spmm`, so dense forward code runs unchanged on sparse weights.
    Products accumulate in ``dtype``.
    """

    __array_ufunc__ = None  # make ndarray @ SparseWeight defer to __rmatmul__

    def __init__(self, w_rand: np.ndarray, counts: np.ndarray, dtype=np.float64):
        self.shape = w_rand.shape
        self.dtype = np.dtype(dtype)
        self.csr_t = CsrMatrix.from_dense((w_rand * counts.astype(np.float32)).T)

    @property
    def nnz(self) -> int:
        return self.csr_t.nnz

    def __rmatmul__(self, h):
        h = np.ascontiguousarray(np.asarray(h, dtype=self.dtype).T)
        return spmm(self.csr_t, h).T


def sparse_inference(packed: PackedModel | bytes, graph: Graph, dtype=np.float64) -> np.ndarray:
    """Logits computed with every masked weight as a sparse matrix.

    The default float64 accumulation keeps the result within rounding of the
    exact masked forward even when logits are large (sum-aggregating models).
    """
    model = unpack(packed)
    weights = [SparseWeight(model.weights[s.weight], model.frozen_counts[s.score], dtype) for s in model.slots]
    logits, _ = forward(model, graph, training=False, weights=weights)
    return logits


@dataclass(frozen=True)
class MemoryReport:
    mask_bits: int
    mask_bytes: int
    stored_real_bits: int
    total_bytes: int
    paper_formula_bits: float
    nested_formula_bits: float
    dwl_bits: int
    params_total: float
    dwl_params: int
    macs_linear: int
    macs_dense: int
    macs_aggregation: int

    @property
    def total_mib(self) -> float:
        return self.total_bytes / MIB

    @property
    def paper_formula_bytes(self) -> float:
        return (self.paper_formula_bits + self.stored_real_bits) / 8

    @property
    def paper_formula_mib(self) -> float:
        return self.paper_formula_bytes / MIB

    @property
    def dwl_bytes(self) -> int:
        return math.ceil(self.dwl_bits / 8)

    @property
    def dwl_mib(self) -> float:
        return self.dwl_bytes / MIB

    @property
    def macs_linear_bils(self) -> float:
        return self.macs_linear / 1e9


def _aggregation_macs(model: Model, nnz: int) -> int:
    spec = model.spec
    if spec.architecture is Architecture.RESGCN:
        return nnz * spec.hidden * spec.depth
    # one aggregation per layer/block, over that layer's input width
    return nnz * sum(spec.widths[:-1])


def memory_report(model: Model, plan: SparsityPlan, num_nodes: int = 0, adjacency_nnz: int = 0) -> MemoryReport:
    """Accounting for a model at the plan's final sparsities.

    ``mask_bits`` is the real nested-bitmap size; ``paper_formula_bits`` uses
    the reference average of 1 + sum_{n<N} k_n bits per weight, and
    ``nested_formula_bits`` the analytic nested cost 1 + sum_{n<N}(1 - k_n).
    Stored reals (norm parameters and statistics) count 32 bits each.
    ``params_total`` is mask entries times that average bit cost, plus
    stored reals. MACs count linear layers only, one per
    surviving weight per node; aggregation MACs are reported separately.
    """
    counts = compute_counts(model, plan.sparsities, plan.scope)
    records = [encode_coats(c, plan.coats) for c in counts]
    mask_bits = sum(n for rec in records for n, _ in rec)
    mask_bytes = sum(len(b) for rec in records for _, b in rec)
    n_reals = sum(4 * bn.width for bn in model.norms)
    real_bits = 32 * n_reals
    mask_sizes = [c.size for c in counts]
    formula_bits = sum(size * bits_per_weight(plan.sparsities) for size in mask_sizes)
    nested_bits = sum(size * nested_encoding_bits_per_weight(plan.sparsities) for size in mask_sizes)
    n_weights = sum(w.size for w in model.weights)
    surviving = sum(int(np.count_nonzero(counts[s.score])) for s in model.slots)
    dense = sum(model.weights[s.weight].size for s in model.slots)
    return MemoryReport(
        mask_bits=mask_bits,
        mask_bytes=mask_bytes,
        stored_real_bits=real_bits,
        total_bytes=math.ceil((mask_bits + real_bits) / 8),
        paper_formula_bits=formula_bits,
        nested_formula_bits=nested_bits,
        dwl_bits=32 * (n_weights + n_reals),
        params_total=sum(size * bits_per_weight(plan.sparsities) for size in mask_sizes) + n_reals,
        dwl_params=n_weights + n_reals,
        macs_linear=num_nodes * surviving,
        macs_dense=num_nodes * dense,
        macs_aggregation=_aggregation_macs(model, adjacency_nnz),
    )


def dense_masked_weights(model: Model, plan: SparsityPlan, dtype=np.float64) -> list[np.ndarray]:
    """Per-slot dense effective weights, for reference forwards at higher precision."""
    counts = compute_counts(model, plan.sparsities, plan.scope)
    return [(model.weights[s.weight] * counts[s.score]).astype(dtype) for s in model.slots]


def mac_count(model: Model, graph: Graph, plan: SparsityPlan) -> int:
    """Linear-layer multiply-accumulates: nodes times surviving weights, every slot."""
    counts = compute_counts(model, plan.sparsities, plan.scope)
    return graph.num_nodes * sum(int(np.count_nonzero(counts[s.score])) for s in model.slots)
