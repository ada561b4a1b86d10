"""Masked GNN layers with hand-written backward passes.

A model owns frozen random weight sets, trainable score sets and optional
batch-norm states. Its forward pass is a fixed sequence of *slots*; each
slot is one masked linear application and names the weight set, score set
and norm it uses. Folding is nothing more than several slots pointing at the
same weight set (and, for shared masks, the same score set), so gradients
from every reuse accumulate into one score tensor.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .graph import Graph, spmm
from .randinit import InitMethod, InitSpec, generate_weights, kaiming_uniform_scores, layer_seed
from .supermask import effective_weight, multicoat_masks, multicoat_masks_global

__all__ = [
    "Architecture",
    "BatchNormState",
    "FoldSpec",
    "Gradients",
    "Model",
    "ModelSpec",
    "Slot",
    "backward",
    "build_model",
    "compute_counts",
    "folded_forward",
    "forward",
    "gcn_forward",
    "gin_forward",
    "model_layout",
    "resgcn_block_forward",
]


class Architecture(str, enum.Enum):
    GCN = "gcn"
    GIN = "gin"
    RESGCN = "resgcn"


@dataclass(frozen=True)
class FoldSpec:
    """Folding of ``depth`` residual blocks into ``stages`` reused blocks.

    Each stage is iterated ``depth // stages`` times; blocks left over when
    the depth is not a multiple of the stage count stay unfolded and get
    their own weight sets.
    """

    depth: int
    stages: int
    unshared_masks: bool = False

    def __post_init__(self):
        if not 1 <= self.stages <= self.depth:
            raise ConfigError(f"need 1 <= stages <= depth, got {self.stages}, {self.depth}")

    @property
    def iterations(self) -> int:
        return self.depth // self.stages

    @property
    def num_weight_sets(self) -> int:
        return self.stages + (self.depth - self.stages * self.iterations)

    @property
    def num_score_sets(self) -> int:
        return self.depth if self.unshared_masks else self.num_weight_sets

    def weight_index(self, i: int) -> int:
        r = self.iterations
        folded = self.stages * r
        return i // r if i < folded else self.stages + (i - folded)

    def score_index(self, i: int) -> int:
        return i if self.unshared_masks else self.weight_index(i)

    def weight_map(self) -> list[int]:
        return [self.weight_index(i) for i in range(self.depth)]


@dataclass(frozen=True)
class ModelSpec:
    architecture: Architecture
    in_features: int
    hidden: int
    num_classes: int
    depth: int = 2
    fold: FoldSpec | None = None
    batch_norm: bool = False
    init_method: InitMethod = InitMethod.SIGNED_KAIMING_CONSTANT
    seed: int = 0
    # "iteration": one norm per block application; "stage": one per weight set
    bn_sharing: str = "iteration"

    def __post_init__(self):
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        object.__setattr__(self, "init_method", InitMethod(self.init_method))
        if min(self.in_features, self.hidden, self.num_classes, self.depth) < 1:
            raise ConfigError("dimensions and depth must be positive")
        if self.fold is not None:
            if self.architecture is not Architecture.RESGCN:
                raise ConfigError("folding is only defined for residual GCNs")
            if self.fold.depth != self.depth:
                raise ConfigError("fold depth must equal model depth")
        if self.bn_sharing not in ("stage", "iteration"):
            raise ConfigError(f"unknown bn_sharing {self.bn_sharing!r}")

    @property
    def widths(self) -> list[int]:
        if self.architecture is Architecture.RESGCN:
            return [self.in_features, self.hidden, self.num_classes]
        return [self.in_features] + [self.hidden] * (self.depth - 1) + [self.num_classes]

    @property
    def effective_fold(self) -> FoldSpec:
        """Folding in use; an unfolded residual model is depth stages, unshared."""
        return self.fold or FoldSpec(self.depth, self.depth, unshared_masks=True)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = self.architecture.value
        d["init_method"] = self.init_method.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        d = dict(d)
        if d.get("fold") is not None:
            d["fold"] = FoldSpec(**d["fold"])
        return cls(**d)


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def fresh(cls, width: int) -> BatchNormState:
        return cls(
            gamma=np.ones(width, dtype=np.float32),
            beta=np.zeros(width, dtype=np.float32),
            running_mean=np.zeros(width, dtype=np.float32),
            running_var=np.ones(width, dtype=np.float32),
        )

    @property
    def width(self) -> int:
        return len(self.gamma)

    def copy(self) -> BatchNormState:
        return BatchNormState(
            self.gamma.copy(), self.beta.copy(), self.running_mean.copy(),
            self.running_var.copy(), self.eps, self.momentum,
        )


@dataclass(frozen=True)
class Slot:
    """One masked linear application in forward order."""

    weight: int
    score: int
    # norm applied before (residual blocks, head) or after (gcn/gin) this linear
    norm: int | None = None


@dataclass
class Model:
    spec: ModelSpec
    init_specs: list[InitSpec]
    weights: list[np.ndarray]
    scores: list[np.ndarray] | None
    norms: list[BatchNormState]
    slots: list[Slot]
    # set on models rebuilt from a packed file; used instead of scores
    frozen_counts: list[np.ndarray] | None = None

    def weight_shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def score_shapes(self) -> list[tuple[int, int]]:
        """Shape of each score set (that of the weight set it masks)."""
        shapes: dict[int, tuple[int, int]] = {}
        for slot in self.slots:
            shapes.setdefault(slot.score, self.weights[slot.weight].shape)
        return [shapes[i] for i in range(len(shapes))]

    def copy_scores(self) -> list[np.ndarray]:
        return [s.copy() for s in self.scores]

    def copy_norms(self) -> list[BatchNormState]:
        return [n.copy() for n in self.norms]


def model_layout(spec: ModelSpec):
    """Weight-set shapes, slots and norm widths for an architecture."""
    arch = spec.architecture
    shapes: list[tuple[int, int]] = []
    slots: list[Slot] = []
    norm_widths: list[int] = []

    def add_norm(width):
        if not spec.batch_norm and arch is not Architecture.RESGCN:
            return None
        norm_widths.append(width)
        return len(norm_widths) - 1

    if arch is Architecture.GCN:
        w = spec.widths
        for i in range(spec.depth):
            shapes.append((w[i], w[i + 1]))
            norm = add_norm(w[i + 1]) if i < spec.depth - 1 else None
            slots.append(Slot(i, i, norm))
    elif arch is Architecture.GIN:
        w = spec.widths
        for b in range(spec.depth):
            first, second = len(shapes), len(shapes) + 1
            shapes.append((w[b], spec.hidden))
            shapes.append((spec.hidden, w[b + 1]))
            slots.append(Slot(first, first, add_norm(spec.hidden)))
            slots.append(Slot(second, second, None))
    else:
        fold = spec.effective_fold
        width = spec.hidden
        shapes.append((spec.in_features, width))
        slots.append(Slot(0, 0, None))
        shapes.extend([(width, width)] * fold.num_weight_sets)
        if spec.bn_sharing == "stage":
            stage_norms = [add_norm(width) for _ in range(fold.num_weight_sets)]
        for i in range(fold.depth):
            j = fold.weight_index(i)
            norm = stage_norms[j] if spec.bn_sharing == "stage" else add_norm(width)
            slots.append(Slot(1 + j, 1 + fold.score_index(i), norm))
        head = len(shapes)
        shapes.append((width, spec.num_classes))
        slots.append(Slot(head, 1 + fold.num_score_sets, add_norm(width)))
    return shapes, slots, norm_widths


def build_model(spec: ModelSpec, k1: float = 0.0) -> Model:
    """Fresh model: weights scaled for base sparsity ``k1``, Kaiming-uniform scores."""
    shapes, slots, norm_widths = model_layout(spec)
    init_specs, weights = [], []
    for i, (rows, cols) in enumerate(shapes):
        init = InitSpec(spec.init_method, rows, k1, layer_seed(spec.seed, i, "weight"))
        init_specs.append(init)
        weights.append(generate_weights(init, rows, cols))
    score_shapes: dict[int, tuple[int, int]] = {}
    for slot in slots:
        score_shapes.setdefault(slot.score, shapes[slot.weight])
    scores = [
        kaiming_uniform_scores(layer_seed(spec.seed, i, "score"), *score_shapes[i], fan_in=score_shapes[i][0])
        for i in range(len(score_shapes))
    ]
    norms = [BatchNormState.fresh(w) for w in norm_widths]
    return Model(spec, init_specs, weights, scores, norms, slots)


def compute_counts(model: Model, live_sparsities, scope: str = "layer") -> list[np.ndarray]:
    """Coat-count tensor for every score set."""
    if model.frozen_counts is not None:
        return model.frozen_counts
    if scope == "global":
        return multicoat_masks_global(model.scores, live_sparsities)
    return [multicoat_masks(s, live_sparsities) for s in model.scores]


# -- primitives ---------------------------------------------------------------


def _bn_forward(x, bn: BatchNormState, training: bool):
    if training:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        n = x.shape[0]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        bn.running_mean[:] = (1 - bn.momentum) * bn.running_mean + bn.momentum * mean
        bn.running_var[:] = (1 - bn.momentum) * bn.running_var + bn.momentum * unbiased
    else:
        mean, var = bn.running_mean, bn.running_var
    inv_std = (1.0 / np.sqrt(var + np.float32(bn.eps))).astype(np.float32)
    xhat = (x - mean) * inv_std
    return bn.gamma * xhat + bn.beta, (xhat, inv_std, training)


def _bn_backward(dy, bn: BatchNormState, cache):
    xhat, inv_std, training = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    if not training:
        return dy * (bn.gamma * inv_std), dgamma, dbeta
    n = dy.shape[0]
    dx = (bn.gamma * inv_std / n) * (n * dy - dbeta - xhat * dgamma)
    return dx, dgamma, dbeta


@dataclass
class _Cache:
    counts: list
    weffs: list
    steps: list = field(default_factory=list)
    training: bool = False
    n_coats: int = 1


@dataclass
class Gradients:
    scores: list[np.ndarray]
    gammas: list[np.ndarray]
    betas: list[np.ndarray]
    # dL/dW_eff per slot, before the straight-through step
    weffs: list[np.ndarray]


def _effective_weights(model: Model, counts, weights_override):
    if weights_override is not None:
        if len(weights_override) != len(model.slots):
            raise InputError("need one effective weight per slot")
        return list(weights_override)
    return [effective_weight(model.weights[s.weight], counts[s.score]) for s in model.slots]


def _check_input(model: Model, graph: Graph):
    if graph.num_features != model.spec.in_features:
        raise InputError(f"graph has {graph.num_features} features, model expects {model.spec.in_features}")


def _linear(cache: _Cache, slot_index: int, h, w_eff, is_input=False):
    cache.steps.append(("linear", slot_index, h, is_input))
    return h @ w_eff


def _aggregate(cache: _Cache, adj, h):
    cache.steps.append(("aggregate", adj))
    return spmm(adj, h)


def _relu(cache: _Cache, x):
    cache.steps.append(("relu", x > 0))
    return np.maximum(x, 0)


def _norm(cache: _Cache, model: Model, norm_index: int, x):
    y, c = _bn_forward(x, model.norms[norm_index], cache.training)
    cache.steps.append(("norm", norm_index, c))
    return y


# -- architectures --------------------------------------------------------------


def gcn_forward(model, graph, live_sparsities=None, training=False, scope="layer", weights=None):
    """L-layer GCN: aggregate with the normalized adjacency, then masked linear.

    ReLU (after the optional norm) between layers; the last layer returns raw
    logits.
    """
    _check_input(model, graph)
    counts = compute_counts(model, live_sparsities, scope) if weights is None else None
    cache = _Cache(counts, _effective_weights(model, counts, weights), training=training,
                   n_coats=len(live_sparsities or [0]))
    n_slots = len(model.slots)
    h = graph.aggregated_features
    for i, slot in enumerate(model.slots):
        if i > 0:
            h = _aggregate(cache, graph.adjacency, h)
        h = _linear(cache, i, h, cache.weffs[i], is_input=(i == 0))
        if i < n_slots - 1:
            if slot.norm is not None:
                h = _norm(cache, model, slot.norm, h)
            h = _relu(cache, h)
    return h, cache


def gin_forward(model, graph, live_sparsities=None, training=False, scope="layer", weights=None):
    """GIN with epsilon = 0: sum-aggregate over A + I, then a two-layer masked MLP."""
    _check_input(model, graph)
    if graph.sum_adjacency is None:
        raise InputError("GIN needs the graph's sum adjacency")
    counts = compute_counts(model, live_sparsities, scope) if weights is None else None
    cache = _Cache(counts, _effective_weights(model, counts, weights), training=training,
                   n_coats=len(live_sparsities or [0]))
    n_blocks = len(model.slots) // 2
    h = graph.sum_aggregated_features
    for b in range(n_blocks):
        first, second = 2 * b, 2 * b + 1
        if b > 0:
            h = _aggregate(cache, graph.sum_adjacency, h)
        h = _linear(cache, first, h, cache.weffs[first], is_input=(b == 0))
        if model.slots[first].norm is not None:
            h = _norm(cache, model, model.slots[first].norm, h)
        h = _relu(cache, h)
        h = _linear(cache, second, h, cache.weffs[second])
        if b < n_blocks - 1:
            h = _relu(cache, h)
    return h, cache


def resgcn_block_forward(h, graph, model, slot_index, cache):
    """Pre-activation residual block, h + conv(relu(norm(h)))."""
    slot = model.slots[slot_index]
    w_eff = cache.weffs[slot_index]
    if h.shape[1] != w_eff.shape[0] or w_eff.shape[0] != w_eff.shape[1]:
        raise InputError("residual block width mismatch")
    cache.steps.append(("residual_open",))
    u = _norm(cache, model, slot.norm, h) if slot.norm is not None else h
    u = _relu(cache, u)
    u = _aggregate(cache, graph.adjacency, u)
    u = _linear(cache, slot_index, u, w_eff)
    cache.steps.append(("residual_close",))
    return h + u


def folded_forward(model, graph, live_sparsities=None, training=False, scope="layer", weights=None):
    """Residual GCN: masked input encoder, folded blocks, norm-relu-masked head.

    Block ``i`` uses weight set ``fold.weight_index(i)`` and score set
    ``fold.score_index(i)``; the residual connection is applied at every
    iteration.
    """
    _check_input(model, graph)
    counts = compute_counts(model, live_sparsities, scope) if weights is None else None
    cache = _Cache(counts, _effective_weights(model, counts, weights), training=training,
                   n_coats=len(live_sparsities or [0]))
    n_slots = len(model.slots)
    h = _linear(cache, 0, graph.features, cache.weffs[0], is_input=True)
    for i in range(1, n_slots - 1):
        h = resgcn_block_forward(h, graph, model, i, cache)
    head = model.slots[-1]
    if head.norm is not None:
        h = _norm(cache, model, head.norm, h)
    h = _relu(cache, h)
    return _linear(cache, n_slots - 1, h, cache.weffs[-1]), cache


_FORWARDS = {
    Architecture.GCN: gcn_forward,
    Architecture.GIN: gin_forward,
    Architecture.RESGCN: folded_forward,
}


def forward(model: Model, graph: Graph, live_sparsities=None, training=False, scope="layer", weights=None):
    """Logits and a cache for :func:`backward`.

    ``weights`` replaces the masked weights with explicit per-slot matrices,
    which is how effective-weight gradients are checked numerically.
    """
    if weights is None and live_sparsities is None and model.frozen_counts is None:
        raise InputError("live sparsities required for a model with trainable scores")
    return _FORWARDS[model.spec.architecture](model, graph, live_sparsities, training, scope, weights)


def backward(model: Model, cache: _Cache, dlogits, ste: str = "summed") -> Gradients:
    """Reverse the recorded steps.

    The mask is treated as identity on |s| (straight-through), so every score
    gets dL/dW_eff * w_rand * sign(s), pruned or not. ``ste="per_coat"`` multiplies that by
    the number of coats instead of passing the summed mask through once.
    """
    if ste not in ("summed", "per_coat"):
        raise InputError(f"unknown straight-through mode {ste!r}")
    score_grads = [np.zeros(s, dtype=np.float32) for s in model.score_shapes()]
    gammas = [np.zeros_like(n.gamma) for n in model.norms]
    betas = [np.zeros_like(n.beta) for n in model.norms]
    weff_grads: list = [None] * len(model.slots)
    grad = dlogits
    residual_stack = []
    for step in reversed(cache.steps):
        kind = step[0]
        if kind == "linear":
            _, i, h, is_input = step
            dw = h.T @ grad
            weff_grads[i] = dw if weff_grads[i] is None else weff_grads[i] + dw
            grad = None if is_input else grad @ cache.weffs[i].T
        elif kind == "aggregate":
            # both adjacency operators are symmetric, so A^T g == A g
            grad = spmm(step[1], grad)
        elif kind == "relu":
            grad = grad * step[1]
        elif kind == "norm":
            _, k, c = step
            grad, dg, db = _bn_backward(grad, model.norms[k], c)
            gammas[k] += dg
            betas[k] += db
        elif kind == "residual_close":
            residual_stack.append(grad)
        elif kind == "residual_open":
            grad = grad + residual_stack.pop()
    scale = float(cache.n_coats) if ste == "per_coat" else 1.0
    for i, slot in enumerate(model.slots):
        if weff_grads[i] is not None:
            score_grads[slot.score] += weff_grads[i] * model.weights[slot.weight] * np.float32(scale)
    if model.scores is not None:
        # masks rank |s|, so the pass-through gradient is carried back through the magnitude
        for g, s in zip(score_grads, model.scores):
            g *= np.where(s < 0, np.float32(-1), np.float32(1))
    return Gradients(score_grads, gammas, betas, weff_grads)
