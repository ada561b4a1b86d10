"""Score-only training: full-batch, Adam, straight-through mask gradients."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, TrainingDivergence
from .graph import Graph, spmm
from .models import Model, ModelSpec, backward, build_model, forward
from .supermask import DEFAULT_ALPHA, SparsityPlan, ThresholdMode

__all__ = [
    "AdamState",
    "EpochRecord",
    "TrainConfig",
    "TrainResult",
    "accuracy",
    "adam_step",
    "cross_entropy_loss",
    "evaluate",
    "make_plan",
    "train",
    "train_dense_logistic",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    optimizer: str = "adam"
    eval_every: int = 1
    seed: int = 0
    ste: str = "summed"

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise InputError("learning rate must be non-negative")
        if self.optimizer != "adam":
            raise InputError(f"unsupported optimizer {self.optimizer!r}")
        if self.eval_every < 1:
            raise InputError("eval_every must be >= 1")


def cross_entropy_loss(logits, labels, index_set) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over ``index_set`` and its gradient."""
    index_set = np.asarray(index_set, dtype=np.int64)
    if index_set.size == 0:
        raise InputError("empty index set")
    logits = np.asarray(logits)
    z = logits[index_set]
    y = np.asarray(labels)[index_set]
    if y.min() < 0 or y.max() >= logits.shape[1]:
        raise InputError("label outside the class range")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(len(index_set))
    loss = float(-log_probs[rows, y].mean())
    probs = np.exp(log_probs)
    probs[rows, y] -= 1.0
    grad = np.zeros_like(logits)
    np.add.at(grad, index_set, probs / len(index_set))
    return loss, grad


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> AdamState:
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params, grads, lr: float, weight_decay: float = 0.0, decay_mask=None):
    """In-place bias-corrected Adam with decoupled weight decay.

    ``decay_mask[i]`` False exempts parameter ``i`` from weight decay.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise InputError("parameter, gradient and state lists differ in length")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state.first_moment[i], state.second_moment[i]
        if m.shape != g.shape:
            raise InputError("moment shape does not match gradient")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if weight_decay and (decay_mask is None or decay_mask[i]):
            p -= (lr * weight_decay) * p
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    return params


def accuracy(logits, labels, index_set) -> float:
    index_set = np.asarray(index_set, dtype=np.int64)
    if index_set.size == 0:
        return float("nan")
    pred = np.asarray(logits)[index_set].argmax(axis=1)
    return float((pred == np.asarray(labels)[index_set]).mean())


def evaluate(model: Model, graph: Graph, sparsities, split: str = "test", scope: str = "layer") -> float:
    """Argmax accuracy of the model in inference mode on one split."""
    logits, _ = forward(model, graph, sparsities, training=False, scope=scope)
    return accuracy(logits, graph.labels, graph.split(split))


@dataclass
class EpochRecord:
    epoch: int
    live_sparsity: float
    pruned_fraction: float
    loss: float
    acc_train: float
    acc_val: float
    acc_test: float
    val_loss: float = float("nan")


@dataclass
class TrainResult:
    model: Model
    plan: SparsityPlan
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    acc_train: float = float("nan")
    acc_val: float = float("nan")
    acc_test: float = float("nan")


def _pruned_fraction(counts) -> float:
    total = sum(c.size for c in counts)
    return sum(int((c == 0).sum()) for c in counts) / total


def train(model: Model, graph: Graph, plan: SparsityPlan, cfg: TrainConfig) -> TrainResult:
    """Optimize the scores (and norm affine parameters) of ``model`` in place.

    Epoch ``t`` (1-based) uses ``plan.live(t, T)``. Selection keeps the state
    with the best validation accuracy (ties: lower validation loss) among
    epochs that already run at the final sparsity, and that state is loaded
    back into ``model``.
    """
    if model.scores is None:
        raise InputError("model has no trainable scores")
    total = cfg.epochs
    params = model.scores + [n.gamma for n in model.norms] + [n.beta for n in model.norms]
    decay_mask = [True] * len(model.scores) + [False] * (2 * len(model.norms))
    adam = AdamState.zeros_like(params)
    result = TrainResult(model, plan)
    best = None
    for t in range(1, total + 1):
        live = plan.live(t, total)
        logits, cache = forward(model, graph, live, training=True, scope=plan.scope)
        loss, dlogits = cross_entropy_loss(logits, graph.labels, graph.train_idx)
        if not math.isfinite(loss):
            raise TrainingDivergence(t, loss)
        grads = backward(model, cache, dlogits, ste=cfg.ste)
        adam_step(
            adam, params, grads.scores + grads.gammas + grads.betas,
            cfg.learning_rate, cfg.weight_decay, decay_mask,
        )
        if t % cfg.eval_every and t != total:
            continue
        eval_logits, _ = forward(model, graph, live, training=False, scope=plan.scope)
        val_loss = cross_entropy_loss(eval_logits, graph.labels, graph.val_idx)[0] if len(graph.val_idx) else 0.0
        rec = EpochRecord(
            epoch=t,
            live_sparsity=live[0],
            pruned_fraction=_pruned_fraction(cache.counts),
            loss=loss,
            acc_train=accuracy(eval_logits, graph.labels, graph.train_idx),
            acc_val=accuracy(eval_logits, graph.labels, graph.val_idx),
            acc_test=accuracy(eval_logits, graph.labels, graph.test_idx),
            val_loss=val_loss,
        )
        result.history.append(rec)
        at_target = 2 * t >= total
        if at_target and (best is None or (rec.acc_val, -rec.val_loss) > (best[0].acc_val, -best[0].val_loss)):
            best = (rec, model.copy_scores(), model.copy_norms())
    rec, scores, norms = best
    model.scores[:] = scores
    model.norms[:] = norms
    result.best_epoch = rec.epoch
    result.acc_train, result.acc_val, result.acc_test = rec.acc_train, rec.acc_val, rec.acc_test
    log.debug("best epoch %d: val %.4f test %.4f", rec.epoch, rec.acc_val, rec.acc_test)
    return result


def make_plan(
    spec: ModelSpec,
    graph: Graph,
    k1: float,
    n_coats: int,
    mode: ThresholdMode | str = ThresholdMode.UNIFORM,
    cfg: TrainConfig | None = None,
    alpha: float = DEFAULT_ALPHA,
    scope: str = "layer",
    normalization: str = "rank",
) -> SparsityPlan:
    """Sparsity plan for a method; Linear modes pre-train a single-coat model first."""
    mode = ThresholdMode(mode)
    if n_coats == 1:
        return SparsityPlan.s_sup(k1, scope=scope)
    if mode is ThresholdMode.UNIFORM:
        return SparsityPlan.uniform(k1, n_coats, scope=scope)
    if mode is ThresholdMode.LINEAR:
        alpha = 1.0
    if cfg is None:
        return SparsityPlan.linear(k1, n_coats, None, alpha, scope, normalization)
    pre_plan = SparsityPlan.s_sup(k1, scope=scope)
    pre_model = build_model(spec, k1)
    train(pre_model, graph, pre_plan, cfg)
    return SparsityPlan.linear(k1, n_coats, pre_model.scores, alpha, scope, normalization)


def train_dense_logistic(graph: Graph, hops: int = 2, epochs: int = 200, lr: float = 0.05, seed: int = 0) -> float:
    """Test accuracy of a dense softmax regression on propagated features.

    The features are aggregated ``hops`` times with the normalized adjacency
    first (the receptive field of a ``hops``-layer GCN). Sanity oracle for
    synthetic fixtures: a dataset must be learnable by an ordinary dense
    model before supermask results mean much.
    """
    rng = np.random.default_rng(seed)
    x = graph.features
    for _ in range(hops):
        x = spmm(graph.adjacency, x)
    w = (rng.standard_normal((x.shape[1], graph.num_classes)) * 0.01).astype(np.float32)
    b = np.zeros(graph.num_classes, dtype=np.float32)
    adam = AdamState.zeros_like([w, b])
    for _ in range(epochs):
        logits = x @ w + b
        _, dlogits = cross_entropy_loss(logits, graph.labels, graph.train_idx)
        adam_step(adam, [w, b], [x.T @ dlogits, dlogits.sum(axis=0)], lr)
    return accuracy(x @ w + b, graph.labels, graph.test_idx)
