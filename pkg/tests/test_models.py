import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_graph
from sltgnn.errors import ConfigError, InputError
from sltgnn.graph import Graph
from sltgnn.models import (
    BatchNormState,
    FoldSpec,
    ModelSpec,
    backward,
    build_model,
    compute_counts,
    forward,
    model_layout,
)
from sltgnn.supermask import multicoat_masks
from sltgnn.trainer import cross_entropy_loss


def dense_adj(graph: Graph, normalized=True):
    n = graph.num_nodes
    a = np.eye(n)
    src = graph.sum_adjacency.to_dense() if graph.sum_adjacency is not None else None
    a = (src != 0).astype(np.float64) if src is not None else a
    if not normalized:
        return a
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


def weff(model, slot, ks):
    s = model.slots[slot]
    return model.weights[s.weight].astype(np.float64) * multicoat_masks(model.scores[s.score], ks)


def bn_eval(x, bn):
    return (x - bn.running_mean) / np.sqrt(bn.running_var + bn.eps) * bn.gamma + bn.beta


def gcn_oracle(model, graph, ks):
    a = dense_adj(graph)
    h = graph.features.astype(np.float64)
    n = len(model.slots)
    for i, slot in enumerate(model.slots):
        h = a @ h @ weff(model, i, ks)
        if i < n - 1:
            if slot.norm is not None:
                h = bn_eval(h, model.norms[slot.norm])
            h = np.maximum(h, 0)
    return h


def gin_oracle(model, graph, ks):
    a = dense_adj(graph, normalized=False)
    h = graph.features.astype(np.float64)
    blocks = len(model.slots) // 2
    for b in range(blocks):
        h = a @ h @ weff(model, 2 * b, ks)
        if model.slots[2 * b].norm is not None:
            h = bn_eval(h, model.norms[model.slots[2 * b].norm])
        h = np.maximum(h, 0) @ weff(model, 2 * b + 1, ks)
        if b < blocks - 1:
            h = np.maximum(h, 0)
    return h


def resgcn_oracle(model, graph, ks):
    """Explicit evaluation of h <- h + A relu(bn(h)) W, one line per block."""
    a = dense_adj(graph)
    h = graph.features.astype(np.float64) @ weff(model, 0, ks)
    for i in range(1, len(model.slots) - 1):
        u = bn_eval(h, model.norms[model.slots[i].norm])
        h = h + a @ np.maximum(u, 0) @ weff(model, i, ks)
    u = np.maximum(bn_eval(h, model.norms[model.slots[-1].norm]), 0)
    return u @ weff(model, len(model.slots) - 1, ks)


def perturb_norms(model, rng):
    for bn in model.norms:
        bn.gamma[:] = rng.uniform(0.5, 1.5, bn.width)
        bn.beta[:] = rng.normal(0, 0.1, bn.width)
        bn.running_mean[:] = rng.normal(0, 0.1, bn.width)
        bn.running_var[:] = rng.uniform(0.5, 2, bn.width)


def test_single_layer_identity_adjacency():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 3)).astype(np.float32)
    g = Graph.from_edges(np.zeros((0, 2), dtype=np.int64), x, np.arange(5) % 2, ([0], [1], [2, 3, 4]))
    m = build_model(ModelSpec("gcn", 3, 4, 2, depth=1), 0.0)
    m.scores = [np.abs(s) + 0.1 for s in m.scores]
    logits, _ = forward(m, g, [0.0])
    np.testing.assert_array_equal(logits, x @ m.weights[0])


def test_fully_pruned_gcn_gives_zero_logits(tiny_graph):
    m = build_model(ModelSpec("gcn", 4, 8, 3), 0.5)
    m.frozen_counts = [np.zeros_like(s, dtype=np.uint8) for s in m.scores]
    logits, _ = forward(m, tiny_graph)
    assert not logits.any()


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("batch_norm", [False, True])
def test_gcn_matches_oracle(seed, batch_norm):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    m = build_model(ModelSpec("gcn", 4, 8, 3, depth=2, batch_norm=batch_norm, seed=seed), 0.3)
    perturb_norms(m, rng)
    ks = [0.3, 0.5, 0.7]
    logits, _ = forward(m, g, ks)
    np.testing.assert_allclose(logits, gcn_oracle(m, g, ks), atol=1e-5)


@pytest.mark.parametrize("seed", range(5))
def test_gin_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    m = build_model(ModelSpec("gin", 4, 6, 3, depth=2, batch_norm=True, seed=seed), 0.2)
    perturb_norms(m, rng)
    ks = [0.2, 0.6]
    logits, _ = forward(m, g, ks)
    np.testing.assert_allclose(logits, gin_oracle(m, g, ks), atol=1e-5)


def test_gin_isolated_nodes_use_own_features():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 3)).astype(np.float32)
    g = Graph.from_edges(np.zeros((0, 2), dtype=np.int64), x, [0, 1, 0, 1], ([0], [1], [2, 3]))
    m = build_model(ModelSpec("gin", 3, 5, 2, depth=1), 0.0)
    logits, _ = forward(m, g, [0.0])
    w0, w1 = m.weights
    np.testing.assert_allclose(logits, np.maximum(x @ w0, 0) @ w1, atol=1e-6)


def test_gin_regular_graph_symmetry():
    n = 6
    ring = [(i, (i + 1) % n) for i in range(n)]
    g = Graph.from_edges(ring, np.ones((n, 3), dtype=np.float32), np.arange(n) % 2, ([0], [1], [2, 3, 4, 5]))
    m = build_model(ModelSpec("gin", 3, 5, 2, depth=2), 0.0)
    logits, _ = forward(m, g, [0.4])
    np.testing.assert_array_equal(logits, np.broadcast_to(logits[0], logits.shape))


@pytest.mark.parametrize("fold", [None, FoldSpec(4, 1), FoldSpec(4, 2, True), FoldSpec(4, 2)])
def test_resgcn_matches_oracle(fold):
    rng = np.random.default_rng(3)
    g = random_graph(rng, n=8)
    m = build_model(ModelSpec("resgcn", 4, 6, 3, depth=4, fold=fold), 0.2)
    perturb_norms(m, rng)
    ks = [0.2, 0.5]
    logits, _ = forward(m, g, ks)
    # logits reach ~1e2 here, so float32 rounding needs a relative term
    np.testing.assert_allclose(logits, resgcn_oracle(m, g, ks), rtol=1e-6, atol=1e-5)


def test_fully_pruned_blocks_are_identity(tiny_graph):
    m = build_model(ModelSpec("resgcn", 4, 6, 3, depth=3), 0.0)
    counts = [np.ones_like(s, dtype=np.uint8) for s in m.scores]
    for i in range(1, 4):
        counts[i][:] = 0
    m.frozen_counts = counts
    logits, _ = forward(m, tiny_graph)
    h = tiny_graph.features @ m.weights[0]
    expected = np.maximum(bn_eval(h, m.norms[-1]), 0) @ m.weights[-1]
    np.testing.assert_allclose(logits, expected, atol=1e-5)


def test_block_zero_input_stays_zero(tiny_graph):
    from sltgnn.models import _Cache, resgcn_block_forward

    m = build_model(ModelSpec("resgcn", 4, 6, 3, depth=2), 0.0)
    cache = _Cache(None, [None, m.weights[1], m.weights[2], None])
    out = resgcn_block_forward(np.zeros((6, 6), dtype=np.float32), tiny_graph, m, 1, cache)
    assert not out.any()
    with pytest.raises(InputError):
        resgcn_block_forward(np.zeros((6, 5), dtype=np.float32), tiny_graph, m, 1, cache)


def test_fold_maps():
    assert FoldSpec(4, 2).weight_map() == [0, 0, 1, 1]
    assert FoldSpec(4, 1).weight_map() == [0, 0, 0, 0]
    assert FoldSpec(5, 2).weight_map() == [0, 0, 1, 1, 2]
    assert FoldSpec(4, 2).num_score_sets == 2
    assert FoldSpec(4, 2, unshared_masks=True).num_score_sets == 4
    with pytest.raises(ConfigError):
        FoldSpec(4, 5)


@given(st.integers(1, 12), st.data())
def test_fold_structure(depth, data):
    stages = data.draw(st.integers(1, depth))
    fold = FoldSpec(depth, stages)
    r = depth // stages
    wmap = fold.weight_map()
    assert wmap[: stages * r] == [i // r for i in range(stages * r)]
    assert len(set(wmap)) == fold.num_weight_sets == stages + depth - stages * r
    assert wmap == sorted(wmap)


def test_ssf_shared_has_one_block_mask():
    spec = ModelSpec("resgcn", 4, 6, 3, depth=4, fold=FoldSpec(4, 1))
    m = build_model(spec)
    # encoder, one shared block score set, head
    assert len(m.scores) == 3 and len(m.weights) == 3


def test_score_set_counts():
    for unshared, expected in ((False, 2), (True, 4)):
        m = build_model(ModelSpec("resgcn", 4, 6, 3, depth=4, fold=FoldSpec(4, 2, unshared)))
        assert len(m.scores) - 2 == expected
        assert len(m.weights) - 2 == 2


def test_fold_m_equals_l_matches_unfolded(tiny_graph):
    a = build_model(ModelSpec("resgcn", 4, 6, 3, depth=4, fold=FoldSpec(4, 4, True), seed=5), 0.3)
    b = build_model(ModelSpec("resgcn", 4, 6, 3, depth=4, fold=None, seed=5), 0.3)
    ks = [0.3, 0.6]
    np.testing.assert_array_equal(forward(a, tiny_graph, ks)[0], forward(b, tiny_graph, ks)[0])


def test_fold_only_for_resgcn():
    with pytest.raises(ConfigError):
        ModelSpec("gcn", 4, 6, 3, fold=FoldSpec(2, 1))


def test_spec_roundtrip():
    spec = ModelSpec("resgcn", 4, 6, 3, depth=4, fold=FoldSpec(4, 2, True), batch_norm=True, seed=9)
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_input_width_checked(tiny_graph):
    m = build_model(ModelSpec("gcn", 5, 6, 3))
    with pytest.raises(InputError):
        forward(m, tiny_graph, [0.5])


def test_permutation_equivariance():
    rng = np.random.default_rng(4)
    g = random_graph(rng, n=9)
    perm = rng.permutation(9)
    inv = np.argsort(perm)
    edges = np.array([(inv[u], inv[v]) for u, v in _edges(g)])
    gp = Graph.from_edges(edges, g.features[perm], g.labels[perm], tuple(np.sort(inv[s]) for s in g.splits))
    m = build_model(ModelSpec("gcn", 4, 8, 3), 0.4)
    ks = [0.4, 0.7]
    np.testing.assert_allclose(forward(m, gp, ks)[0], forward(m, g, ks)[0][perm], atol=1e-5)


def _edges(g):
    from sltgnn.data import graph_edges

    return graph_edges(g)


def test_layout_norms():
    _, slots, widths = model_layout(ModelSpec("gcn", 4, 6, 3, depth=3, batch_norm=True))
    assert widths == [6, 6] and slots[-1].norm is None
    _, slots, widths = model_layout(ModelSpec("resgcn", 4, 6, 3, depth=4, fold=FoldSpec(4, 1), bn_sharing="stage"))
    assert widths == [6, 6]


# -- gradients ----------------------------------------------------------------


def loss_at(model, graph, weights):
    logits, _ = forward(model, graph, weights=weights)
    return cross_entropy_loss(logits, graph.labels, graph.train_idx)[0]


def check_weff_gradient(model, graph, rng, h=1e-3, rtol=1e-3):
    """Central differences on W_eff entries, float64 throughout."""
    ks = [0.2, 0.5]
    counts = compute_counts(model, ks)
    weights = [(model.weights[s.weight] * counts[s.score]).astype(np.float64) for s in model.slots]
    logits, cache = forward(model, graph, weights=weights)
    _, dlogits = cross_entropy_loss(logits, graph.labels, graph.train_idx)
    analytic = backward(model, cache, dlogits).weffs
    for i, w in enumerate(weights):
        numeric = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + h
            up = loss_at(model, graph, weights)
            w[idx] = orig - h
            down = loss_at(model, graph, weights)
            w[idx] = orig
            numeric[idx] = (up - down) / (2 * h)
        err = np.linalg.norm(analytic[i] - numeric)
        assert err <= rtol * max(np.linalg.norm(numeric), 1e-8), (i, err)


@pytest.mark.parametrize("arch,depth", [("gcn", 1), ("gcn", 2), ("gin", 1), ("resgcn", 2)])
def test_weff_gradient_matches_finite_differences(arch, depth):
    rng = np.random.default_rng(depth)
    g = random_graph(rng, n=7, f=4, c=3)
    spec = ModelSpec(arch, 4, 5, 3, depth=depth, batch_norm=(arch == "gcn" and depth == 2))
    check_weff_gradient(build_model(spec, 0.2), g, rng)


def test_score_gradient_single_layer_sum_loss():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((5, 3)).astype(np.float32)
    g = Graph.from_edges(np.zeros((0, 2), dtype=np.int64), x, [0, 1, 0, 1, 0], ([0], [1], [2, 3, 4]))
    m = build_model(ModelSpec("gcn", 3, 4, 2, depth=1), 0.0)
    m.scores = [np.abs(s) + 0.01 for s in m.scores]
    _, cache = forward(m, g, [0.5])
    grads = backward(m, cache, np.ones((5, 2), dtype=np.float32))
    expected = (x.T @ np.ones((5, 2), dtype=np.float32)) * m.weights[0]
    np.testing.assert_allclose(grads.scores[0], expected, rtol=1e-6)


def test_pruned_scores_still_get_gradient(tiny_graph):
    m = build_model(ModelSpec("gcn", 4, 6, 3, depth=1), 0.0)
    logits, cache = forward(m, tiny_graph, [0.99])
    _, d = cross_entropy_loss(logits + 1.0, tiny_graph.labels, tiny_graph.train_idx)
    grads = backward(m, cache, d)
    pruned = multicoat_masks(m.scores[0], [0.99]) == 0
    assert np.count_nonzero(grads.scores[0][pruned]) > 0


def test_norm_state_copy_is_deep():
    bn = BatchNormState.fresh(3)
    c = bn.copy()
    c.gamma[0] = 5
    assert bn.gamma[0] == 1
