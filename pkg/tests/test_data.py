import hashlib
import struct

import numpy as np
import pytest

from sltgnn.data import SyntheticSpec, generate_synthetic, graph_edges, load_dataset, write_dataset
from sltgnn.errors import DataError, InputError
from sltgnn.trainer import train_dense_logistic


def write_fixture(root, n=10, splits=None, name=None):
    root.mkdir(parents=True, exist_ok=True)
    (root / "edges.txt").write_text("# ring\n" + "".join(f"{i} {(i + 1) % n}\n" for i in range(n)))
    feats = np.arange(n * 3, dtype="<f4").reshape(n, 3)
    (root / "features.bin").write_bytes(struct.pack("<QQ", n, 3) + feats.tobytes())
    (root / "labels.txt").write_text("".join(f"{i % 2}\n" for i in range(n)))
    splits = splits or ("0 1", "2 3 4", "5 6 7 8 9")
    (root / "splits.txt").write_text(f"train: {splits[0]}\nval: {splits[1]}\ntest: {splits[2]}\n")
    if name:
        (root / "meta.txt").write_text(f"name = {name}\n")
    return root


def digest(root):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.iterdir())}


def test_load_miniature(tmp_path):
    root = write_fixture(tmp_path / "mini")
    before = digest(root)
    g = load_dataset(root)
    assert g.num_nodes == 10 and g.num_features == 3 and g.num_classes == 2
    assert not set(g.train_idx) & set(g.val_idx) and not set(g.val_idx) & set(g.test_idx)
    assert digest(root) == before


def test_overlapping_splits_rejected(tmp_path):
    root = write_fixture(tmp_path / "bad", splits=("0 1", "1 2", "3 4"))
    with pytest.raises(DataError, match="splits.txt"):
        load_dataset(root)


def test_missing_file_named(tmp_path):
    root = write_fixture(tmp_path / "m")
    (root / "labels.txt").unlink()
    with pytest.raises(DataError, match="labels.txt"):
        load_dataset(root)


def test_bad_edges_and_features(tmp_path):
    root = write_fixture(tmp_path / "e")
    (root / "edges.txt").write_text("0 99\n")
    with pytest.raises(DataError, match="edges.txt"):
        load_dataset(root)
    root = write_fixture(tmp_path / "f")
    (root / "features.bin").write_bytes(b"\0" * 20)
    with pytest.raises(DataError, match="features.bin"):
        load_dataset(root)


def test_declared_benchmark_sizes_checked(tmp_path):
    root = write_fixture(tmp_path / "c", name="cora")
    with pytest.raises(DataError, match="2708"):
        load_dataset(root)


def test_write_then_load_roundtrip(tmp_path, sbm):
    write_dataset(sbm, tmp_path / "sbm")
    g = load_dataset(tmp_path / "sbm")
    np.testing.assert_array_equal(g.features, sbm.features)
    np.testing.assert_array_equal(g.adjacency.to_dense(), sbm.adjacency.to_dense())
    for a, b in zip(g.splits, sbm.splits):
        np.testing.assert_array_equal(a, b)


def _components(graph):
    n = graph.num_nodes
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for u, v in graph_edges(graph):
        parent[find(u)] = find(v)
    return {find(i) for i in range(n)}


def test_no_cross_edges_when_p_out_zero():
    g = generate_synthetic(SyntheticSpec(num_nodes=40, num_communities=4, p_in=0.9, p_out=0.0, seed=2))
    edges = graph_edges(g)
    assert (g.labels[edges[:, 0]] == g.labels[edges[:, 1]]).all()
    assert len(_components(g)) >= 4


def test_synthetic_is_seeded():
    a = generate_synthetic(SyntheticSpec(seed=4))
    b = generate_synthetic(SyntheticSpec(seed=4))
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(graph_edges(a), graph_edges(b))
    for x, y in zip(a.splits, b.splits):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a.features, generate_synthetic(SyntheticSpec(seed=5)).features)


def test_stratified_split_sizes(sbm):
    assert [len(s) for s in sbm.splits] == [6, 12, 42]
    for part in sbm.splits:
        assert set(sbm.labels[part]) == {0, 1}


def test_logistic_baseline_on_fixture(sbm):
    assert train_dense_logistic(sbm) >= 0.95


def test_spec_validation():
    with pytest.raises(InputError):
        SyntheticSpec(kind="er")
    with pytest.raises(InputError):
        SyntheticSpec(num_nodes=1, num_communities=2)
    with pytest.raises(InputError):
        SyntheticSpec(p_in=1.5)
