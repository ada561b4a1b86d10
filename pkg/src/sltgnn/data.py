"""Dataset files and the synthetic stochastic-block-model generator.

A dataset directory holds

``edges.txt``
    one ``u v`` pair per line, whitespace separated, ``#`` starts a comment
``features.bin``
    little-endian ``u64 rows, u64 cols`` followed by ``rows * cols`` f32
``labels.txt``
    one integer class per line
``splits.txt``
    three lines ``train: ...``, ``val: ...``, ``test: ...`` of node indices
``meta.txt`` (optional)
    ``key = value`` lines; ``name`` declares a known benchmark
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, InputError
from .graph import Graph

__all__ = [
    "PLANETOID_SPLITS",
    "SyntheticSpec",
    "generate_synthetic",
    "graph_edges",
    "load_dataset",
    "read_edges",
    "read_features",
    "write_dataset",
]

log = logging.getLogger(__name__)

# (nodes, features, train size) of the standard semi-supervised splits
PLANETOID_SPLITS = {
    "cora": (2708, 1433, 140),
    "citeseer": (3327, 3703, 120),
    "pubmed": (19717, 500, 60),
}
_VAL_SIZE, _TEST_SIZE = 500, 1000


def read_edges(path) -> np.ndarray:
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"line {lineno}: expected two node ids", path)
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise DataError(f"line {lineno}: node ids must be integers", path) from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise DataError("truncated header", path)
    rows, cols = struct.unpack_from("<QQ", raw, 0)
    expected = 16 + 4 * rows * cols
    if len(raw) != expected:
        raise DataError(f"expected {expected} bytes, found {len(raw)}", path)
    return np.frombuffer(raw, dtype="<f4", offset=16).astype(np.float32).reshape(rows, cols)


def _read_labels(path) -> np.ndarray:
    try:
        return np.array([int(t) for t in Path(path).read_text().split()], dtype=np.int64)
    except ValueError:
        raise DataError("labels must be integers", path) from None


def _read_splits(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    found = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, rest = line.partition(":")
        key = key.strip()
        if key not in ("train", "val", "test") or not _:
            raise DataError(f"unexpected split line {line[:40]!r}", path)
        try:
            found[key] = np.array([int(t) for t in rest.split()], dtype=np.int64)
        except ValueError:
            raise DataError(f"non-integer index in {key} split", path) from None
    missing = {"train", "val", "test"} - found.keys()
    if missing:
        raise DataError(f"missing splits {sorted(missing)}", path)
    return found["train"], found["val"], found["test"]


def _read_meta(path) -> dict:
    meta = {}
    if path.exists():
        for line in path.read_text().splitlines():
            key, sep, value = line.partition("=")
            if sep:
                meta[key.strip()] = value.strip()
    return meta


def load_dataset(path) -> Graph:
    """Load and validate a dataset directory."""
    root = Path(path)
    files = {name: root / name for name in ("edges.txt", "features.bin", "labels.txt", "splits.txt")}
    for p in files.values():
        if not p.is_file():
            raise DataError("missing file", p)
    meta = _read_meta(root / "meta.txt")
    edges = read_edges(files["edges.txt"])
    features = read_features(files["features.bin"])
    labels = _read_labels(files["labels.txt"])
    splits = _read_splits(files["splits.txt"])
    n = features.shape[0]
    if len(labels) != n:
        raise DataError(f"{len(labels)} labels for {n} nodes", files["labels.txt"])
    if len(edges) and (edges.min() < 0 or edges.max() >= n):
        raise DataError(f"edge endpoint outside [0, {n})", files["edges.txt"])
    name = meta.get("name")
    try:
        graph = Graph.from_edges(edges, features, labels, splits, name=name)
    except InputError as exc:
        raise DataError(str(exc), files["splits.txt"]) from None
    log.info(
        "loaded %s: %d nodes, %d features, splits %d/%d/%d",
        name or root.name, n, features.shape[1], *(len(s) for s in splits),
    )
    known = PLANETOID_SPLITS.get((name or "").lower())
    if known is not None:
        nodes, feats, n_train = known
        actual = (n, features.shape[1], len(splits[0]), len(splits[1]), len(splits[2]))
        if actual != (nodes, feats, n_train, _VAL_SIZE, _TEST_SIZE):
            raise DataError(f"{name} expects {nodes} nodes, {feats} features and "
                            f"{n_train}/{_VAL_SIZE}/{_TEST_SIZE} splits, found {actual}", root)
    return graph


def graph_edges(graph: Graph) -> np.ndarray:
    """Undirected edges (u < v) recovered from the graph's adjacency."""
    adj = graph.sum_adjacency or graph.adjacency
    rows = adj.row_indices()
    keep = rows < adj.col_indices
    return np.stack([rows[keep], adj.col_indices[keep]], axis=1)


def write_dataset(graph: Graph, path, name: str | None = None) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    edges = graph_edges(graph)
    (root / "edges.txt").write_text("".join(f"{u} {v}\n" for u, v in edges))
    feats = graph.features
    (root / "features.bin").write_bytes(
        struct.pack("<QQ", *feats.shape) + feats.astype("<f4").tobytes()
    )
    (root / "labels.txt").write_text("".join(f"{y}\n" for y in graph.labels))
    (root / "splits.txt").write_text("".join(
        f"{key}: {' '.join(str(i) for i in idx)}\n"
        for key, idx in zip(("train", "val", "test"), graph.splits)
    ))
    name = name or graph.name
    if name:
        (root / "meta.txt").write_text(f"name = {name}\n")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "sbm"
    num_nodes: int = 60
    num_communities: int = 2
    p_in: float = 0.5
    p_out: float = 0.02
    feature_dim: int = 16
    feature_noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind != "sbm":
            raise InputError(f"unknown synthetic kind {self.kind!r}")
        if self.num_communities < 1 or self.num_nodes < self.num_communities:
            raise InputError("need at least one node per community")
        if not (0.0 <= self.p_out <= 1.0 and 0.0 <= self.p_in <= 1.0):
            raise InputError("edge probabilities must lie in [0, 1]")
        if self.feature_dim < 1 or self.feature_noise < 0:
            raise InputError("bad feature settings")


def _stratified_split(labels: np.ndarray, rng: np.random.Generator, fractions=(0.1, 0.2)):
    train, val, test = [], [], []
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_train = max(1, round(fractions[0] * len(members)))
        n_val = round(fractions[1] * len(members))
        train.append(members[:n_train])
        val.append(members[n_train:n_train + n_val])
        test.append(members[n_train + n_val:])
    return tuple(np.sort(np.concatenate(part)) for part in (train, val, test))


def generate_synthetic(spec: SyntheticSpec) -> Graph:
    """Seeded SBM graph with noisy community-indicator features.

    Communities are contiguous, near-equal blocks of node ids; labels are the
    community ids and the split is stratified 10/20/70.
    """
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    n, c = spec.num_nodes, spec.num_communities
    labels = np.arange(n) * c // n
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], spec.p_in, spec.p_out)
    hit = rng.random(len(iu)) < prob
    edges = np.stack([iu[hit], ju[hit]], axis=1)
    features = rng.standard_normal((n, spec.feature_dim)) * spec.feature_noise
    features[np.arange(n), labels % spec.feature_dim] += 1.0
    splits = _stratified_split(labels, rng)
    return Graph.from_edges(edges, features.astype(np.float32), labels, splits, name="sbm", num_classes=c)
