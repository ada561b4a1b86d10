"""Sparsity sweeps: one isolated training run per (method, sparsity, seed)."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

from .compressor import memory_report
from .config import Method, RunConfig, parse_method
from .errors import SltgnnError, TrainingDivergence
from .graph import Graph
from .models import build_model
from .trainer import TrainResult, make_plan, train

__all__ = ["CSV_FIELDS", "RunOutcome", "read_rows", "run_cell", "run_single", "sweep", "write_rows"]

log = logging.getLogger(__name__)

CSV_FIELDS = (
    "method", "N", "threshold_mode", "sparsity", "seed", "epoch_best",
    "acc_train", "acc_val", "acc_test", "mask_bytes", "paper_formula_bytes",
    "params", "macs_linear", "status",
)


@dataclass
class RunOutcome:
    result: TrainResult
    row: dict


def run_single(config: RunConfig, graph: Graph, method: Method, sparsity: float, seed: int) -> RunOutcome:
    """Train one model and collect its sweep row."""
    spec = config.model_spec(graph, seed=seed)
    plan = make_plan(
        spec, graph, sparsity, method.coats, config.plan.threshold,
        cfg=config.train, alpha=config.plan.alpha, scope=config.threshold_scope,
        normalization=config.plan.normalization,
    )
    model = build_model(spec, sparsity)
    result = train(model, graph, plan, config.train)
    report = memory_report(model, plan, graph.num_nodes)
    row = {
        "method": "S-Sup" if method.name == "s-sup" else "M-Sup",
        "N": method.coats,
        "threshold_mode": plan.threshold_mode.value,
        "sparsity": sparsity,
        "seed": seed,
        "epoch_best": result.best_epoch,
        "acc_train": result.acc_train,
        "acc_val": result.acc_val,
        "acc_test": result.acc_test,
        "mask_bytes": report.mask_bytes,
        "paper_formula_bytes": report.paper_formula_bits / 8,
        "params": report.params_total,
        "macs_linear": report.macs_linear,
        "status": "ok",
    }
    return RunOutcome(result, row)


@lru_cache(maxsize=4)
def _graph_for(config: RunConfig) -> Graph:
    return config.load_graph()


def run_cell(config: RunConfig, method_text: str, sparsity: float, seed: int) -> dict:
    """Sweep cell; failures come back as a row with a non-``ok`` status."""
    method = parse_method(method_text)
    try:
        return run_single(config, _graph_for(config), method, sparsity, seed).row
    except TrainingDivergence as exc:
        status = f"diverged at epoch {exc.epoch}"
    except (SltgnnError, ValueError, FloatingPointError) as exc:
        status = f"error: {exc}"
    log.warning("cell %s k=%s seed=%d failed: %s", method_text, sparsity, seed, status)
    row = dict.fromkeys(CSV_FIELDS, "")
    row.update(
        method="S-Sup" if method.name == "s-sup" else "M-Sup", N=method.coats,
        threshold_mode=config.plan.threshold, sparsity=sparsity, seed=seed, status=status,
    )
    return row


def _cells(config: RunConfig, base_seed: int):
    for method in config.sweep.methods:
        for k in config.sweep.grid:
            for i in range(config.sweep.repeats):
                yield method, k, base_seed + i


def sweep(config: RunConfig, base_seed: int | None = None, workers: int | None = None) -> list[dict]:
    """All rows in (method, sparsity, seed) order, regardless of worker count."""
    base = config.model.seed if base_seed is None else base_seed
    cells = list(_cells(config, base))
    workers = config.sweep.workers if workers is None else workers
    if workers <= 1:
        return [run_cell(config, *c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_cell, *zip(*[(config, *c) for c in cells])))


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(rows, out=None) -> str:
    """CSV text of ``rows``; also written to ``out`` when given."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        writer.writerow([_fmt(row[f]) for f in CSV_FIELDS])
    text = buf.getvalue()
    if out is not None:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    return text


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: header does not match the sweep schema")
        return list(reader)
