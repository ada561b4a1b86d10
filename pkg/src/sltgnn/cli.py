"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .compressor import memory_report, pack, read_packed, sparse_inference, unpack, write_packed
from .config import Method, RunConfig
from .data import write_dataset
from .errors import ConfigError, DataError, FormatError, InputError, TrainingDivergence
from .models import BatchNormState, Model, ModelSpec, build_model
from .supermask import SparsityPlan
from .sweep import run_single, sweep, write_rows
from .trainer import accuracy

log = logging.getLogger("sltgnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="model seed (base seed for sweeps)")
    p.add_argument("--sparsity", help="comma-separated sparsities; train uses the first")
    p.add_argument("--coats", type=int, help="number of coats N (1 = S-Sup)")
    p.add_argument("--threshold", choices=["uniform", "linear", "adaptive-linear"])
    p.add_argument("--fold", help="none, ssf or msf:M")
    p.add_argument("--masks", choices=["shared", "unshared"])
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sltgnn", description="Multicoated supermask GNNs on frozen random weights.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train scores for one configuration")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="accuracy of a packed model on a dataset")
    _add_run_flags(p)
    p.add_argument("model", help="packed .sltg file")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])

    p = sub.add_parser("sweep", help="accuracy-versus-sparsity sweep to CSV")
    _add_run_flags(p)
    p.add_argument("--workers", type=int)

    p = sub.add_parser("pack", help="pack a training checkpoint into a .sltg file")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True, help="output .sltg path")

    p = sub.add_parser("unpack", help="regenerate weights and masks from a .sltg file")
    p.add_argument("model")
    p.add_argument("--out", required=True, help="output .npz path")

    p = sub.add_parser("report", help="memory, parameter and MAC accounting of a .sltg file")
    p.add_argument("model")
    p.add_argument("--nodes", type=int, default=0, help="node count for MACs")

    p = sub.add_parser("synth", help="write a synthetic SBM dataset directory")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("plot", help="accuracy-versus-sparsity plot from a sweep CSV")
    p.add_argument("csv")
    p.add_argument("--out", required=True, help="image path")
    return parser


def _parse_sparsities(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise UsageError(f"bad sparsity list {text!r}") from None


def _config_from_args(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    values = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value
    if getattr(args, "out", None) and args.command in ("train", "sweep"):
        values["output.dir"] = args.out
    if args.seed is not None:
        key = "synthetic.seed" if args.command == "synth" else "model.seed"
        values[key] = str(args.seed)
    for flag, key in (("coats", "plan.coats"), ("threshold", "plan.threshold"),
                      ("fold", "model.fold"), ("masks", "model.masks"), ("workers", "sweep.workers")):
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = str(value)
    sparsity = getattr(args, "sparsity", None)
    if sparsity:
        ks = _parse_sparsities(sparsity)
        values["sweep.grid"] = ",".join(repr(k) for k in ks)
        values["plan.sparsity"] = repr(ks[0])
    return config.with_values(values)


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path, model: Model, plan: SparsityPlan) -> None:
    """Trained scores and norm state plus the spec and plan that produced them."""
    meta = json.dumps({
        "model": model.spec.to_dict(),
        "plan": {"sparsities": list(plan.sparsities), "threshold_mode": plan.threshold_mode.value,
                 "alpha": plan.alpha, "scope": plan.scope, "requested_coats": plan.requested_coats},
    }, sort_keys=True)
    arrays = {"meta": np.array(meta)}
    for i, s in enumerate(model.scores):
        arrays[f"score_{i}"] = s
    for i, bn in enumerate(model.norms):
        arrays[f"bn_{i}"] = np.stack([bn.gamma, bn.beta, bn.running_mean, bn.running_var])
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[Model, SparsityPlan]:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            spec = ModelSpec.from_dict(meta["model"])
            plan = SparsityPlan(**meta["plan"])
            model = build_model(spec, plan.k1)
            model.scores = [z[f"score_{i}"].astype(np.float32) for i in range(len(model.scores))]
            for i, bn in enumerate(model.norms):
                g, b, m, v = z[f"bn_{i}"]
                model.norms[i] = BatchNormState(g.copy(), b.copy(), m.copy(), v.copy(), bn.eps, bn.momentum)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"bad checkpoint: {exc}", path) from None
    return model, plan


# -- commands -----------------------------------------------------------------


def _cmd_train(args) -> int:
    config = _config_from_args(args)
    graph = config.load_graph()
    method = Method("s-sup" if config.plan.coats == 1 else "m-sup", config.plan.coats)
    outcome = run_single(config, graph, method, config.plan.sparsity, config.model.seed)
    out = Path(config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    result = outcome.result
    save_checkpoint(out / "checkpoint.npz", result.model, result.plan)
    write_packed(pack(result.model, result.plan), out / "model.sltg")
    with open(out / "history.csv", "w") as fh:
        fh.write("epoch,live_sparsity,pruned_fraction,loss,acc_train,acc_val,acc_test,val_loss\n")
        for r in result.history:
            fh.write(f"{r.epoch},{r.live_sparsity!r},{r.pruned_fraction!r},{r.loss!r},"
                     f"{r.acc_train!r},{r.acc_val!r},{r.acc_test!r},{r.val_loss!r}\n")
    write_rows([outcome.row], out / "summary.csv")
    print(f"K={list(result.plan.sparsities)} best epoch {result.best_epoch}: "
          f"train {result.acc_train:.4f} val {result.acc_val:.4f} test {result.acc_test:.4f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _config_from_args(args)
    graph = config.load_graph()
    packed = read_packed(args.model)
    logits = sparse_inference(packed, graph)
    acc = accuracy(logits, graph.labels, graph.split(args.split))
    print(f"{args.split} accuracy {acc:.4f}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _config_from_args(args)
    rows = sweep(config)
    out = Path(config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out / "sweep.csv")
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} runs written to {out / 'sweep.csv'} ({failed} failed)")
    return EXIT_OK


def _cmd_pack(args) -> int:
    model, plan = load_checkpoint(args.checkpoint)
    size = write_packed(pack(model, plan), args.out)
    print(f"{args.out}: {size} bytes")
    return EXIT_OK


def _cmd_unpack(args) -> int:
    model = unpack(read_packed(args.model))
    arrays = {}
    for i, w in enumerate(model.weights):
        arrays[f"weight_{i}"] = w
    for i, c in enumerate(model.frozen_counts):
        arrays[f"counts_{i}"] = c
    with open(args.out, "wb") as fh:
        np.savez(fh, **arrays)
    print(f"{args.out}: {len(model.weights)} weight sets, {len(model.frozen_counts)} count tensors")
    return EXIT_OK


def _cmd_report(args) -> int:
    packed = read_packed(args.model)
    model = unpack(packed)
    r = memory_report(model, packed.plan, args.nodes)
    print(f"coats K                {list(packed.plan.sparsities)}")
    print(f"mask bits (encoded)    {r.mask_bits}")
    print(f"mask bits (formula)    {r.paper_formula_bits:.1f}")
    print(f"mask bits (nested)     {r.nested_formula_bits:.1f}")
    print(f"stored real bits       {r.stored_real_bits}")
    print(f"total bytes            {r.total_bytes} ({r.total_mib:.4f} MiB)")
    print(f"dense 32-bit bytes     {r.dwl_bytes} ({r.dwl_mib:.4f} MiB)")
    print(f"params                 {r.params_total:.1f}")
    if args.nodes:
        print(f"linear MACs            {r.macs_linear} ({r.macs_linear_bils:.4f} Bils, dense {r.macs_dense})")
    return EXIT_OK


def _cmd_synth(args) -> int:
    config = _config_from_args(args)
    graph = config.load_graph() if not config.dataset.path else None
    if graph is None:
        raise UsageError("synth ignores dataset.path; leave it empty")
    write_dataset(graph, args.out, name="sbm")
    print(f"{args.out}: {graph.num_nodes} nodes, {graph.num_classes} classes")
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plotting import emit_plot

    labels = emit_plot(args.csv, args.out)
    print(f"{args.out}: {len(labels)} series")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "pack": _cmd_pack,
    "unpack": _cmd_unpack,
    "report": _cmd_report,
    "synth": _cmd_synth,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"sltgnn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, InputError, OSError) as exc:
        print(f"sltgnn: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"sltgnn: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
