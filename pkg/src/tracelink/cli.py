"""Command-line interface.

Four subcommands cover the pipeline end to end:

* generate  - write a synthetic trace file
* train     - trace in, checkpoint + loss history + attention snapshots out
* evaluate  - checkpoint + trace in, metrics document + curve data out
* report    - summarize one or more evaluation directories as a table

Every run is fully determined by its master --seed: per-stage generators are
derived from it, and identical invocations produce byte-identical outputs.
Exit codes: 0 success, 1 usage/config problem, 2 bad input data, 3 numeric
or training failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gat
from . import metrics as metrics_mod
from . import synth as synth_mod
from .config import RunConfig, apply_key, dump_config, load_config_file
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    TracelinkError,
)
from .ingest import clean_trace, parse_trace_file, write_trace
from .preprocess import (
    NodeMapping,
    apply_mapping,
    build_node_mapping,
    load_mapping,
    mapping_digest,
    save_mapping,
    segment_windows,
    span_window,
    split_train_test,
)
from .sampling import SamplingKind, SamplingStrategy, analyze_sampling
from .seeding import derive_rng, derive_seed


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the exit-code-1 path."""

    def error(self, message):
        raise ConfigError(message)


@contextmanager
def _stage(name: str):
    """Re-raise pipeline errors with the failing stage named."""
    try:
        yield
    except TracelinkError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc


# ---------------------------------------------------------------------------
# shared wiring

def _base_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    for path in args.config or []:
        load_config_file(cfg, path)
    for key, value in args.set or []:
        apply_key(cfg, key, value)
    return cfg


def _maybe(cfg_obj, attr: str, value) -> None:
    if value is not None:
        setattr(cfg_obj, attr, value)


def _fmt_float(x: float) -> str:
    return repr(float(x))


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _resolve_strategy(cfg: RunConfig, mean_pos: int, n_nodes: int) -> SamplingStrategy:
    kind = cfg.sampling.kind
    if kind == "auto":
        return analyze_sampling(
            mean_pos,
            n_nodes,
            balanced_threshold=cfg.sampling.balanced_threshold,
            moderate_threshold=cfg.sampling.moderate_threshold,
            alpha=cfg.sampling.alpha,
        )
    if kind == "advanced":
        return SamplingStrategy(SamplingKind.ADVANCED, cfg.sampling.alpha)
    return SamplingStrategy(SamplingKind(kind))


def _attention_range(cfg: RunConfig, n_nodes: int) -> tuple[int, int] | None:
    lo = cfg.attention_lo
    hi = min(cfg.attention_hi, n_nodes)
    return (lo, hi) if lo < hi else None


def _attention_csv(matrix: np.ndarray) -> str:
    return "".join(",".join(_fmt_float(x) for x in row) + "\n" for row in matrix)


# ---------------------------------------------------------------------------
# generate

def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    _maybe(cfg, "seed", args.seed)
    overrides = {
        "n_services": args.services,
        "duration": args.duration,
        "window_hint": args.window_hint,
        "events_per_window_mean": args.events_mean,
        "hub_exponent": args.hub_exponent,
        "tree_depth_mean": args.tree_depth,
        "period": args.period,
    }
    synth_cfg = cfg.synth
    for name, value in overrides.items():
        if value is not None:
            synth_cfg = replace(synth_cfg, **{name: value})
    synth_cfg = replace(synth_cfg, seed=derive_seed(cfg.seed, "synth"))
    with _stage("generate"):
        events = synth_mod.generate_trace(synth_cfg)
    out = Path(args.out)
    comment = (
        f"synthetic trace seed={cfg.seed} services={synth_cfg.n_services} "
        f"duration={synth_cfg.duration} window_hint={synth_cfg.window_hint}"
    )
    write_trace(events, out, header_comment=comment)
    print(f"wrote {len(events)} events across {synth_cfg.n_services} services to {out}")
    return 0


# ---------------------------------------------------------------------------
# train

def _load_mapped_windows(cfg: RunConfig, mapping: NodeMapping | None):
    """Ingest + clean + map + window a trace per the run settings.

    Returns (mapping, train_windows, test_windows, n_events, skipped_lines,
    skipped_unknown).  With a preexisting `mapping`, unknown services either
    fail (strict) or are dropped from the mapped events (lenient), since the
    model has no parameters for ids it never trained on.
    """
    if not cfg.trace:
        raise ConfigError("no trace file given (use --trace or the `trace` config key)")
    with _stage("ingest"):
        raw, skipped_lines = parse_trace_file(cfg.trace, cfg.trace_format)
        # Windows tile [0, t_max), so the horizon's integer timestamps end
        # at t_max - 1.
        clean = clean_trace(raw, cfg.t_max - 1)
    skipped_unknown = 0
    with _stage("mapping"):
        if mapping is None:
            mapping = build_node_mapping(clean)
            mapped = apply_mapping(clean, mapping, strict=True)
        else:
            known = mapping.n_nodes
            mapped = apply_mapping(clean, mapping, strict=cfg.strict_mapping)
            if mapping.n_nodes > known:
                before = len(mapped)
                mapped = [e for e in mapped if e.src < known and e.dst < known]
                skipped_unknown = before - len(mapped)
    with _stage("windows"):
        if cfg.temporal:
            windows = segment_windows(mapped, cfg.window_size, cfg.t_max)
            train_w, test_w = split_train_test(windows, cfg.t_train, cfg.t_max)
        else:
            train_w = [span_window(mapped, 0, cfg.t_train, index=0)]
            test_w = [span_window(mapped, cfg.t_train, cfg.t_max, index=1)]
    return mapping, train_w, test_w, len(clean), skipped_lines, skipped_unknown


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    _maybe(cfg, "trace", args.trace)
    _maybe(cfg, "out_dir", args.out)
    _maybe(cfg, "seed", args.seed)
    _maybe(cfg, "window_size", args.window_size)
    _maybe(cfg, "t_train", args.t_train)
    _maybe(cfg, "t_max", args.t_max)
    _maybe(cfg, "temporal", args.temporal)
    _maybe(cfg.model, "hidden", args.hidden)
    _maybe(cfg.model, "heads", args.heads)
    _maybe(cfg.model, "epochs", args.epochs)
    _maybe(cfg.model, "lr", args.lr)
    _maybe(cfg.sampling, "kind", args.sampling)
    _maybe(cfg.sampling, "alpha", args.alpha)
    if args.snapshot_epochs is not None:
        cfg.model.snapshot_epochs = tuple(int(p) for p in args.snapshot_epochs.split(","))
    cfg.validate()

    mapping, train_w, _, n_events, skipped_lines, _ = _load_mapped_windows(cfg, None)
    n_nodes = mapping.n_nodes
    if n_nodes < 2:
        raise DataError(f"trace has {n_nodes} distinct services; need at least 2")

    nonempty = [w for w in train_w if w.events]
    with _stage("sampling"):
        mean_pos = max(1, round(sum(len(w.events) for w in nonempty) / max(1, len(nonempty))))
        strategy = _resolve_strategy(cfg, mean_pos, n_nodes)
    with _stage("model-init"):
        params = gat.init_params(n_nodes, cfg.model.hidden, cfg.model.heads, derive_rng(cfg.seed, "init"))
    with _stage("train"):
        artifacts = gat.train(
            params,
            train_w,
            strategy,
            epochs=cfg.model.epochs,
            lr=cfg.model.lr,
            seed=cfg.seed,
            snapshot_epochs=cfg.model.snapshot_epochs,
            retry_factor=cfg.sampling.retry_factor,
        )

    out = Path(cfg.out_dir)
    with _stage("write"):
        digest = mapping_digest(mapping)
        save_mapping(mapping, out / "mapping.tsv")
        gat.save_checkpoint(params, out / "checkpoint.bin", mapping_sha256=digest)
        loss_rows = [
            f"{entry.epoch},{entry.window_index},{_fmt_float(entry.loss)}\n"
            for entry in artifacts.loss_history
        ]
        _write_text(out / "loss_history.csv", "epoch,window,loss" + "\n" + "".join(loss_rows))
        span = _attention_range(cfg, n_nodes)
        if span is not None:
            for epoch, record in sorted(artifacts.attention_snapshots.items()):
                matrix = metrics_mod.export_attention(record, span)
                _write_text(out / f"attention_epoch_{epoch:04d}.csv", _attention_csv(matrix))
        _write_text(out / "run_config.txt", dump_config(cfg))
        meta = {
            "n_nodes": n_nodes,
            "n_events": n_events,
            "n_train_windows": len(train_w),
            "n_nonempty_train_windows": len(nonempty),
            "skipped_lines": skipped_lines,
            "resolved_sampling": strategy.kind.value,
            "alpha": strategy.alpha,
            "mapping_sha256": digest,
        }
        _write_text(out / "train_meta.json", json.dumps(meta, sort_keys=True, indent=2) + "\n")

    by_epoch: dict[int, list[float]] = {}
    for entry in artifacts.loss_history:
        by_epoch.setdefault(entry.epoch, []).append(entry.loss)
    final_epoch = max(by_epoch)
    final_loss = float(np.mean(by_epoch[final_epoch]))
    print(
        f"trained {cfg.model.epochs} epochs over {len(nonempty)} windows "
        f"({strategy.kind.value} sampling); final epoch mean loss {final_loss:.4f}; "
        f"artifacts in {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# evaluate

def _metrics_block(auc_value: float, conf, scalars) -> dict:
    return {
        "auc": auc_value,
        "accuracy": scalars.accuracy,
        "precision": scalars.precision,
        "recall": scalars.recall,
        "f1": scalars.f1,
        "tp": conf.tp,
        "fp": conf.fp,
        "fn": conf.fn,
        "tn": conf.tn,
        "flagged": sorted(scalars.flagged),
    }


def _curve_csv_pr(points) -> str:
    rows = [f"{_fmt_float(p.threshold)},{_fmt_float(p.precision)},{_fmt_float(p.recall)}\n" for p in points]
    return "threshold,precision,recall\n" + "".join(rows)


def _curve_csv_roc(points) -> str:
    rows = [f"{_fmt_float(p.threshold)},{_fmt_float(p.fpr)},{_fmt_float(p.tpr)}\n" for p in points]
    return "threshold,fpr,tpr\n" + "".join(rows)


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    _maybe(cfg, "trace", args.trace)
    _maybe(cfg, "out_dir", args.out)
    _maybe(cfg, "seed", args.seed)
    _maybe(cfg, "window_size", args.window_size)
    _maybe(cfg, "t_train", args.t_train)
    _maybe(cfg, "t_max", args.t_max)
    _maybe(cfg, "temporal", args.temporal)
    _maybe(cfg.model, "tau", args.tau)
    _maybe(cfg.sampling, "eval_kind", args.eval_sampling)
    _maybe(cfg.sampling, "alpha", args.alpha)
    if args.lenient:
        cfg.strict_mapping = False
    cfg.validate()

    checkpoint_path = Path(args.checkpoint)
    with _stage("checkpoint"):
        params, stored_digest = gat.load_checkpoint(checkpoint_path)
    mapping_path = Path(args.mapping) if args.mapping else checkpoint_path.parent / "mapping.tsv"
    with _stage("mapping"):
        if not mapping_path.exists():
            raise DataError(f"mapping file not found: {mapping_path}")
        mapping = load_mapping(mapping_path)
        if stored_digest and mapping_digest(mapping) != stored_digest:
            if cfg.strict_mapping:
                raise CheckpointError(
                    f"mapping file {mapping_path} does not match the checkpoint's stored hash; "
                    "pass --lenient to evaluate anyway"
                )
            print(f"warning: mapping hash mismatch for {mapping_path}", file=sys.stderr)
        if mapping.n_nodes != params.dims.n_nodes:
            raise CheckpointError(
                f"mapping has {mapping.n_nodes} services but the checkpoint expects "
                f"{params.dims.n_nodes}"
            )

    _, _, test_w, _, skipped_lines, skipped_unknown = _load_mapped_windows(cfg, mapping)

    eval_kind = cfg.sampling.eval_kind
    if eval_kind == "advanced":
        strategy = SamplingStrategy(SamplingKind.ADVANCED, cfg.sampling.alpha)
    else:
        strategy = SamplingStrategy(SamplingKind(eval_kind))
    with _stage("evaluate"):
        report = metrics_mod.evaluate_windows(
            params,
            test_w,
            strategy,
            tau=cfg.model.tau,
            seed=cfg.seed,
            retry_factor=cfg.sampling.retry_factor,
        )

    out = Path(cfg.out_dir)
    with _stage("write"):
        doc = {
            "tau": cfg.model.tau,
            "sampling": {"kind": strategy.kind.value, "alpha": strategy.alpha},
            "pooled": _metrics_block(report.pooled_auc, report.pooled_confusion, report.pooled_metrics),
            "macro": report.macro,
            "windows": {
                f"{r.window_index:04d}": _metrics_block(r.auc, r.confusion, r.metrics)
                for r in report.windows
            },
            "n_test_windows": len(report.windows),
            "skipped_lines": skipped_lines,
            "skipped_unknown_events": skipped_unknown,
        }
        _write_text(out / "metrics.json", json.dumps(doc, sort_keys=True, indent=2) + "\n")
        _write_text(out / "pr_pooled.csv", _curve_csv_pr(report.pooled_pr))
        _write_text(out / "roc_pooled.csv", _curve_csv_roc(report.pooled_roc))
        for r in report.windows:
            tag = f"{r.window_index:04d}"
            _write_text(out / f"pr_window_{tag}.csv", _curve_csv_pr(r.pr))
            _write_text(out / f"roc_window_{tag}.csv", _curve_csv_roc(r.roc))
            pair_rows = [
                f"{p.src},{p.dst},{_fmt_float(p.score)},{p.label}\n" for p in r.pairs
            ]
            _write_text(out / f"scored_window_{tag}.csv", "src,dst,score,label\n" + "".join(pair_rows))
        if report.last_attention is not None:
            span = _attention_range(cfg, params.dims.n_nodes)
            if span is not None:
                matrix = metrics_mod.export_attention(report.last_attention, span)
                _write_text(out / "attention_test.csv", _attention_csv(matrix))

    pooled = report.pooled_metrics
    print(
        f"evaluated {len(report.windows)} windows: AUC {report.pooled_auc:.4f}, "
        f"accuracy {pooled.accuracy:.4f}, F1 {pooled.f1:.4f}; results in {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# report

def cmd_report(args: argparse.Namespace) -> int:
    rows = []
    for run_dir in args.runs:
        path = Path(run_dir) / "metrics.json"
        if not path.exists():
            raise DataError(f"no metrics.json under {run_dir}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        pooled = doc["pooled"]
        rows.append(
            (
                str(run_dir),
                pooled["auc"],
                pooled["accuracy"],
                pooled["precision"],
                pooled["recall"],
                pooled["f1"],
            )
        )
    name_width = max(len("run"), *(len(r[0]) for r in rows))
    header = f"{'run':<{name_width}}  {'auc':>7}  {'acc':>7}  {'prec':>7}  {'recall':>7}  {'f1':>7}"
    print(header)
    print("-" * len(header))
    for name, *vals in rows:
        print(f"{name:<{name_width}}  " + "  ".join(f"{v:7.4f}" for v in vals))
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tracelink", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", action="append", metavar="FILE", help="key=value config file (repeatable)")
        p.add_argument("--set", nargs=2, action="append", metavar=("KEY", "VALUE"), help="override one config key")
        p.add_argument("--seed", type=int, help="master seed (default 0)")

    gen = sub.add_parser("generate", help="write a synthetic trace")
    add_common(gen)
    gen.add_argument("--out", required=True, help="trace file to write")
    gen.add_argument("--services", type=int, help="number of services")
    gen.add_argument("--duration", type=int, help="trace horizon in ms")
    gen.add_argument("--window-hint", type=int, dest="window_hint", help="load modulation granularity in ms")
    gen.add_argument("--events-mean", type=float, dest="events_mean", help="mean events per window")
    gen.add_argument("--hub-exponent", type=float, dest="hub_exponent", help="callee popularity skew (>1)")
    gen.add_argument("--tree-depth", type=float, dest="tree_depth", help="mean call-tree size (>1)")
    gen.add_argument("--period", type=int, help="load modulation period in ms")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train a model from a trace")
    add_common(tr)
    tr.add_argument("--trace", help="input trace file")
    tr.add_argument("--out", help="output directory")
    tr.add_argument("--window-size", type=int, dest="window_size")
    tr.add_argument("--t-train", type=int, dest="t_train")
    tr.add_argument("--t-max", type=int, dest="t_max")
    tr.add_argument("--temporal", action=argparse.BooleanOptionalAction, default=None,
                    help="window the trace (default) or train on one static graph")
    tr.add_argument("--hidden", type=int)
    tr.add_argument("--heads", type=int)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--sampling", choices=("auto", "none", "simple", "advanced"))
    tr.add_argument("--alpha", type=float)
    tr.add_argument("--snapshot-epochs", dest="snapshot_epochs", help="comma list of epochs to snapshot attention at")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="score test windows with a checkpoint")
    add_common(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--trace", help="trace file (defaults to the `trace` config key)")
    ev.add_argument("--mapping", help="mapping file (default: mapping.tsv next to the checkpoint)")
    ev.add_argument("--out", help="output directory")
    ev.add_argument("--window-size", type=int, dest="window_size")
    ev.add_argument("--t-train", type=int, dest="t_train")
    ev.add_argument("--t-max", type=int, dest="t_max")
    ev.add_argument("--temporal", action=argparse.BooleanOptionalAction, default=None)
    ev.add_argument("--tau", type=float, help="classification threshold (default 0.5)")
    ev.add_argument("--eval-sampling", dest="eval_sampling", choices=("none", "simple", "advanced"),
                    help="how to draw contrast negatives (default advanced)")
    ev.add_argument("--alpha", type=float)
    ev.add_argument("--lenient", action="store_true",
                    help="drop events for unknown services instead of failing")
    ev.set_defaults(func=cmd_evaluate)

    rep = sub.add_parser("report", help="tabulate metrics from evaluation runs")
    rep.add_argument("runs", nargs="+", help="evaluation output directories")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TracelinkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
