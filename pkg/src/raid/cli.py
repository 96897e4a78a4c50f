"""Command-line entry point.

Each subcommand reads files, writes files atomically, and drops a JSON
manifest next to its outputs. Exit codes: 0 ok, 1 contract violation
(bad input file, failed verification, ...), 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__, formats
from .bench import run_bench
from .config import RaidConfig, dump_config, load_config, parse_config
from .controller import ControllerStartError
from .controller import start as start_controller
from .dataplane import DigestQueue, Dataplane, PipelineConfig, latency_summary, run_trace
from .encoder import EncodingError, encode_model, verify_encoding
from .evaluate import evaluate_flows, truth_by_flow
from .forest import (
    TraceOrderError,
    aggregate_metrics,
    extract_dataset,
    predict_oracle,
    split_samples,
    train_forest,
)
from .sweep import threshold_sweep
from .trafficgen import ConfigError, generate_trace

log = logging.getLogger("raid")

SWEEP_HEADER = "#raid-sweep v1"
TRAIN_REPORT_HEADER = "#raid-train-report v1"
EVAL_HEADER = "#raid-eval v1"
BENCH_HEADER = "#raid-bench v1"
VERIFY_HEADER = "#raid-verify v1"


class ContractError(RuntimeError):
    """Input or output violates a contract; maps to exit code 1."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _config(args) -> RaidConfig:
    if not args.set:
        return load_config(args.config)
    base = ""
    if args.config is not None:
        try:
            base = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    return parse_config(base + "\n" + "\n".join(args.set) + "\n")


def _read(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ContractError(f"cannot read {path}: {exc}") from None


class Manifest:
    """Collects inputs and outputs of one invocation; written last."""

    def __init__(self, subcommand: str, args, cfg: RaidConfig):
        self.subcommand = subcommand
        self.config_path = getattr(args, "config", None)
        self.cfg = cfg
        self.inputs: dict[str, dict[str, str]] = {}
        self.outputs: dict[str, str] = {}

    def read(self, role: str, path: str | Path) -> str:
        text = _read(path)
        self.inputs[role] = {"path": str(path), "sha256": formats.content_digest(text.encode())}
        return text

    def write(self, role: str, path: str | Path, text: str) -> None:
        formats.write_atomic(path, text)
        self.outputs[role] = str(path)

    def dump(self, path: str | Path) -> None:
        rendered = dump_config(self.cfg)
        doc = {
            "subcommand": self.subcommand,
            "tool_version": __version__,
            "config_path": None if self.config_path is None else str(self.config_path),
            "config_sha256": formats.content_digest(rendered.encode()),
            "seed": self.cfg.scenario.seed,
            "train_seed": self.cfg.train.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        formats.write_atomic(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest_path(out: str | Path) -> Path:
    out = Path(out)
    return out.parent / f"{out.name}.manifest.json"


def _fmt(v) -> str:
    return f"{float(v):.6f}"


def _load_trace(m: Manifest, path) -> list:
    return formats.load_trace(m.read("trace", path))


def _pipeline_config(cfg: RaidConfig, encoded=None) -> PipelineConfig:
    p = cfg.pipeline
    return PipelineConfig(encoded, p.table_bits, p.t_star, p.provisional_enabled, p.fail_open)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args, cfg: RaidConfig) -> None:
    m = Manifest("gen", args, cfg)
    trace = generate_trace(cfg.scenario)
    m.write("trace", args.out, formats.dump_trace(trace))
    m.dump(_manifest_path(args.out))
    print(f"wrote {len(trace)} packets to {args.out}")


def cmd_features(args, cfg: RaidConfig) -> None:
    m = Manifest("features", args, cfg)
    ds = extract_dataset(_load_trace(m, args.trace), cfg.train.t_max)
    m.write("features", args.out, formats.dump_features(ds.samples))
    m.dump(_manifest_path(args.out))
    print(f"{len(ds.samples)} flows, {len(ds.skipped)} skipped")


def cmd_train(args, cfg: RaidConfig) -> None:
    m = Manifest("train", args, cfg)
    tp = cfg.train
    ds = extract_dataset(_load_trace(m, args.trace), tp.t_max)
    train, test = split_samples(ds.samples, tp.test_fraction, tp.seed)
    if not train:
        raise ContractError("no trainable flows in trace")
    model = train_forest(train, tp.train_t, tp.num_trees, tp.max_depth, tp.seed)

    preds, truths = [], []
    for s in test:
        f = s.features_at.get(tp.train_t)
        if f is not None:
            preds.append(predict_oracle(model, f))
            truths.append(s.truth_label)
    agg = aggregate_metrics(preds, truths)
    items: list[tuple[str, object]] = [
        ("train_flows", len(train)),
        ("test_flows", len(test)),
        ("test_flows_scored", len(preds)),
        ("train_t", tp.train_t),
    ]
    if agg is None:
        items.append(("result", "no-data"))
    else:
        items += [("accuracy", _fmt(agg.accuracy)), ("macro_f1", _fmt(agg.macro_f1)), ("weighted_f1", _fmt(agg.weighted_f1))]

    split_path = Path(args.split or f"{args.out}.split")
    report_path = Path(f"{args.out}.report")
    m.write("model", args.out, formats.dump_model(model))
    m.write("split", split_path, formats.dump_split([s.tuple for s in train], [s.tuple for s in test]))
    m.write("report", report_path, formats.dump_kv(TRAIN_REPORT_HEADER, items))
    m.dump(_manifest_path(args.out))
    for k, v in items:
        print(f"{k} {v}")


def cmd_encode(args, cfg: RaidConfig) -> None:
    m = Manifest("encode", args, cfg)
    model = formats.load_model(m.read("model", args.model))
    encoded = encode_model(model, cfg.encoder.code_cap)
    rep = verify_encoding(model, encoded, cfg.encoder.verify_trials, cfg.encoder.verify_seed)
    if not rep.equivalent:
        raise ContractError(f"encoding not equivalent to the model: {rep.reason} at {rep.counterexample}")
    items = [
        ("equivalent", "true"),
        ("vectors_checked", rep.vectors_checked),
        ("trees", encoded.num_trees),
        *((f"ranges.{t.feature_index}", t.num_ranges) for t in encoded.feature_tables),
        *((f"leaf_entries.{k}", len(es)) for k, es in enumerate(encoded.trees)),
    ]
    m.write("entries", args.out, formats.dump_entries(encoded))
    m.write("verification", f"{args.out}.verify", formats.dump_kv(VERIFY_HEADER, items))
    m.dump(_manifest_path(args.out))
    print(f"verified over {rep.vectors_checked} vectors; wrote {args.out}")


def cmd_run(args, cfg: RaidConfig) -> None:
    m = Manifest("run", args, cfg)
    out = Path(args.out_dir)
    trace = _load_trace(m, args.trace)
    m.read("entries", args.entries)

    queue = DigestQueue(cfg.controller.queue_capacity)
    dp = Dataplane(_pipeline_config(cfg), queue)
    try:
        ctl = start_controller(dp, args.entries, consume=cfg.controller.enabled)
    except ControllerStartError as exc:
        raise ContractError(str(exc)) from None
    try:
        res = run_trace(dp.config, trace, dataplane=dp)
    finally:
        # without a consumer thread the queue just fills and counts drops
        ctl_log = ctl.stop() if cfg.controller.enabled else ctl.log
    if not cfg.controller.enabled:
        ctl_log.dropped_digests = queue.dropped
    res.stats.digests_dropped = queue.dropped

    proc = [d.processing_ns for d in res.digests]
    timing = [
        ("packets", res.stats.packets),
        *((f"per_packet.{k}", f"{v:.0f}") for k, v in res.timing.percentiles().items()),
        ("digests", len(proc)),
        *((f"digest_processing.{k}", f"{v:.0f}") for k, v in latency_summary(proc).items()),
    ]
    m.write("digests", out / "digests.log", formats.dump_digests(res.digests))
    m.write("flows", out / "flows.txt", formats.dump_flows(res.flow_report.values()))
    m.write("stats", out / "stats.txt", formats.dump_stats(res.stats))
    m.write("controller_log", out / "controller.log", formats.dump_controller_log(ctl_log))
    m.write("timing", out / "timing.txt", formats.dump_kv(formats.TIMING_HEADER, timing))
    m.dump(out / "manifest.json")
    s = res.stats
    print(f"packets {s.packets} classified {s.classified} dropped {s.dropped} collisions {s.collisions}")


def cmd_eval(args, cfg: RaidConfig) -> None:
    m = Manifest("eval", args, cfg)
    flows = formats.load_flows(m.read("flows", args.flows))
    truths = truth_by_flow(_load_trace(m, args.trace))
    only = None
    if args.split:
        only = formats.load_split(m.read("split", args.split))["test"]
    rep = evaluate_flows(flows, truths, only)
    items = rep.items(args.load)
    m.write("report", args.out, formats.dump_kv(EVAL_HEADER, items))
    m.dump(_manifest_path(args.out))
    for k, v in items:
        print(f"{k} {v}")


def cmd_sweep(args, cfg: RaidConfig) -> None:
    m = Manifest("sweep", args, cfg)
    sp = cfg.sweep
    model = formats.load_model(m.read("model", args.model))
    ds = extract_dataset(_load_trace(m, args.trace), sp.t_max)
    samples = ds.samples
    if args.split:
        test = formats.load_split(m.read("split", args.split))["test"]
        samples = [s for s in samples if s.tuple in test]
    eps = Fraction(str(args.epsilon)) if args.epsilon is not None else sp.epsilon
    res = threshold_sweep(samples, model, range(sp.t_min, sp.t_max + 1), eps)

    lines = [SWEEP_HEADER, f"epsilon {res.epsilon}", "T,M,delta_M,evaluated,undecided"]
    for t in sorted(res.m_of_t):
        d = res.delta_m.get(t)
        lines.append(f"{t},{_fmt(res.m_of_t[t])},{'-' if d is None else _fmt(d)},{res.evaluated_counts[t]},{res.undecided_counts[t]}")
    lines.append(f"t_star {res.t_star}")
    lines.append(f"rule_satisfied {'true' if res.found else 'false'}")
    m.write("table", args.out, "\n".join(lines) + "\n")
    m.dump(_manifest_path(args.out))
    print("\n".join(lines[2:]))


def cmd_bench(args, cfg: RaidConfig) -> None:
    m = Manifest("bench", args, cfg)
    trace = _load_trace(m, args.trace)
    encoded = formats.parse_entries(m.read("entries", args.entries))
    encoded.validate()
    reps = args.repetitions or cfg.bench.repetitions
    res = run_bench(trace, encoded, reps, cfg.pipeline.table_bits, cfg.pipeline.t_star)
    items = res.items()
    m.write("report", args.out, formats.dump_kv(BENCH_HEADER, items))
    m.dump(_manifest_path(args.out))
    for k, v in items:
        print(f"{k} {v}")


def cmd_all(args, cfg: RaidConfig) -> None:
    """gen -> train -> encode -> run -> eval -> sweep in one directory."""
    d = Path(args.out_dir)
    common = {"config": args.config, "set": args.set}

    def ns(**kw):
        return argparse.Namespace(**common, **kw)

    cmd_gen(ns(out=d / "trace.csv"), cfg)
    cmd_train(ns(trace=d / "trace.csv", out=d / "model.txt", split=None), cfg)
    cmd_encode(ns(model=d / "model.txt", out=d / "entries.txt"), cfg)
    cmd_run(ns(trace=d / "trace.csv", entries=d / "entries.txt", out_dir=d / "run"), cfg)
    cmd_eval(ns(flows=d / "run" / "flows.txt", trace=d / "trace.csv", split=d / "model.txt.split", load=args.load, out=d / "eval.txt"), cfg)
    cmd_sweep(ns(trace=d / "trace.csv", model=d / "model.txt", split=d / "model.txt.split", epsilon=None, out=d / "sweep.txt"), cfg)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="raid", description="Signaling-storm detection pipeline emulator.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
        p.set_defaults(func=fn)
        return p

    p = add("gen", cmd_gen, "generate a synthetic trace")
    p.add_argument("--out", required=True)

    p = add("features", cmd_features, "dump per-flow feature snapshots")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train a forest on a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--split", help="split file (default: <out>.split)")

    p = add("encode", cmd_encode, "compile a model to table entries and verify them")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = add("run", cmd_run, "replay a trace through the pipeline with the controller attached")
    p.add_argument("--trace", required=True)
    p.add_argument("--entries", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("eval", cmd_eval, "score a flow report against trace labels")
    p.add_argument("--flows", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--split", help="restrict scoring to the test flows of this split file")
    p.add_argument("--load", choices=["low", "moderate", "high"], default="low", help="which published targets to print")
    p.add_argument("--out", required=True)

    p = add("sweep", cmd_sweep, "Macro-F1 versus inference threshold")
    p.add_argument("--trace", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out", required=True)

    p = add("bench", cmd_bench, "throughput and per-packet latency")
    p.add_argument("--trace", required=True)
    p.add_argument("--entries", required=True)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--out", required=True)

    p = add("all", cmd_all, "run gen, train, encode, run, eval and sweep")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--load", choices=["low", "moderate", "high"], default="low")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"raid: config error: {exc}", file=sys.stderr)
        return 2
    try:
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"raid: config error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, formats.FormatError, EncodingError, TraceOrderError, ValueError, OSError) as exc:
        print(f"raid: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
