"""Command-line entry point wiring every module together.

Subcommands: gen, build-tables, plan, simulate, sweep, serve-cloud, run-edge,
report. Exit codes: 0 success, 2 usage error, 1 runtime failure. All outputs
are deterministic given identical inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from edgesplit import latency, planner, profiles, simulate, synthetic, tables, transport

_BW_UNITS = {"": 1.0, "bps": 1.0, "kbps": 1e3, "mbps": 1e6, "gbps": 1e9}


def parse_bandwidth(text: str) -> float:
    """Bandwidth with optional decimal unit suffix: '300KBps', '1.5MBps', '250000'.

    Units are bytes per second, decimal multiples (KB = 1000 bytes).
    """
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*([a-zA-Z]*)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"cannot parse bandwidth '{text}'")
    value, unit = m.groups()
    unit = unit.lower()
    if unit not in _BW_UNITS:
        raise argparse.ArgumentTypeError(f"unknown bandwidth unit '{unit}' in '{text}'")
    try:
        bw = float(value) * _BW_UNITS[unit]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse bandwidth '{text}'") from None
    if bw <= 0:
        raise argparse.ArgumentTypeError(f"bandwidth must be > 0, got '{text}'")
    return bw


def _csv_list(parse):
    def inner(text: str):
        return [parse(part) for part in text.split(",") if part.strip()]

    return inner


def _print_decision(decision: planner.PlanDecision) -> None:
    print(f"split_layer: {decision.split_layer}")
    print(f"bit_depth: {decision.bit_depth}")
    print(f"edge_s: {decision.edge_s:.6f}")
    print(f"trans_s: {decision.trans_s:.6f}")
    print(f"cloud_s: {decision.cloud_s:.6f}")
    print(f"total_s: {decision.total_s:.6f}")
    print(f"predicted_accuracy_loss: {decision.predicted_accuracy_loss:.6f}")
    print(f"solver: {decision.solver}")


def cmd_gen(args) -> int:
    model = profiles.load_model_profile(args.model)
    if args.spec:
        spec = synthetic.load_generator_spec(args.spec)
    else:
        spec = synthetic.GeneratorSpec.from_model(model, seed=args.seed)
    if args.spec_out:
        spec.save(args.spec_out)
        print(f"wrote generator spec to {args.spec_out}")
    records = synthetic.gen_calibration_corpus(spec, model, args.bits, args.samples)
    n = tables.write_records(args.records_out, records)
    print(f"wrote {n} calibration records to {args.records_out}")
    return 0


def cmd_build_tables(args) -> int:
    model = profiles.load_model_profile(args.model)
    records = tables.read_records(args.records)
    built = tables.build_tables(records, model, args.bits, size_stat=args.size_stat)
    built.save(args.out)
    print(f"wrote tables ({built.n_layers} layers x bits {list(built.bit_depths)}) to {args.out}")
    return 0


def _load_planning_inputs(args):
    model = profiles.load_model_profile(args.model)
    edge = profiles.load_device_profile(args.edge)
    cloud = profiles.load_device_profile(args.cloud)
    tbl = tables.load_tables(args.tables)
    lat = latency.model_from_devices(model, edge, cloud)
    return model, tbl, lat


def cmd_plan(args) -> int:
    model, tbl, lat = _load_planning_inputs(args)
    grid = planner.build_grid(model, lat, tbl, args.bw, args.max_loss)
    decision = planner.solve(grid, args.solver)
    _print_decision(decision)
    if args.json_out:
        Path(args.json_out).write_text(decision.to_json() + "\n")
    return 0


def cmd_simulate(args) -> int:
    scenario = profiles.load_scenario(args.scenario)
    corpus = synthetic.load_generator_spec(args.corpus) if args.corpus else None
    stream = simulate.RequestStream(count=args.requests, inter_arrival_s=args.inter_arrival, corpus=corpus)
    report = simulate.run(scenario, stream, mode=args.mode, rtt_s=args.rtt)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_csv(out_dir / "requests.csv")
    report.plans_csv(out_dir / "plans.csv")
    (out_dir / "summary.txt").write_text(report.summary() + "\n")
    print(report.summary())
    print(f"wrote requests.csv, plans.csv, summary.txt to {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    scenario = profiles.load_scenario(args.scenario)
    stream = simulate.RequestStream(count=args.requests, inter_arrival_s=args.inter_arrival)
    if args.alphas is not None:
        rows = simulate.sweep_accuracy(scenario, args.alphas, stream)
    elif args.bandwidths is not None:
        rows = simulate.sweep_bandwidth(scenario, args.bandwidths, stream)
    else:
        rows = simulate.sweep_edge_power(scenario, args.edge_flops, stream)
    text = simulate.sweep_rows_csv(rows, args.out)
    if args.out:
        print(f"wrote sweep to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    model = profiles.load_model_profile(args.model)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = profiles.amplification_report(model)
    amp_path = out_dir / "amplification.csv"
    with open(amp_path, "w", newline="") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        writer.writerow(["index", "name", "output_elements", "feature_bytes_raw",
                         "ratio_vs_input_raw", "ratio_vs_input_encoded"])
        for r in rows:
            writer.writerow([r["index"], r["name"], r["output_elements"], r["feature_bytes_raw"],
                             repr(r["ratio_vs_input_raw"]), repr(r["ratio_vs_input_encoded"])])
    print(f"wrote {amp_path}")
    amplified = [r for r in rows if r["ratio_vs_input_raw"] > 1.0]
    print(f"{len(amplified)}/{len(rows)} decoupling points amplify the raw input")
    if args.tables:
        tbl = tables.load_tables(args.tables)
        tbl.export_csv(out_dir / "accuracy_loss.csv", out_dir / "expected_size.csv")
        print(f"wrote {out_dir / 'accuracy_loss.csv'} and {out_dir / 'expected_size.csv'}")
    return 0


def cmd_serve_cloud(args) -> int:
    lat = None
    if args.scenario:
        scenario = profiles.load_scenario(args.scenario)
        lat = latency.model_from_devices(scenario.model, scenario.edge, scenario.cloud)
    service = transport.CloudService(
        host=args.host,
        port=args.port,
        time_scale=args.time_scale,
        cloud_suffix_s=(lat.cloud_time if lat is not None else None),
    )
    service.start()
    host, port = service.address
    print(f"cloud service listening on {host}:{port}")
    try:
        import signal
        import threading

        stop = threading.Event()
        signal.signal(signal.SIGINT, lambda *_: stop.set())
        signal.signal(signal.SIGTERM, lambda *_: stop.set())
        while not stop.wait(0.2):
            pass
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()
        print(f"served {service.requests_served} requests, {service.errors_sent} errors")
    return 0


def cmd_run_edge(args) -> int:
    scenario = profiles.load_scenario(args.scenario)
    corpus = (
        synthetic.load_generator_spec(args.corpus)
        if args.corpus
        else synthetic.GeneratorSpec.from_model(scenario.model, seed=args.seed)
    )
    lat = latency.model_from_devices(scenario.model, scenario.edge, scenario.cloud)
    controller = planner.PlanController(
        scenario.model, lat, scenario.tables, scenario.accuracy_budget, min_split_layer=1
    )
    inter = args.inter_arrival

    def bw_of(k: int) -> float:
        return simulate.bandwidth_at(scenario.bandwidth_trace, k * inter)

    agent = transport.EdgeAgent(
        args.host,
        args.port,
        controller,
        corpus,
        bandwidth_for_request=bw_of,
        request_count=args.requests,
        time_scale=args.time_scale,
        edge_prefix_s=lat.edge_time,
    )
    report = agent.run()
    ok = report.digests_match and report.epoch_mixing_violations == 0
    print(
        f"completed {len(report.requests)}/{args.requests} requests; "
        f"digests_match={report.digests_match} epoch_mixing={report.epoch_mixing_violations} "
        f"resyncs={report.resyncs} reconnects={report.reconnects} rejected={report.rejected_blocks}"
    )
    return 0 if ok and len(report.requests) == args.requests else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgesplit",
        description="Plan, simulate, and run edge/cloud split inference with quantized feature transfer.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="enable info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic calibration corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--spec", help="generator spec file (derived from the model when omitted)")
    p.add_argument("--spec-out", help="write the (possibly derived) generator spec here")
    p.add_argument("--bits", type=_csv_list(int), required=True, help="comma-separated bit depths")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--records-out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build-tables", help="aggregate calibration records into lookup tables")
    p.add_argument("--model", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--bits", type=_csv_list(int), required=True)
    p.add_argument("--size-stat", choices=("mean", "p95"), default="mean")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_tables)

    p = sub.add_parser("plan", help="solve one split decision")
    p.add_argument("--model", required=True)
    p.add_argument("--tables", required=True)
    p.add_argument("--edge", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--bw", type=parse_bandwidth, required=True, help="e.g. 300KBps, 1MBps, 250000")
    p.add_argument("--max-loss", type=float, required=True)
    p.add_argument("--solver", choices=planner.SOLVERS, default="exhaustive")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="replay a request stream through a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--requests", type=int, default=100)
    p.add_argument("--inter-arrival", type=float, default=0.0)
    p.add_argument("--mode", choices=("table", "payload"), default="table")
    p.add_argument("--corpus", help="generator spec for payload mode")
    p.add_argument("--rtt", type=float, default=0.0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="sweep accuracy budget, bandwidth, or edge power")
    p.add_argument("--scenario", required=True)
    p.add_argument("--requests", type=int, default=1)
    p.add_argument("--inter-arrival", type=float, default=0.0)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--alphas", type=_csv_list(float))
    group.add_argument("--bandwidths", type=_csv_list(parse_bandwidth))
    group.add_argument("--edge-flops", type=_csv_list(float))
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="amplification report and table CSV exports")
    p.add_argument("--model", required=True)
    p.add_argument("--tables")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve-cloud", help="run the cloud half of the pipeline")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7420)
    p.add_argument("--scenario", help="used for the stub compute delay")
    p.add_argument("--time-scale", type=float, default=0.0)
    p.set_defaults(func=cmd_serve_cloud)

    p = sub.add_parser("run-edge", help="run the edge half against a cloud service")
    p.add_argument("--scenario", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7420)
    p.add_argument("--requests", type=int, default=10)
    p.add_argument("--inter-arrival", type=float, default=0.0)
    p.add_argument("--corpus", help="generator spec for payload maps (derived from the model when omitted)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--time-scale", type=float, default=0.0)
    p.set_defaults(func=cmd_run_edge)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except (ValueError, OSError, transport.ProtocolError, ConnectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
