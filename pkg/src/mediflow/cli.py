"""Command-line entry point: server, devices, fleet, benchmarks, seed data."""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from pathlib import Path

from .bench import emit_report, run_accuracy, run_load
from .config import RunConfig, find_config, resolve
from .domain import SyringeKinematics
from .pump import (
    DeviceConfig,
    HttpTransport,
    SimulatedClock,
    WallClock,
    run_session,
)
from .server import ApiHTTPServer, Application, seed_demo
from .store import EventStore


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mediflow",
                                     description="Infusion pump platform: server, "
                                                 "simulated devices, and benchmarks.")
    parser.add_argument("--config", help="config file (toml or json); "
                                         "also read from $MEDIFLOW_CONFIG")
    sub = parser.add_subparsers(dest="mode", required=True)

    p = sub.add_parser("serve", help="run the HTTP server")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--data", dest="data_dir", help="event-log directory (omit for in-memory)")
    p.add_argument("--ttl", dest="ttl_s", type=float, help="token lifetime in seconds")
    p.add_argument("--poll-interval", dest="poll_interval_s", type=float,
                   help="poll advice reported by /api/health")
    p.add_argument("--static-dir", help="directory served under /app")
    p.add_argument("--purge-interval", dest="purge_interval_s", type=float,
                   help="expired-token purge cadence in seconds")

    p = sub.add_parser("seed-data", help="create demo physician, devices, and orders")
    p.add_argument("--data", dest="data_dir")
    p.add_argument("--devices", type=int)
    p.add_argument("--volume", dest="volume_ml", type=float)
    p.add_argument("--rate", dest="rate_ml_h", type=float)

    p = sub.add_parser("device", help="run one simulated infusion session")
    _add_device_flags(p)
    p.add_argument("--username")
    p.add_argument("--password")
    p.add_argument("--mac")
    p.add_argument("--patient", dest="patient_id")
    p.add_argument("--trace-out", help="write the drop trace CSV here")

    p = sub.add_parser("fleet", help="run many simulated devices concurrently")
    _add_device_flags(p)
    p.add_argument("--devices", type=int)
    p.add_argument("--base-seed", dest="base_seed", type=int)

    bench = sub.add_parser("bench", help="benchmarks").add_subparsers(
        dest="bench_mode", required=True)

    p = bench.add_parser("load", help="closed-loop multi-user load run")
    p.add_argument("--server", dest="server_url")
    p.add_argument("--users", type=int)
    p.add_argument("--duration", dest="duration_s", type=float)
    p.add_argument("--think", dest="think_s", type=float,
                   help="per-user pause between requests, seconds")
    p.add_argument("--include-records", dest="include_records", type=_parse_bool,
                   help="mix infusion-record posts into the loop (default false)")
    p.add_argument("--out", help="report file path")
    p.add_argument("--format", dest="report_format", choices=("csv", "json"))

    p = bench.add_parser("accuracy", help="simulated infusion accuracy runs")
    p.add_argument("--volume", dest="volume_ml", type=float)
    p.add_argument("--rate", dest="rate_ml_h", type=float)
    p.add_argument("--runs", type=int)
    p.add_argument("--seeds", type=_parse_seeds, help="comma-separated, e.g. 1,2,3")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--poll-interval", dest="poll_interval_s", type=float)
    p.add_argument("--out", help="report file path")
    p.add_argument("--format", dest="report_format", choices=("csv", "json"))

    return parser


def _add_device_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--server", dest="server_url")
    p.add_argument("--realtime", type=_parse_bool,
                   help="true: wall clock; false: simulated time (default)")
    p.add_argument("--time-scale", dest="time_scale", type=float,
                   help="simulated seconds per wall second in realtime mode")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--poll-interval", dest="poll_interval_s", type=float)
    p.add_argument("--quantum", dest="drop_quantum_ul", type=float)
    p.add_argument("--full-step-mm", dest="full_step_mm", type=float)
    p.add_argument("--diameter-mm", dest="inner_diameter_mm", type=float)
    p.add_argument("--density", dest="fluid_density_g_ml", type=float)


def _kinematics(args, file_cfg) -> SyringeKinematics:
    return SyringeKinematics(
        full_step_mm=resolve(args, file_cfg, "full_step_mm", 0.0018),
        inner_diameter_mm=resolve(args, file_cfg, "inner_diameter_mm", 14.50),
        fluid_density_g_ml=resolve(args, file_cfg, "fluid_density_g_ml", 1.000),
    )


def _device_config(args, file_cfg, username, password, mac, patient_id, seed) -> DeviceConfig:
    return DeviceConfig(
        username=username,
        password=password,
        mac=mac,
        patient_id=patient_id,
        kinematics=_kinematics(args, file_cfg),
        drop_quantum_ul=resolve(args, file_cfg, "drop_quantum_ul", 50.0),
        poll_interval_s=resolve(args, file_cfg, "poll_interval_s", 60.0),
        noise_sigma=resolve(args, file_cfg, "noise_sigma", 0.015),
        seed=seed,
    )


def _device_clock(args, file_cfg):
    if resolve(args, file_cfg, "realtime", False):
        return WallClock(time_scale=resolve(args, file_cfg, "time_scale", 1.0))
    return SimulatedClock()


def _cmd_serve(args, file_cfg) -> int:
    cfg = RunConfig("serve", {
        "host": resolve(args, file_cfg, "host", "127.0.0.1"),
        "port": resolve(args, file_cfg, "port", 8080),
        "data_dir": resolve(args, file_cfg, "data_dir", None),
        "ttl_s": resolve(args, file_cfg, "ttl_s", 300.0),
        "poll_interval_s": resolve(args, file_cfg, "poll_interval_s", 60.0),
        "static_dir": resolve(args, file_cfg, "static_dir", None),
        "purge_interval_s": resolve(args, file_cfg, "purge_interval_s", 300.0),
    })
    cfg.validate()
    print(cfg.printable(), file=sys.stderr)
    opts = cfg.options
    store = EventStore(opts["data_dir"]) if opts["data_dir"] else None
    app = Application(store=store, ttl_s=opts["ttl_s"],
                      poll_interval_s=opts["poll_interval_s"],
                      static_dir=opts["static_dir"])
    server = ApiHTTPServer(app, host=opts["host"], port=opts["port"],
                           purge_interval_s=opts["purge_interval_s"])
    print(f"listening on {server.url}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("shutting down", file=sys.stderr)
    finally:
        server.stop()
    return 0


def _cmd_seed_data(args, file_cfg) -> int:
    cfg = RunConfig("seed-data", {
        "data_dir": resolve(args, file_cfg, "data_dir", None),
        "devices": resolve(args, file_cfg, "devices", 1),
        "volume_ml": resolve(args, file_cfg, "volume_ml", 2.0),
        "rate_ml_h": resolve(args, file_cfg, "rate_ml_h", 4.0),
    })
    cfg.validate()
    print(cfg.printable(), file=sys.stderr)
    opts = cfg.options
    app = Application(store=EventStore(opts["data_dir"]))
    seeded = seed_demo(app, devices=opts["devices"],
                       volume_ml=opts["volume_ml"], rate_ml_h=opts["rate_ml_h"])
    app.close()
    print(json.dumps(seeded, indent=2))
    return 0


def _print_transition(event) -> None:
    print(f"t={event.t_s:10.3f}  {event.src.value} -> {event.dst.value}  ({event.reason})",
          file=sys.stderr)


def _cmd_device(args, file_cfg) -> int:
    cfg = RunConfig("device", {
        "server_url": resolve(args, file_cfg, "server_url", None),
        "username": resolve(args, file_cfg, "username", None),
        "password": resolve(args, file_cfg, "password", None),
        "mac": resolve(args, file_cfg, "mac", None),
        "patient_id": resolve(args, file_cfg, "patient_id", None),
        "realtime": resolve(args, file_cfg, "realtime", False),
        "time_scale": resolve(args, file_cfg, "time_scale", 1.0),
        "noise_sigma": resolve(args, file_cfg, "noise_sigma", 0.015),
        "seed": resolve(args, file_cfg, "seed", 0),
        "poll_interval_s": resolve(args, file_cfg, "poll_interval_s", 60.0),
        "trace_out": resolve(args, file_cfg, "trace_out", None),
    })
    cfg.validate()
    print(cfg.printable(), file=sys.stderr)
    opts = cfg.options
    config = _device_config(args, file_cfg, opts["username"], opts["password"],
                            opts["mac"], opts["patient_id"], opts["seed"])
    transport = HttpTransport(opts["server_url"])
    result = run_session(config, transport, clock=_device_clock(args, file_cfg),
                         on_transition=_print_transition)
    transport.close()
    print(json.dumps({
        "outcome": result.outcome.value,
        "fault_reason": result.fault_reason,
        "delivered_volume_ml": result.delivered_volume_ml,
        "mean_rate_ml_h": result.mean_rate_ml_h,
        "steps_executed": result.steps_executed,
        "duration_s": (result.finished_at - result.started_at)
                      if result.finished_at is not None and result.started_at is not None
                      else None,
        "versions_seen": result.versions_seen,
    }, indent=2))
    if opts["trace_out"]:
        Path(opts["trace_out"]).write_text(result.trace.to_csv(), encoding="utf-8")
        print(f"trace written to {opts['trace_out']}", file=sys.stderr)
    return 0 if result.outcome.value != "fault" else 1


def _cmd_fleet(args, file_cfg) -> int:
    cfg = RunConfig("fleet", {
        "server_url": resolve(args, file_cfg, "server_url", None),
        "devices": resolve(args, file_cfg, "devices", None),
        "base_seed": resolve(args, file_cfg, "base_seed", 1),
        "noise_sigma": resolve(args, file_cfg, "noise_sigma", 0.015),
        "poll_interval_s": resolve(args, file_cfg, "poll_interval_s", 60.0),
        "realtime": resolve(args, file_cfg, "realtime", False),
    })
    cfg.validate()
    print(cfg.printable(), file=sys.stderr)
    opts = cfg.options

    def one(i: int):
        config = _device_config(
            args, file_cfg, f"dev{i}", "device-pass",
            f"AA:BB:CC:DD:{(i >> 8) & 0xFF:02X}:{i & 0xFF:02X}", f"pat-{i:03d}",
            opts["base_seed"] + i - 1)
        transport = HttpTransport(opts["server_url"])
        try:
            return i, run_session(config, transport, clock=_device_clock(args, file_cfg))
        finally:
            transport.close()

    failures = 0
    with concurrent.futures.ThreadPoolExecutor(max_workers=opts["devices"]) as pool:
        for i, result in pool.map(one, range(1, opts["devices"] + 1)):
            line = {
                "device": f"dev{i}",
                "outcome": result.outcome.value,
                "delivered_volume_ml": result.delivered_volume_ml,
                "mean_rate_ml_h": result.mean_rate_ml_h,
            }
            if result.fault_reason:
                line["fault_reason"] = result.fault_reason
                failures += 1
            print(json.dumps(line))
    return 1 if failures else 0


def _cmd_bench_load(args, file_cfg) -> int:
    cfg = RunConfig("bench-load", {
        "server_url": resolve(args, file_cfg, "server_url", None),
        "users": resolve(args, file_cfg, "users", None),
        "duration_s": resolve(args, file_cfg, "duration_s", None),
        "think_s": resolve(args, file_cfg, "think_s", 0.0),
        "include_records": resolve(args, file_cfg, "include_records", False),
        "out": resolve(args, file_cfg, "out", None),
        "report_format": resolve(args, file_cfg, "report_format", None),
    })
    cfg.validate()
    print(cfg.printable(), file=sys.stderr)
    opts = cfg.options
    report = run_load(opts["server_url"], opts["users"], opts["duration_s"],
                      think_s=opts["think_s"], include_records=opts["include_records"])
    print(json.dumps({
        "user_count": report.user_count,
        "total_requests": report.total_requests,
        "error_count": report.error_count,
        "avg_response_ms": report.avg_response_ms,
        "min_response_ms": report.min_response_ms,
        "max_response_ms": report.max_response_ms,
        "avg_throughput_rps": report.avg_throughput_rps,
    }, indent=2))
    _maybe_emit(report, opts)
    return 0


def _cmd_bench_accuracy(args, file_cfg) -> int:
    cfg = RunConfig("bench-accuracy", {
        "volume_ml": resolve(args, file_cfg, "volume_ml", None),
        "rate_ml_h": resolve(args, file_cfg, "rate_ml_h", None),
        "runs": resolve(args, file_cfg, "runs", 5),
        "seeds": resolve(args, file_cfg, "seeds", None),
        "noise_sigma": resolve(args, file_cfg, "noise_sigma", 0.015),
        "poll_interval_s": resolve(args, file_cfg, "poll_interval_s", 60.0),
        "out": resolve(args, file_cfg, "out", None),
        "report_format": resolve(args, file_cfg, "report_format", None),
    })
    cfg.validate()
    print(cfg.printable(), file=sys.stderr)
    opts = cfg.options
    runs = opts["runs"] if opts["seeds"] is None else len(opts["seeds"])
    report = run_accuracy(opts["volume_ml"], opts["rate_ml_h"], runs=runs,
                          seeds=opts["seeds"], noise_sigma=opts["noise_sigma"],
                          poll_interval_s=opts["poll_interval_s"])
    for row in report.rows:
        print(f"experiment {row.experiment}: delivered {row.delivered_volume_ml:.2f} mL "
              f"({row.pct_error_volume}% err), rate {row.avg_rate_ml_h:.2f} mL/h "
              f"({row.pct_error_rate}% err)")
    print(f"avg %error volume: {report.avg_pct_error_volume}, "
          f"avg %error rate: {report.avg_pct_error_rate}")
    _maybe_emit(report, opts)
    return 0


def _maybe_emit(report, opts) -> None:
    out = opts.get("out")
    if not out:
        return
    fmt = opts.get("report_format")
    if not fmt:
        fmt = "json" if str(out).endswith(".json") else "csv"
    emit_report(report, fmt, out)
    print(f"report written to {out}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = find_config(args.config)
        if args.mode == "serve":
            return _cmd_serve(args, file_cfg)
        if args.mode == "seed-data":
            return _cmd_seed_data(args, file_cfg)
        if args.mode == "device":
            return _cmd_device(args, file_cfg)
        if args.mode == "fleet":
            return _cmd_fleet(args, file_cfg)
        if args.mode == "bench":
            if args.bench_mode == "load":
                return _cmd_bench_load(args, file_cfg)
            return _cmd_bench_accuracy(args, file_cfg)
        parser.error(f"unknown mode {args.mode!r}")
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
