"""Command-line entry point: ``v2psim <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import channel, engine, metrics, mobility
from .linkphy import RB_PER_BANDWIDTH, BlerCurve
from .scenario import (ConfigError, ScenarioConfig, density_for_count, load_config, substream,
                       validate_config, vehicle_count)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

REPORT_COLUMNS = ("mode", "delivery_mode", "density", "vehicles", "packets", "mean_ms",
                  "pdr", "delivered", "outcomes")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that signals usage errors instead of calling sys.exit(2)."""

    def error(self, message):
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


def _steps(start: float, stop: float, step: float) -> list[float]:
    if step <= 0:
        raise UsageError("--step must be > 0")
    if stop < start:
        raise UsageError("--to must be >= --from")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(n)]


def _base_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "mode", None) in ("conventional", "mec"):
        changes["network_mode"] = args.mode
    if getattr(args, "delivery", None):
        changes["delivery_mode"] = args.delivery
    if getattr(args, "vehicles", None) is not None:
        changes["vehicle_density"] = density_for_count(args.vehicles, cfg.road_length_m,
                                                       cfg.lane_count)
    return cfg.replace(**changes)


def _add_common(p, modes=("conventional", "mec")):
    p.add_argument("--config", metavar="FILE", help="scenario file (key = value lines)")
    p.add_argument("--seed", type=int, help="master seed (default: config seed)")
    p.add_argument("--mode", choices=modes, help="network mode")
    p.add_argument("--delivery", metavar="MODE",
                   help="broadcast or nearest_k(K) (default: config value)")


# --- subcommands ------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = validate_config(_base_config(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fading = engine.scenario_fading(cfg)
    records = engine.simulate_run(cfg, fading, args.run_index)
    engine.write_packet_csv(records, out / "packets.csv")
    engine.write_drop_csv(records, out / "drops.csv")
    stats = metrics.run_stats(records)
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerow((cfg.network_mode, cfg.delivery_mode, f"{cfg.vehicle_density:.6f}",
                    vehicle_count(cfg),
                    len(records), f"{stats.mean_ms:.6f}",
                    f"{stats.delivered / stats.outcomes if stats.outcomes else 0.0:.6f}",
                    stats.delivered, stats.outcomes))
    print(f"{len(records)} packets, mean e2e {stats.mean_ms:.3f} ms, "
          f"{stats.delivered}/{stats.outcomes} delivered -> {out}")
    return EXIT_OK


def cmd_sweep_density(args) -> int:
    base = _base_config(args)
    counts = _steps(args.start, args.stop, args.step)
    densities = [density_for_count(int(round(c)), base.road_length_m, base.lane_count)
                 for c in counts]
    modes = ("conventional", "mec") if args.mode in (None, "both") else (args.mode,)
    reports = metrics.sweep_density(base, densities, args.runs, modes=modes, jobs=args.jobs)
    metrics.write_density_csv(reports, args.out, gnuplot=args.gnuplot)
    for r in reports:
        print(f"density {r.density:.3f} {r.mode:12s} mean {r.mean_ms:8.3f} ms "
              f"+/- {r.stderr_ms:.3f}  pdr {r.pdr:.4f}")
    return EXIT_OK


def cmd_sweep_snr(args) -> int:
    if args.packets < 1:
        raise UsageError("--packets must be >= 1")
    snrs = _steps(args.start, args.stop, args.step)
    curve = BlerCurve(args.bler_k, args.bler_s0)
    points = metrics.sweep_pdr_snr(snrs, args.packets, substream(args.seed, "engine"), curve)
    metrics.write_pdr_csv(points, args.out, gnuplot=args.gnuplot)
    for p in points:
        print(f"{p.snr_db:6g} dB  pdr {p.pdr:.4f} +/- {p.stderr:.4f}")
    return EXIT_OK


def cmd_gen_fading(args) -> int:
    profile = channel.PROFILES[args.model]
    bandwidth = args.bandwidth
    if bandwidth is None:
        fits = [bw for bw, n in sorted(RB_PER_BANDWIDTH.items()) if n >= args.rbs]
        if not fits:
            raise UsageError(f"--rbs {args.rbs} exceeds every LTE bandwidth")
        bandwidth = fits[0]
    fd = channel.doppler_frequency(args.speed, args.carrier)
    trace = channel.generate_fading_trace(profile, fd, args.duration, args.rbs, bandwidth,
                                          substream(args.seed, "fading"), args.seed)
    out = Path(args.out)
    if args.format == "bin":
        channel.write_fading_binary(trace, out)
        Path(str(out) + ".meta.json").write_text(
            json.dumps(trace.metadata(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    else:
        channel.write_fading_csv(trace, out)
    print(f"{args.model.upper()} {trace.n_samples}x{trace.rb_count}, "
          f"Doppler {fd:.1f} Hz -> {out}")
    return EXIT_OK


def cmd_gen_mobility(args) -> int:
    cfg = validate_config(_base_config(args))
    rng = substream(cfg.seed, "mobility")
    if args.model == "matern":
        trace = mobility.generate_matern_placement(cfg, args.repulsion, rng)
    else:
        trace = mobility.generate_intersection_traffic(cfg, rng)
    Path(args.out).write_text(mobility.write_movement_trace(trace), encoding="utf-8")
    print(f"{len(trace.vehicle_ids)} vehicles, {len(trace.vru_ids)} VRUs -> {args.out}")
    return EXIT_OK


def cmd_parse_trace(args) -> int:
    trace = mobility.parse_movement_trace(Path(args.trace).read_text(encoding="utf-8"))
    if args.out:
        Path(args.out).write_text(mobility.write_movement_trace(trace), encoding="utf-8")
    print(f"ok: {len(trace.tracks)} nodes ({len(trace.vehicle_ids)} vehicles, "
          f"{len(trace.vru_ids)} VRUs), duration {trace.duration_s:g} s")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="v2psim", description="V2P latency simulator (conventional vs MEC core).")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("run", help="one seeded scenario -> per-packet CSVs and report")
    _add_common(p)
    p.add_argument("--vehicles", type=int, help="vehicle count (overrides config density)")
    p.add_argument("--run-index", type=int, default=0, help="Monte Carlo run index (default 0)")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-density", help="mean latency vs vehicle count")
    _add_common(p, modes=("conventional", "mec", "both"))
    p.add_argument("--from", dest="start", type=float, default=10, help="first vehicle count")
    p.add_argument("--to", dest="stop", type=float, default=90, help="last vehicle count")
    p.add_argument("--step", type=float, default=10, help="vehicle count step")
    p.add_argument("--runs", type=int, default=100, help="runs per point")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", required=True, metavar="CSV", help="output CSV")
    p.add_argument("--gnuplot", action="store_true", help="also write a .dat file")
    p.set_defaults(func=cmd_sweep_density)

    p = sub.add_parser("sweep-snr", help="single-attempt PDR vs effective SNR")
    p.add_argument("--from", dest="start", type=float, default=-10, help="first SNR (dB)")
    p.add_argument("--to", dest="stop", type=float, default=10, help="last SNR (dB)")
    p.add_argument("--step", type=float, default=1, help="SNR step (dB)")
    p.add_argument("--packets", type=int, default=100_000, help="packets per point")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--bler-k", type=float, default=0.448, help="BLER slope per dB")
    p.add_argument("--bler-s0", type=float, default=-4.90, help="BLER 50%% point (dB)")
    p.add_argument("--out", required=True, metavar="CSV", help="output CSV")
    p.add_argument("--gnuplot", action="store_true", help="also write a .dat file")
    p.set_defaults(func=cmd_sweep_snr)

    p = sub.add_parser("gen-fading", help="EVA/EPA time x RB gain trace")
    p.add_argument("--model", choices=sorted(channel.PROFILES), default="eva", help="tap profile")
    p.add_argument("--speed", type=float, default=80, help="speed (km/h)")
    p.add_argument("--duration", type=float, default=10, help="duration (s)")
    p.add_argument("--rbs", type=int, default=50, help="resource blocks")
    p.add_argument("--carrier", type=float, default=5.9, help="carrier frequency (GHz)")
    p.add_argument("--bandwidth", type=float, help="channel bandwidth (MHz, default: smallest fit)")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--format", choices=("csv", "bin"), default="csv", help="output format")
    p.add_argument("--out", required=True, metavar="FILE", help="output file")
    p.set_defaults(func=cmd_gen_fading)

    p = sub.add_parser("gen-mobility", help="write an ns-2 movement trace")
    p.add_argument("--config", metavar="FILE", help="scenario file (key = value lines)")
    p.add_argument("--seed", type=int, help="master seed (default: config seed)")
    p.add_argument("--vehicles", type=int, help="vehicle count (overrides config density)")
    p.add_argument("--model", choices=("car-following", "matern"), default="car-following",
                   help="vehicle placement model")
    p.add_argument("--repulsion", type=float, default=10.0, help="Matérn hard-core radius (m)")
    p.add_argument("--out", required=True, metavar="FILE", help="output trace")
    p.set_defaults(func=cmd_gen_mobility)

    p = sub.add_parser("parse-trace", help="validate (and optionally rewrite) a movement trace")
    p.add_argument("trace", metavar="TRACE", help="ns-2 movement trace")
    p.add_argument("--out", metavar="FILE", help="write the normalized trace here")
    p.set_defaults(func=cmd_parse_trace)
    return parser


RUNTIME_ERRORS = (ConfigError, mobility.MobilityError, engine.EngineError,
                  metrics.NoDeliveredPackets, ValueError, OSError)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        if getattr(args, "runs", 1) < 1:
            raise UsageError("--runs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
