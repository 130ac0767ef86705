"""Monte Carlo aggregation: latency vs density, PDR vs SNR, MEC gain."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .engine import PacketRecord, scenario_fading, simulate_run
from .linkphy import DEFAULT_BLER, BlerCurve, harq_attempts
from .scenario import validate_config

DENSITY_COLUMNS = ("density", "mode", "mean_ms", "stderr_ms", "pdr", "runs")
PDR_COLUMNS = ("snr_db", "pdr", "stderr")


class NoDeliveredPackets(ValueError):
    """No receiver got the packet, so latency is undefined; ``pdr`` is still known."""

    def __init__(self, pdr: float, message: str = "no delivered packets"):
        self.pdr = pdr
        super().__init__(f"{message} (pdr={pdr:g})")


@dataclass(frozen=True)
class RunStats:
    mean_ms: float
    delivered: int
    outcomes: int


@dataclass(frozen=True)
class MetricsReport:
    per_run_mean_ms: tuple[float, ...]
    mean_ms: float
    stderr_ms: float
    run_count: int
    pdr: float
    delivered: int
    outcomes: int
    mode: str | None = None
    density: float | None = None
    delivery_mode: str | None = None


@dataclass(frozen=True)
class PdrPoint:
    snr_db: float
    pdr: float
    stderr: float


def run_stats(records: Iterable[PacketRecord]) -> RunStats:
    total = 0.0
    delivered = 0
    outcomes = 0
    for rec in records:
        outcomes += rec.n_receivers
        if rec.drop_stage == "uplink":
            continue
        e2e = rec.e2e_ms[rec.delivered]
        delivered += len(e2e)
        total += float(e2e.sum())
    return RunStats(total / delivered if delivered else math.nan, delivered, outcomes)


def aggregate_stats(stats: Sequence[RunStats], mode=None, density=None,
                    delivery_mode=None) -> MetricsReport:
    """Cross-run mean and standard error of per-run mean latency, plus pooled PDR."""
    if not stats:
        raise ValueError("need at least one run")
    delivered = sum(s.delivered for s in stats)
    outcomes = sum(s.outcomes for s in stats)
    pdr = delivered / outcomes if outcomes else 0.0
    means = np.array([s.mean_ms for s in stats if s.delivered], dtype=float)
    if len(means) == 0:
        raise NoDeliveredPackets(pdr)
    stderr = float(np.std(means, ddof=1) / math.sqrt(len(means))) if len(means) > 1 else 0.0
    return MetricsReport(tuple(s.mean_ms for s in stats), float(means.mean()), stderr,
                         len(stats), pdr, delivered, outcomes, mode, density, delivery_mode)


def aggregate(records_per_run: Sequence[Sequence[PacketRecord]], mode=None, density=None,
              delivery_mode=None) -> MetricsReport:
    return aggregate_stats([run_stats(r) for r in records_per_run], mode, density, delivery_mode)


def mec_gain(conv: MetricsReport, mec: MetricsReport) -> float:
    """Fractional latency reduction of MEC over the conventional core."""
    if conv.density != mec.density or conv.delivery_mode != mec.delivery_mode:
        raise ValueError("reports must share density and delivery mode")
    for rep in (conv, mec):
        if not rep.delivered or not math.isfinite(rep.mean_ms):
            raise NoDeliveredPackets(rep.pdr)
    return (conv.mean_ms - mec.mean_ms) / conv.mean_ms


# --- sweeps -----------------------------------------------------------------------

_worker_fading = None


def _init_worker(fading):
    global _worker_fading
    _worker_fading = fading


def _one_run(task):
    cfg, run_index, seed = task
    return run_stats(simulate_run(cfg, _worker_fading, run_index, seed))


def sweep_density(cfg, densities: Sequence[float], runs_per_point: int, seed: int | None = None,
                  modes: Sequence[str] = ("conventional",), jobs: int = 1,
                  fading=None) -> list[MetricsReport]:
    """One report per (density, mode), ordered by density then ``modes``.

    Every run draws from sub-streams keyed by (vehicle count, run index), so
    results do not depend on ``jobs`` and modes see common random numbers.
    One EVA/EPA trace pair serves the whole sweep.
    """
    if runs_per_point < 1:
        raise ValueError("runs_per_point must be >= 1")
    base = validate_config(cfg)
    seed = base.seed if seed is None else seed
    if fading is None:
        fading = scenario_fading(base, seed)
    points = [(d, m) for d in densities for m in modes]
    tasks = [(validate_config(base.replace(vehicle_density=d, network_mode=m)), r, seed)
             for d, m in points for r in range(runs_per_point)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(fading,)) as pool:
            stats = list(pool.map(_one_run, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        _init_worker(fading)
        stats = [_one_run(t) for t in tasks]
    reports = []
    for i, (d, m) in enumerate(points):
        chunk = stats[i * runs_per_point:(i + 1) * runs_per_point]
        try:
            reports.append(aggregate_stats(chunk, m, d, base.delivery_mode))
        except NoDeliveredPackets as exc:
            reports.append(MetricsReport(tuple(s.mean_ms for s in chunk), math.nan, math.nan,
                                         len(chunk), exc.pdr, 0, sum(s.outcomes for s in chunk),
                                         m, d, base.delivery_mode))
    return reports


def sweep_pdr_snr(snr_points: Sequence[float], packets_per_point: int, rng: np.random.Generator,
                  curve: BlerCurve = DEFAULT_BLER) -> list[PdrPoint]:
    """Single-attempt delivery ratio through the BLER curve at each SNR."""
    if packets_per_point < 1:
        raise ValueError("packets_per_point must be >= 1")
    out = []
    for snr in snr_points:
        p = np.full(packets_per_point, curve(snr))
        _, ok = harq_attempts(p, 1, rng)
        pdr = float(ok.mean())
        out.append(PdrPoint(float(snr), pdr, math.sqrt(pdr * (1 - pdr) / packets_per_point)))
    return out


# --- output -----------------------------------------------------------------------

def density_rows(reports: Iterable[MetricsReport]):
    for r in reports:
        yield (f"{r.density:.6f}", r.mode, f"{r.mean_ms:.6f}", f"{r.stderr_ms:.6f}",
               f"{r.pdr:.6f}", r.run_count)


def pdr_rows(points: Iterable[PdrPoint]):
    for p in points:
        yield f"{p.snr_db:g}", f"{p.pdr:.6f}", f"{p.stderr:.6f}"


def _write(path, header, rows, gnuplot: bool):
    rows = list(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    if gnuplot:
        dat = str(path).rsplit(".", 1)[0] + ".dat"
        with open(dat, "w", encoding="utf-8") as fh:
            fh.write("# " + " ".join(header) + "\n")
            for row in rows:
                fh.write(" ".join(str(v) for v in row) + "\n")


def write_density_csv(reports, path, gnuplot: bool = False) -> None:
    _write(path, DENSITY_COLUMNS, density_rows(reports), gnuplot)


def write_pdr_csv(points, path, gnuplot: bool = False) -> None:
    _write(path, PDR_COLUMNS, pdr_rows(points), gnuplot)
