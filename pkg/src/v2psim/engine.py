"""Discrete-event core: VRU packets up to the eNodeB, through the core, and out
to the target vehicles.

Event chain per packet::

    PacketGenerated -> UplinkDone -> CoreDone -> DownlinkDone

The uplink uses the EPA trace at pedestrian speed and the VRU transmit power;
every downlink uses the EVA trace and the eNodeB power.  Both traces are
shared by all links, each link reading it at its own random time offset.
The processing node (core server, or the PGW in MEC mode) replicates a
packet once per receiver, so copy ``r`` leaves ``r * fanout_per_copy_ms``
after the first.
"""
from __future__ import annotations

import csv
import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .channel import PATHLOSS_EXPONENT, FadingTrace, noise_floor_dbm, pathloss_db
from .latency import (DL_SCHED_MS, EXEC_MS, UL_ACCESS_MS, LatencyBreakdown, quantize_ms,
                      sample_network_terms)
from .linkphy import (HARQ_RTT_MS, BlerCurve, McsProfile, ResourceGrid, _eesm_linear,
                      harq_attempts, tx_duration_ms)
from .mobility import MobilityTrace
from .scenario import ValidatedConfig, validate_config

PACKET_GENERATED = "PacketGenerated"
UPLINK_DONE = "UplinkDone"
CORE_DONE = "CoreDone"
DOWNLINK_DONE = "DownlinkDone"

BREAKDOWN_COLUMNS = ("packet_id", "vehicle_id", "mode", "t_ul", "t_bh", "t_tn", "t_cn",
                     "t_exc", "t_dl", "e2e")
DROP_COLUMNS = ("packet_id", "stage", "reason")


class EngineError(Exception):
    pass


class TraceTooShort(EngineError):
    pass


class FadingTooShort(EngineError):
    pass


class EmptyQueue(EngineError, IndexError):
    pass


@dataclass(frozen=True)
class Event:
    time_s: float
    kind: str
    packet_id: int
    node_refs: tuple = ()

    def __post_init__(self):
        if not (math.isfinite(self.time_s) and self.time_s >= 0):
            raise ValueError(f"event time must be finite and >= 0, got {self.time_s}")


class EventQueue:
    """Min-time priority queue, FIFO among equal times."""

    def __init__(self):
        self._heap: list[tuple[float, int, Event]] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, event: Event) -> None:
        heapq.heappush(self._heap, (event.time_s, next(self._seq), event))


def next_event(queue: EventQueue) -> Event:
    if not queue._heap:
        raise EmptyQueue("no pending events")
    return heapq.heappop(queue._heap)[2]


@dataclass(frozen=True)
class ReceiverOutcome:
    vehicle_id: int
    delivered: bool
    breakdown: LatencyBreakdown | None = None
    drop_reason: str | None = None
    delivered_at_s: float | None = None


@dataclass(eq=False)
class PacketRecord:
    """One VRU packet and what happened at each of its target vehicles.

    Receiver data is held column-wise; :attr:`outcomes` gives per-receiver
    objects.  Latency columns are NaN for dropped receivers.
    """

    packet_id: int
    vru_id: int
    generated_at_s: float
    mode: str
    vehicle_ids: np.ndarray
    delivered: np.ndarray
    drop_stage: str | None = None
    drop_stage_reason: str | None = None
    t_ul_ms: float = math.nan
    t_bh_ms: float = math.nan
    t_tn_ms: float = math.nan
    t_cn_ms: float = math.nan
    t_exc_ms: np.ndarray = field(default_factory=lambda: np.empty(0))
    t_dl_ms: np.ndarray = field(default_factory=lambda: np.empty(0))
    delivered_at_s: np.ndarray = field(default_factory=lambda: np.empty(0))
    ul_attempts: int = 0
    dl_attempts: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def n_receivers(self) -> int:
        return len(self.vehicle_ids)

    @property
    def e2e_ms(self) -> np.ndarray:
        """Per-receiver end-to-end latency; NaN where dropped."""
        if self.drop_stage == "uplink" or self.n_receivers == 0:
            return np.full(self.n_receivers, np.nan)
        e2e = (self.t_ul_ms + 2 * (self.t_bh_ms + self.t_tn_ms + self.t_cn_ms)
               + self.t_exc_ms + self.t_dl_ms)
        return np.where(self.delivered, e2e, np.nan)

    def breakdown(self, i: int) -> LatencyBreakdown | None:
        if not self.delivered[i]:
            return None
        return LatencyBreakdown(self.t_ul_ms, float(self.t_dl_ms[i]), self.t_bh_ms, self.t_tn_ms,
                                self.t_cn_ms, float(self.t_exc_ms[i]), self.mode)

    def drop_reason(self, i: int) -> str | None:
        if self.delivered[i]:
            return None
        if self.drop_stage == "uplink":
            return f"uplink:{self.drop_stage_reason}"
        return "downlink:harq_exhausted"

    @property
    def outcomes(self) -> list[ReceiverOutcome]:
        out = []
        for i, vid in enumerate(self.vehicle_ids):
            if self.delivered[i]:
                out.append(ReceiverOutcome(int(vid), True, self.breakdown(i),
                                           delivered_at_s=float(self.delivered_at_s[i])))
            else:
                out.append(ReceiverOutcome(int(vid), False, drop_reason=self.drop_reason(i)))
        return out


@dataclass
class _Links:
    """Per-run constants shared by every link evaluation."""

    cfg: ValidatedConfig
    airtime_ms: float
    noise_dbm: float
    curve: BlerCurve
    eva: np.ndarray
    epa: np.ndarray
    vru_offset: dict
    veh_ids: np.ndarray
    veh_offset: np.ndarray
    enb_xy: tuple[float, float]
    ul_bler: np.ndarray = field(default_factory=lambda: np.empty(0))
    targets: list = field(default_factory=list)
    _exc_cache: dict = field(default_factory=dict)

    def exec_ms(self, n: int) -> np.ndarray:
        """T_Exc per copy: execution plus the copy's fanout slot."""
        if n not in self._exc_cache:
            arr = quantize_ms(EXEC_MS + np.arange(n) * self.cfg.fanout_per_copy_ms)
            arr.flags.writeable = False  # shared by every record with n receivers
            self._exc_cache[n] = arr
        return self._exc_cache[n]

    def radio_ms(self, attempts, access_ms):
        return attempts * self.airtime_ms + (attempts - 1) * HARQ_RTT_MS + access_ms

    def snr_linear(self, tx_dbm: float, dist_m, fading_lin_rows: np.ndarray) -> np.ndarray:
        d = np.maximum(np.asarray(dist_m, dtype=float), 1.0)
        # 10^((tx - PL(1 m) - N)/10) * d^-n, same as the dB form without the logs
        scale = 10.0 ** ((tx_dbm - pathloss_db(1.0, self.cfg.carrier_freq_ghz)
                          - self.noise_dbm) / 10.0)
        return (scale * d ** -PATHLOSS_EXPONENT)[..., None] * fading_lin_rows

    def dist(self, pos: np.ndarray) -> np.ndarray:
        return np.hypot(pos[..., 0] - self.enb_xy[0], pos[..., 1] - self.enb_xy[1])


def _check_inputs(cfg: ValidatedConfig, trace: MobilityTrace, fading: dict, grid: ResourceGrid):
    if trace.duration_s + 1e-9 < cfg.sim_duration_s:
        raise TraceTooShort(f"trace covers {trace.duration_s} s < {cfg.sim_duration_s} s")
    for name in ("eva", "epa"):
        if name not in fading:
            raise KeyError(f"missing {name} fading trace")
        ft = fading[name]
        if ft.duration_s + 1e-9 < cfg.sim_duration_s:
            raise FadingTooShort(f"{name} trace covers {ft.duration_s} s < {cfg.sim_duration_s} s")
        if ft.rb_count != grid.rb_count:
            raise ValueError(f"{name} trace has {ft.rb_count} RBs, grid has {grid.rb_count}")


def _arrivals(cfg: ValidatedConfig, vru_ids: Sequence[int], rng: np.random.Generator):
    """Poisson packet times per VRU, merged and ordered by (time, vru)."""
    times, owners = [], []
    for vid in vru_ids:
        n = rng.poisson(cfg.cam_rate_hz * cfg.sim_duration_s) if cfg.cam_rate_hz > 0 else 0
        times.append(np.sort(rng.uniform(0.0, cfg.sim_duration_s, n)))
        owners.append(np.full(n, vid))
    if not times:
        return np.empty(0), np.empty(0, dtype=int)
    t = np.concatenate(times)
    o = np.concatenate(owners).astype(int)
    order = np.lexsort((o, t))
    return t[order], o[order]


def _row(t_s: float, offset, n_rows: int):
    return (np.floor(np.asarray(t_s) * 1000.0).astype(np.int64) + offset) % n_rows


def run_simulation(cfg, trace: MobilityTrace, fading: dict[str, FadingTrace],
                   rng: np.random.Generator,
                   latency_rng: np.random.Generator | None = None) -> list[PacketRecord]:
    """Simulate every VRU packet of one run; records are ordered by packet id.

    ``rng`` drives arrivals, link offsets and HARQ; ``latency_rng`` (spawned
    from ``rng`` when omitted) drives the network latency draws.
    """
    cfg = validate_config(cfg)
    grid = ResourceGrid.for_bandwidth(cfg.bandwidth_mhz)
    mcs = McsProfile()
    _check_inputs(cfg, trace, fading, grid)
    if latency_rng is None:
        rng, latency_rng = rng.spawn(2)

    vru_ids = trace.vru_ids
    veh_ids = np.array(trace.vehicle_ids, dtype=np.int64)
    enb = trace.positions_at([trace.enb_id], 0.0)[0]
    eva = fading["eva"].linear_power
    epa = fading["epa"].linear_power
    links = _Links(
        cfg=cfg,
        airtime_ms=tx_duration_ms(cfg.packet_size_bits, grid, mcs, grid.rb_count),
        noise_dbm=noise_floor_dbm(cfg.bandwidth_mhz),
        curve=BlerCurve(cfg.bler_k, cfg.bler_s0),
        eva=eva, epa=epa,
        vru_offset=dict(zip(vru_ids, rng.integers(0, len(epa), len(vru_ids)).tolist())),
        veh_ids=veh_ids,
        veh_offset=rng.integers(0, len(eva), len(veh_ids)),
        enb_xy=(float(enb[0]), float(enb[1])),
    )
    k = cfg.nearest_k

    queue = EventQueue()
    arrival_t, arrival_vru = _arrivals(cfg, vru_ids, rng)
    _precompute(trace, links, arrival_t, arrival_vru, k)
    for pid, (t, vid) in enumerate(zip(arrival_t.tolist(), arrival_vru.tolist())):
        queue.push(Event(t, PACKET_GENERATED, pid, (vid,)))

    records: dict[int, PacketRecord] = {}
    last_t = 0.0
    while len(queue):
        ev = next_event(queue)
        if ev.time_s < last_t:
            raise EngineError("event queue went back in time")
        last_t = ev.time_s
        if ev.kind == PACKET_GENERATED:
            rec = _on_generated(ev, links, rng)
            records[ev.packet_id] = rec
            if rec.drop_stage is None:
                queue.push(Event(ev.time_s + rec.t_ul_ms / 1000.0, UPLINK_DONE, ev.packet_id,
                                 ev.node_refs))
        elif ev.kind == UPLINK_DONE:
            rec = records[ev.packet_id]
            bh, tn, cn = sample_network_terms(cfg.network_mode, latency_rng)
            rec.t_bh_ms, rec.t_tn_ms, rec.t_cn_ms = float(bh), float(tn), float(cn)
            core_ms = 2 * (rec.t_bh_ms + rec.t_tn_ms + rec.t_cn_ms) + EXEC_MS
            queue.push(Event(ev.time_s + core_ms / 1000.0, CORE_DONE, ev.packet_id,
                             tuple(rec.vehicle_ids.tolist())))
        elif ev.kind == CORE_DONE:
            rec = records[ev.packet_id]
            done = _on_core_done(ev, rec, trace, links, rng)
            queue.push(Event(done, DOWNLINK_DONE, ev.packet_id, ev.node_refs))
        elif ev.kind == DOWNLINK_DONE:
            pass
        else:
            raise EngineError(f"unknown event kind {ev.kind}")
    return [records[pid] for pid in sorted(records)]


def _precompute(trace: MobilityTrace, links: _Links, arrival_t: np.ndarray,
                arrival_vru: np.ndarray, k: int | None) -> None:
    """Target sets and uplink BLER for every packet at its generation time.

    Both are pure functions of (time, positions, fading), so they are
    evaluated in one pass; the event handlers still make every random draw
    in event order.
    """
    cfg = links.cfg
    n = len(arrival_t)
    veh = links.veh_ids
    if n == 0:
        return
    if len(veh) == 0:
        links.targets = [np.empty(0, dtype=np.int64)] * n
    else:
        pos = trace.positions_over(veh, arrival_t)
        if k is None:
            inside = links.dist(pos) <= cfg.transmission_range_m
            links.targets = [veh[m] for m in inside]
        else:
            vru_pos = trace.positions_over(trace.vru_ids, arrival_t)
            cx = vru_pos[:, :, 0].mean(axis=1)
            cy = vru_pos[:, :, 1].mean(axis=1)
            d = np.hypot(pos[..., 0] - cx[:, None], pos[..., 1] - cy[:, None])
            # ids are sorted, so a stable sort breaks distance ties by lower id
            order = np.argsort(d, axis=1, kind="stable")[:, :k]
            links.targets = list(veh[order])
    own = trace.positions_paired(arrival_vru, arrival_t)
    offsets = np.array([links.vru_offset[v] for v in arrival_vru.tolist()], dtype=np.int64)
    rows = links.epa[_row(arrival_t, offsets, len(links.epa))]
    snr = links.snr_linear(cfg.vru_tx_power_dbm, links.dist(own), rows)
    links.ul_bler = np.atleast_1d(links.curve(_eesm_linear(snr)))


def _on_generated(ev: Event, links: _Links, rng: np.random.Generator) -> PacketRecord:
    cfg = links.cfg
    pid = ev.packet_id
    targets = links.targets[pid]
    n = len(targets)
    rec = PacketRecord(pid, ev.node_refs[0], ev.time_s, cfg.network_mode, targets,
                       np.zeros(n, dtype=bool))

    if cfg.collision_prob > 0 and rng.random() < cfg.collision_prob:
        rec.drop_stage, rec.drop_stage_reason = "uplink", "collision"
        return rec
    attempts, ok = harq_attempts(links.ul_bler[pid], cfg.harq_max_attempts, rng)
    rec.ul_attempts = int(attempts[0])
    if not ok[0]:
        rec.drop_stage, rec.drop_stage_reason = "uplink", "harq_exhausted"
        return rec
    rec.t_ul_ms = float(links.radio_ms(attempts[0], UL_ACCESS_MS))
    return rec


def _on_core_done(ev: Event, rec: PacketRecord, trace: MobilityTrace, links: _Links,
                  rng: np.random.Generator) -> float:
    """Downlink to every target; returns the time the last copy lands."""
    cfg = links.cfg
    n = rec.n_receivers
    t = ev.time_s
    if n == 0:
        rec.t_exc_ms = rec.t_dl_ms = rec.delivered_at_s = np.empty(0)
        return t
    t_exc = links.exec_ms(n)
    fanout_ms = t_exc - EXEC_MS
    start_s = t + fanout_ms / 1000.0
    dist = links.dist(trace.positions_at(rec.vehicle_ids, t))
    idx = np.searchsorted(links.veh_ids, rec.vehicle_ids)
    rows = links.eva[_row(start_s, links.veh_offset[idx], len(links.eva))]
    snr = links.snr_linear(cfg.enb_tx_power_dbm, dist, rows)
    p = links.curve(_eesm_linear(snr))
    attempts, ok = harq_attempts(p, cfg.harq_max_attempts, rng)
    t_dl = links.radio_ms(attempts, DL_SCHED_MS)
    rec.delivered = ok
    if not ok.all():
        rec.drop_stage = rec.drop_stage or "downlink"
    rec.dl_attempts = attempts
    rec.t_exc_ms = t_exc
    rec.t_dl_ms = np.asarray(t_dl, dtype=float)
    rec.delivered_at_s = np.where(ok, t + (fanout_ms + rec.t_dl_ms) / 1000.0, np.nan)
    return float(np.max(t + (fanout_ms + rec.t_dl_ms) / 1000.0))


# --- export -------------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.6f}"


def breakdown_rows(records: Iterable[PacketRecord]):
    for rec in records:
        if rec.drop_stage == "uplink":
            continue
        e2e = rec.e2e_ms
        for i, vid in enumerate(rec.vehicle_ids.tolist()):
            if not rec.delivered[i]:
                continue
            yield (rec.packet_id, vid, rec.mode, _fmt(rec.t_ul_ms), _fmt(rec.t_bh_ms),
                   _fmt(rec.t_tn_ms), _fmt(rec.t_cn_ms), _fmt(rec.t_exc_ms[i]),
                   _fmt(rec.t_dl_ms[i]), _fmt(e2e[i]))


def drop_rows(records: Iterable[PacketRecord]):
    for rec in records:
        if rec.drop_stage == "uplink":
            yield rec.packet_id, "uplink", rec.drop_stage_reason
            continue
        for i in np.flatnonzero(~rec.delivered):
            yield rec.packet_id, "downlink", "harq_exhausted"


def write_packet_csv(records: Sequence[PacketRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BREAKDOWN_COLUMNS)
        w.writerows(breakdown_rows(records))


def write_drop_csv(records: Sequence[PacketRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DROP_COLUMNS)
        w.writerows(drop_rows(records))


# --- one seeded run -------------------------------------------------------------

EVA_REFERENCE_SPEED_KMH = 80.0


def scenario_fading(cfg, seed: int | None = None) -> dict[str, FadingTrace]:
    """The shared EVA (80 km/h) and EPA (pedestrian speed) traces for a scenario."""
    from .channel import EPA, EVA, doppler_frequency, generate_fading_trace
    from .scenario import substream

    cfg = validate_config(cfg)
    seed = cfg.seed if seed is None else seed
    grid = ResourceGrid.for_bandwidth(cfg.bandwidth_mhz)
    out = {}
    for i, (name, profile, speed) in enumerate((("eva", EVA, EVA_REFERENCE_SPEED_KMH),
                                                ("epa", EPA, cfg.pedestrian_speed_kmh))):
        fd = doppler_frequency(speed, cfg.carrier_freq_ghz)
        out[name] = generate_fading_trace(profile, fd, cfg.sim_duration_s, grid.rb_count,
                                          cfg.bandwidth_mhz, substream(seed, "fading", i), seed)
    return out


def simulate_run(cfg, fading: dict[str, FadingTrace], run_index: int = 0,
                 seed: int | None = None, trace: MobilityTrace | None = None) -> list[PacketRecord]:
    """Mobility plus engine for one run, every draw from a named sub-stream.

    Streams are keyed by (vehicle count, run index) and not by network mode,
    so conventional and MEC runs share mobility, arrivals and network draws.
    """
    from .mobility import generate_intersection_traffic
    from .scenario import substream, vehicle_count

    cfg = validate_config(cfg)
    seed = cfg.seed if seed is None else seed
    key = (vehicle_count(cfg), run_index)
    if trace is None:
        trace = generate_intersection_traffic(cfg, substream(seed, "mobility", *key))
    return run_simulation(cfg, trace, fading, substream(seed, "engine", *key),
                          substream(seed, "latency", *key))
