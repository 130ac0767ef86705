"""Node trajectories: synthetic intersection traffic, Matérn hard-core placement,
ns-2 movement scripts, and position/proximity queries.

Geometry: vehicles drive in +x along a straight road centred on the origin,
lanes at y = -(i + 0.5) * LANE_WIDTH_M.  The VRU cluster crosses that road in
a 10 m strip around x = 0 walking in +y.  The eNodeB is a roadside node at
ENB_POSITION.  A vehicle leaving the segment at x = +L/2 re-enters at -L/2;
the re-entry is stored as a pair of waypoints one microsecond apart.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .scenario import ValidatedConfig, validate_config, vehicle_count

NODE_CLASSES = ("vehicle", "vru", "enb")

SAMPLE_DT_S = 0.1
LANE_WIDTH_M = 3.5
ENB_POSITION = (0.0, 50.0)
VRU_STRIP_WIDTH_M = 10.0
WRAP_STEP_S = 1e-6

# car-following parameters
ACCEL_MPS2 = 2.6
DECEL_MPS2 = 4.5
TAU_S = 1.0
MIN_GAP_M = 2.5


class MobilityError(Exception):
    pass


class UnknownNode(MobilityError, KeyError):
    pass


class TimeOutOfRange(MobilityError, ValueError):
    pass


class InfeasibleDensity(MobilityError, ValueError):
    pass


class TraceSyntaxError(MobilityError, ValueError):
    def __init__(self, lineno: int, expected: str, line: str = ""):
        self.lineno = lineno
        self.expected = expected
        super().__init__(f"line {lineno}: expected {expected}: {line!r}")


class NonMonotoneTime(MobilityError, ValueError):
    def __init__(self, node_id: int, lineno: int | None = None):
        self.node_id = node_id
        super().__init__(f"node {node_id}: command time goes backwards (line {lineno})")


class UnknownNodeReference(MobilityError, ValueError):
    def __init__(self, node_id: int, lineno: int | None = None):
        self.node_id = node_id
        super().__init__(f"node {node_id} referenced before its initial position (line {lineno})")


@dataclass(frozen=True)
class Waypoint:
    t: float
    x: float
    y: float
    speed_mps: float


@dataclass(frozen=True, eq=False)
class NodeTrack:
    """Waypoints of one node; ``speed`` is the speed leaving each waypoint."""

    node_id: int
    kind: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    speed: np.ndarray

    def __post_init__(self):
        for name in ("t", "x", "y", "speed"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.kind not in NODE_CLASSES:
            raise ValueError(f"unknown node class {self.kind!r}")
        if len(self.t) == 0 or self.t[0] != 0.0:
            raise ValueError(f"node {self.node_id}: first waypoint must be at t=0")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError(f"node {self.node_id}: timestamps must strictly increase")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError(f"node {self.node_id}: non-finite coordinates")
        if np.any(self.speed < 0):
            raise ValueError(f"node {self.node_id}: negative speed")

    def waypoints(self) -> list[Waypoint]:
        return [Waypoint(float(t), float(x), float(y), float(s))
                for t, x, y, s in zip(self.t, self.x, self.y, self.speed)]


class MobilityTrace:
    """Immutable set of node tracks plus the nominal trace duration."""

    def __init__(self, tracks: Iterable[NodeTrack], duration_s: float, meta: dict | None = None):
        self.tracks: dict[int, NodeTrack] = {}
        self._ids_cache: dict[str | None, list[int]] = {}
        for tr in tracks:
            if tr.node_id in self.tracks:
                raise ValueError(f"duplicate node id {tr.node_id}")
            self.tracks[tr.node_id] = tr
        self.duration_s = float(duration_s)
        self.meta = dict(meta or {})
        self._flat = None

    def __len__(self) -> int:
        return len(self.tracks)

    def node_ids(self, kind: str | None = None) -> list[int]:
        if kind not in self._ids_cache:
            self._ids_cache[kind] = sorted(
                i for i, tr in self.tracks.items() if kind is None or tr.kind == kind)
        return list(self._ids_cache[kind])

    @property
    def vehicle_ids(self) -> list[int]:
        return self.node_ids("vehicle")

    @property
    def vru_ids(self) -> list[int]:
        return self.node_ids("vru")

    @property
    def enb_id(self) -> int:
        ids = self.node_ids("enb")
        if not ids:
            raise UnknownNode("trace has no eNodeB node")
        return ids[0]

    def entries(self) -> Iterator[tuple[int, str, float, float, float, float]]:
        for nid in self.node_ids():
            tr = self.tracks[nid]
            for t, x, y, s in zip(tr.t, tr.x, tr.y, tr.speed):
                yield nid, tr.kind, float(t), float(x), float(y), float(s)

    def _flatten(self):
        """Concatenate all tracks so one searchsorted call locates every node."""
        if self._flat is not None:
            return self._flat
        ids = np.array(self.node_ids(), dtype=np.int64)
        tracks = [self.tracks[int(i)] for i in ids]
        span = max([self.duration_s] + [tr.t[-1] for tr in tracks]) + 1.0
        stride = 2.0 ** math.ceil(math.log2(span))
        lengths = np.array([len(tr.t) for tr in tracks])
        first = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        keys = np.concatenate([tr.t + k * stride for k, tr in enumerate(tracks)])
        cols = [np.concatenate([getattr(tr, c) for tr in tracks]) for c in ("t", "x", "y", "speed")]
        self._flat = (ids, stride, first, first + lengths - 1, keys, *cols)
        return self._flat

    def _locate(self, node_ids) -> np.ndarray:
        ids_all = self._flatten()[0]
        q = np.asarray(node_ids, dtype=np.int64)
        if q.size == 0:
            return q
        k = np.minimum(np.searchsorted(ids_all, q), len(ids_all) - 1)
        if not np.array_equal(ids_all[k], q):
            raise UnknownNode([int(i) for i in q.ravel() if int(i) not in self.tracks])
        return k

    def _interp(self, k: np.ndarray, t) -> np.ndarray:
        """(x, y, speed) for flat node indices ``k`` at times ``t`` (broadcast together)."""
        _, stride, first, last, keys, tt, xx, yy, ss = self._flatten()
        first, last = first[k], last[k]
        i = keys.searchsorted(t + k * stride, side="right") - 1
        i = np.minimum(np.maximum(i, first), last)
        j = np.minimum(i + 1, last)
        beyond = tt[i] < t
        moving = (j > i) & beyond
        dt = np.where(moving, tt[j] - tt[i], 1.0)
        frac = np.where(moving, (t - tt[i]) / dt, 0.0)
        out = np.empty(i.shape + (3,))
        out[..., 0] = xx[i] + frac * (xx[j] - xx[i])
        out[..., 1] = yy[i] + frac * (yy[j] - yy[i])
        out[..., 2] = np.where((i == last) & beyond, 0.0, ss[i])
        return out

    def positions_at(self, node_ids: Sequence[int], t: float) -> np.ndarray:
        """Rows of (x, y, speed) for each node at time ``t``."""
        if t < 0:
            raise TimeOutOfRange(f"t={t} < 0")
        k = self._locate(np.reshape(node_ids, -1))
        if len(k) == 0:
            return np.empty((0, 3))
        return self._interp(k, t)

    def positions_over(self, node_ids: Sequence[int], times) -> np.ndarray:
        """[len(times), len(node_ids), 3] positions of every node at every time."""
        times = np.asarray(times, dtype=float)
        if np.any(times < 0):
            raise TimeOutOfRange("negative time")
        k = self._locate(np.reshape(node_ids, -1))
        return self._interp(k[None, :], times[:, None])

    def positions_paired(self, node_ids: Sequence[int], times) -> np.ndarray:
        """Position of ``node_ids[i]`` at ``times[i]`` for each i."""
        times = np.asarray(times, dtype=float)
        if np.any(times < 0):
            raise TimeOutOfRange("negative time")
        k = self._locate(node_ids)
        if k.shape != times.shape:
            raise ValueError("node_ids and times must have the same shape")
        return self._interp(k, times)


def position_at(trace: MobilityTrace, node_id: int, t: float) -> tuple[float, float, float]:
    """Interpolated (x, y, speed) of one node; clamps past the final waypoint."""
    if node_id not in trace.tracks:
        raise UnknownNode(node_id)
    x, y, s = trace.positions_at([node_id], t)[0]
    return float(x), float(y), float(s)


def nearest_vehicles(trace: MobilityTrace, vru_centroid: tuple[float, float], t: float,
                     k: int) -> list[int]:
    """The ``k`` vehicles closest to ``vru_centroid`` at ``t``, nearest first.

    Ties go to the lower node id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ids = np.array(trace.vehicle_ids, dtype=np.int64)
    if len(ids) == 0:
        return []
    pos = trace.positions_at(ids, t)
    d = np.hypot(pos[:, 0] - vru_centroid[0], pos[:, 1] - vru_centroid[1])
    order = np.lexsort((ids, d))
    return [int(i) for i in ids[order[:k]]]


def in_range_vehicles(trace: MobilityTrace, origin: tuple[float, float], t: float,
                      range_m: float) -> list[int]:
    """Vehicles within the closed disc of radius ``range_m`` around ``origin``."""
    if range_m <= 0:
        raise ValueError("range_m must be > 0")
    ids = np.array(trace.vehicle_ids, dtype=np.int64)
    if len(ids) == 0:
        return []
    pos = trace.positions_at(ids, t)
    d = np.hypot(pos[:, 0] - origin[0], pos[:, 1] - origin[1])
    return [int(i) for i in ids[d <= range_m]]


# --- generation --------------------------------------------------------------

def _sample_times(duration_s: float) -> np.ndarray:
    steps = max(1, math.ceil(duration_s / SAMPLE_DT_S - 1e-9))
    return np.arange(steps + 1) * SAMPLE_DT_S


def lane_y(lane: int) -> float:
    return -(lane + 0.5) * LANE_WIDTH_M


def _ring_track(node_id: int, times: np.ndarray, s: np.ndarray, v: np.ndarray,
                road_length_m: float, y: float) -> NodeTrack:
    """Track for a vehicle whose unwrapped ring coordinate is ``s`` at ``times``.

    ``v[k]`` is the constant speed over [times[k], times[k+1]].
    """
    L = road_length_m
    lap = np.floor(s / L)
    t_out, x_out, v_out = [], [], []
    for k in range(len(times)):
        if k > 0 and lap[k] > lap[k - 1]:
            t0, s0, vk = times[k - 1], s[k - 1], v[k - 1]
            s_cross = lap[k] * L
            t_exit = t0 + (s_cross - s0) / vk
            t_exit = round(min(max(t_exit, t0 + 2 * WRAP_STEP_S),
                               times[k] - 3 * WRAP_STEP_S), 6)
            t_entry = t_exit + WRAP_STEP_S
            t_out += [t_exit, t_entry]
            x_out += [s0 + vk * (t_exit - t0) - lap[k - 1] * L - L / 2,
                      s0 + vk * (t_entry - t0) - lap[k] * L - L / 2]
            v_out += [vk, vk]
        t_out.append(times[k])
        x_out.append(s[k] - lap[k] * L - L / 2)
        v_out.append(v[k])
    return NodeTrack(node_id, "vehicle", np.array(t_out), np.array(x_out),
                     np.full(len(t_out), y), np.array(v_out))


def _uniform_spacings(rng: np.random.Generator, m: int, length: float, min_gap: float) -> np.ndarray:
    """m sorted points on a ring of ``length`` with all circular gaps >= min_gap."""
    free = length - m * min_gap
    if free < 0:
        raise InfeasibleDensity(f"{m} vehicles with {min_gap} m gaps exceed {length} m")
    u = np.sort(rng.uniform(0.0, free, m))
    pts = u + np.arange(m) * min_gap
    return np.sort((pts + rng.uniform(0.0, length)) % length)


def _split_lanes(n: int, lanes: int) -> list[int]:
    return [n // lanes + (1 if i < n % lanes else 0) for i in range(lanes)]


def _static_nodes(cfg: ValidatedConfig, rng: np.random.Generator, times: np.ndarray,
                  first_id: int) -> list[NodeTrack]:
    """VRU crossing cluster followed by the eNodeB."""
    speed = 0.0 if cfg.vru_stationary else cfg.pedestrian_speed_kmh / 3.6
    road_edge = -cfg.lane_count * LANE_WIDTH_M
    x0 = rng.uniform(-VRU_STRIP_WIDTH_M / 2, VRU_STRIP_WIDTH_M / 2, cfg.vru_count)
    y0 = rng.uniform(road_edge - 4.0, road_edge - 0.5, cfg.vru_count)
    tracks = []
    for i in range(cfg.vru_count):
        tracks.append(NodeTrack(first_id + i, "vru", times, np.full(len(times), x0[i]),
                                y0[i] + speed * times, np.full(len(times), speed)))
    tracks.append(NodeTrack(first_id + cfg.vru_count, "enb", [0.0], [ENB_POSITION[0]],
                            [ENB_POSITION[1]], [0.0]))
    return tracks


def _car_following(s0: np.ndarray, v_des: np.ndarray, L: float, times: np.ndarray):
    """Integrate the simplified Krauss rule on a ring; ``s0`` sorted ascending.

    Returns unwrapped positions and per-step speeds, both [steps+1, m].
    """
    m = len(s0)
    n = len(times)
    dt = SAMPLE_DT_S
    s = np.empty((n, m))
    v = np.empty((n, m))
    s[0] = s0
    cur_v = v_des.copy()
    lead = np.roll(np.arange(m), -1)
    wrap = np.zeros(m)
    wrap[-1] = L
    for k in range(n):
        gap = s[k][lead] + wrap - s[k]
        v_safe = cur_v[lead] + (gap - MIN_GAP_M) / TAU_S
        nv = np.minimum(np.minimum(v_des, cur_v + ACCEL_MPS2 * dt), v_safe)
        nv = np.maximum(nv, cur_v - DECEL_MPS2 * dt)
        nv = np.maximum(nv, 0.0)
        # hard floor on the gap after the step; emergency braking overrides the cap
        for _ in range(m + 1):
            cap = np.maximum(nv[lead] + (gap - MIN_GAP_M) / dt, 0.0)
            if np.all(nv <= cap):
                break
            nv = np.minimum(nv, cap)
        v[k] = nv
        cur_v = nv
        if k + 1 < n:
            s[k + 1] = s[k] + nv * dt
    return s, v


def generate_intersection_traffic(cfg, rng: np.random.Generator) -> MobilityTrace:
    """Vehicles under car-following on the ring road, the VRU cluster and the eNodeB."""
    cfg = validate_config(cfg)
    n = vehicle_count(cfg)
    L = cfg.road_length_m
    times = _sample_times(cfg.sim_duration_s)
    lo, hi = cfg.vehicle_speed_range_kmh
    tracks: list[NodeTrack] = []
    desired: dict[int, float] = {}
    nid = 0
    for lane, m in enumerate(_split_lanes(n, cfg.lane_count)):
        if m == 0:
            continue
        s0 = _uniform_spacings(rng, m, L, MIN_GAP_M)
        v_des = rng.uniform(lo, hi, m) / 3.6
        s, v = _car_following(s0, v_des, L, times)
        for j in range(m):
            tracks.append(_ring_track(nid, times, s[:, j], v[:, j], L, lane_y(lane)))
            desired[nid] = float(v_des[j])
            nid += 1
    tracks += _static_nodes(cfg, rng, times, nid)
    meta = {"generator": "intersection", "road_length_m": L, "min_gap_m": MIN_GAP_M,
            "desired_speed_mps": desired}
    return MobilityTrace(tracks, cfg.sim_duration_s, meta)


def matern_intensity(target_density: float, repulsion_m: float) -> float:
    """Parent Poisson intensity whose type-II thinning keeps ``target_density``."""
    return -math.log1p(-2.0 * repulsion_m * target_density) / (2.0 * repulsion_m)


MATERN_SATURATION = 0.95


def _matern_lane(rng, density: float, L: float, r: float) -> np.ndarray:
    if 2 * r * density > MATERN_SATURATION:
        # beyond what type-II thinning can reach; exact-count hard-core instead
        return _uniform_spacings(rng, int(round(density * L)), L, r)
    lam = matern_intensity(density, r)
    pts = rng.uniform(0.0, L, rng.poisson(lam * L))
    marks = rng.uniform(size=len(pts))
    keep = np.ones(len(pts), dtype=bool)
    if len(pts) > 1:
        d = np.abs(pts[:, None] - pts[None, :])
        d = np.minimum(d, L - d)
        conflict = (d < r) & ~np.eye(len(pts), dtype=bool)
        keep = ~np.any(conflict & (marks[None, :] < marks[:, None]), axis=1)
    return np.sort(pts[keep])


def generate_matern_placement(cfg, repulsion_m: float, rng: np.random.Generator) -> MobilityTrace:
    """Matérn type-II hard-core vehicles moving at constant speed.

    The hard-core gap holds at t=0; vehicles keep their own speeds afterwards.
    """
    cfg = validate_config(cfg)
    if repulsion_m <= 0:
        raise ValueError("repulsion_m must be > 0")
    if cfg.vehicle_density * repulsion_m >= 1:
        raise InfeasibleDensity(
            f"density {cfg.vehicle_density}/m cannot keep {repulsion_m} m hard-core gaps")
    L = cfg.road_length_m
    times = _sample_times(cfg.sim_duration_s)
    lo, hi = cfg.vehicle_speed_range_kmh
    tracks: list[NodeTrack] = []
    nid = 0
    for lane in range(cfg.lane_count):
        s0 = _matern_lane(rng, cfg.vehicle_density, L, repulsion_m)
        speeds = rng.uniform(lo, hi, len(s0)) / 3.6
        for j in range(len(s0)):
            s = s0[j] + speeds[j] * times
            tracks.append(_ring_track(nid, times, s, np.full(len(times), speeds[j]), L,
                                      lane_y(lane)))
            nid += 1
    tracks += _static_nodes(cfg, rng, times, nid)
    meta = {"generator": "matern", "road_length_m": L, "repulsion_m": repulsion_m}
    return MobilityTrace(tracks, cfg.sim_duration_s, meta)


# --- ns-2 movement scripts ------------------------------------------------------

_NUM = r"([-+0-9.eE]+)"
_INIT_RE = re.compile(r"^\$node_\((\d+)\)\s+set\s+([XYZ])_\s+" + _NUM + r"$")
_AT_RE = re.compile(r'^\$ns_\s+at\s+' + _NUM + r'\s+"\$node_\((\d+)\)\s+setdest\s+'
                    + _NUM + r"\s+" + _NUM + r"\s+" + _NUM + r'\s*"$')
_CLASS_RE = re.compile(r"^#\s*node\s+(\d+)\s+class\s+(\w+)\s*$")
_DURATION_RE = re.compile(r"^#\s*duration\s+" + _NUM + r"\s*$")


def _num(text: str, lineno: int, line: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise TraceSyntaxError(lineno, "a number", line) from None
    if not math.isfinite(v):
        raise TraceSyntaxError(lineno, "a finite number", line)
    return v


class _Builder:
    """Accumulates waypoints for one node while replaying setdest commands."""

    def __init__(self, x: float, y: float):
        self.wp = [[0.0, x, y, 0.0]]
        self.last_cmd = 0.0

    def _pos(self, t: float) -> tuple[float, float]:
        wp = self.wp
        for a, b in zip(wp, wp[1:]):
            if a[0] <= t <= b[0]:
                f = (t - a[0]) / (b[0] - a[0])
                return a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])
        return wp[-1][1], wp[-1][2]

    def setdest(self, t: float, x: float, y: float, speed: float):
        px, py = self._pos(t)
        self.wp = [w for w in self.wp if w[0] < t]
        self.wp.append([t, px, py, 0.0])
        dist = math.hypot(x - px, y - py)
        if speed > 0 and dist > 0:
            self.wp[-1][3] = speed
            self.wp.append([t + dist / speed, x, y, 0.0])
        self.last_cmd = t


def parse_movement_trace(text: str | Iterable[str]) -> MobilityTrace:
    """Parse an ns-2 style movement script into a MobilityTrace.

    Understands ``$node_(i) set X_|Y_|Z_ v`` and
    ``$ns_ at T "$node_(i) setdest X Y S"``; Z is discarded.  ``# node i
    class c`` and ``# duration d`` comments are optional metadata written by
    :func:`write_movement_trace`.
    """
    lines = text.splitlines() if isinstance(text, str) else list(text)
    init: dict[int, dict[str, float]] = {}
    builders: dict[int, _Builder] = {}
    classes: dict[int, str] = {}
    duration = None
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _CLASS_RE.match(line)
            if m and m.group(2) in NODE_CLASSES:
                classes[int(m.group(1))] = m.group(2)
            m = _DURATION_RE.match(line)
            if m:
                duration = _num(m.group(1), lineno, line)
            continue
        if line.startswith("$god_"):
            continue
        m = _INIT_RE.match(line)
        if m:
            nid = int(m.group(1))
            if nid in builders:
                raise TraceSyntaxError(lineno, "initial position before any setdest", line)
            init.setdefault(nid, {})[m.group(2)] = _num(m.group(3), lineno, line)
            continue
        m = _AT_RE.match(line)
        if not m:
            raise TraceSyntaxError(lineno, '`$node_(i) set X_ v` or `$ns_ at T "$node_(i) setdest X Y S"`',
                                   line)
        t, nid = _num(m.group(1), lineno, line), int(m.group(2))
        x, y, speed = (_num(m.group(k), lineno, line) for k in (3, 4, 5))
        if t < 0:
            raise TraceSyntaxError(lineno, "a non-negative time", line)
        if speed < 0:
            raise TraceSyntaxError(lineno, "a non-negative speed", line)
        if nid not in builders:
            if nid not in init:
                raise UnknownNodeReference(nid, lineno)
            builders[nid] = _Builder(init[nid].get("X", 0.0), init[nid].get("Y", 0.0))
        b = builders[nid]
        if t < b.last_cmd:
            raise NonMonotoneTime(nid, lineno)
        b.setdest(t, x, y, speed)
    for nid, pos in init.items():
        if nid not in builders:
            builders[nid] = _Builder(pos.get("X", 0.0), pos.get("Y", 0.0))
    tracks = []
    end = 0.0
    for nid in sorted(builders):
        wp = np.array(builders[nid].wp)
        end = max(end, wp[-1, 0])
        tracks.append(NodeTrack(nid, classes.get(nid, "vehicle"), wp[:, 0], wp[:, 1], wp[:, 2],
                                wp[:, 3]))
    return MobilityTrace(tracks, end if duration is None else duration)


def write_movement_trace(trace: MobilityTrace) -> str:
    """Serialize to the movement-script format read by :func:`parse_movement_trace`."""
    out = ["# v2psim movement trace", f"# duration {trace.duration_s:.6f}"]
    for nid in trace.node_ids():
        out.append(f"# node {nid} class {trace.tracks[nid].kind}")
    for nid in trace.node_ids():
        tr = trace.tracks[nid]
        out.append(f"$node_({nid}) set X_ {tr.x[0]:.6f}")
        out.append(f"$node_({nid}) set Y_ {tr.y[0]:.6f}")
        out.append(f"$node_({nid}) set Z_ {0.0:.6f}")
    moves = []
    for nid in trace.node_ids():
        tr = trace.tracks[nid]
        for i in range(len(tr.t) - 1):
            dist = math.hypot(tr.x[i + 1] - tr.x[i], tr.y[i + 1] - tr.y[i])
            if dist == 0:
                continue
            speed = dist / (tr.t[i + 1] - tr.t[i])
            moves.append((tr.t[i], nid, f'$ns_ at {tr.t[i]:.6f} "$node_({nid}) setdest '
                                        f'{tr.x[i + 1]:.6f} {tr.y[i + 1]:.6f} {speed:.9f}"'))
    moves.sort(key=lambda m: (m[0], m[1]))
    out += [m[2] for m in moves]
    return "\n".join(out) + "\n"
