"""Tapped-delay-line Rayleigh fading traces, pathloss and link SNR."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8
RB_SPACING_HZ = 180e3
PATHLOSS_EXPONENT = 2.7
NOISE_FIGURE_DB = 9.0
THERMAL_NOISE_DBM_HZ = -174.0
N_SINUSOIDS = 64
FADING_SAMPLE_PERIOD_S = 1e-3


class DegenerateProfile(UserWarning):
    """A single-tap profile: the trace is frequency-flat."""


class NonpositiveDistance(ValueError):
    pass


@dataclass(frozen=True)
class TapProfile:
    name: str
    delays_ns: tuple[float, ...]
    powers_db: tuple[float, ...]

    def __post_init__(self):
        d = np.asarray(self.delays_ns, dtype=float)
        if len(d) == 0 or len(d) != len(self.powers_db):
            raise ValueError("need one power per tap and at least one tap")
        if d[0] != 0 or np.any(np.diff(d) <= 0):
            raise ValueError("tap delays must start at 0 and strictly increase")
        if not np.all(np.isfinite(self.powers_db)):
            raise ValueError("tap powers must be finite")

    @property
    def n_taps(self) -> int:
        return len(self.delays_ns)

    def linear_powers(self) -> np.ndarray:
        p = 10.0 ** (np.asarray(self.powers_db, dtype=float) / 10.0)
        return p / p.sum()

    def frequency_correlation(self, delta_f_hz) -> np.ndarray:
        """Complex frequency correlation of the channel at separation ``delta_f_hz``."""
        df = np.atleast_1d(np.asarray(delta_f_hz, dtype=float))
        tau = np.asarray(self.delays_ns) * 1e-9
        return (self.linear_powers()[None, :] * np.exp(-2j * np.pi * df[:, None] * tau[None, :])).sum(1)


EVA = TapProfile("EVA", (0, 30, 150, 310, 370, 710, 1090, 1730, 2510),
                 (0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9))
EPA = TapProfile("EPA", (0, 30, 70, 90, 110, 190, 410),
                 (0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8))
PROFILES = {"eva": EVA, "epa": EPA}


@dataclass(frozen=True, eq=False)
class FadingTrace:
    gains_db: np.ndarray
    sample_period_s: float
    doppler_hz: float
    profile: TapProfile
    seed: int | None = None
    frequency_flat: bool = False
    _power: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        g = np.array(self.gains_db, dtype=float)
        if g.ndim != 2 or g.shape[1] < 1 or g.shape[0] < 1:
            raise ValueError("gains_db must be a [time, rb] matrix with rb_count >= 1")
        if not np.all(np.isfinite(g)):
            raise ValueError("gains_db must be finite")
        if not self.sample_period_s > 0:
            raise ValueError("sample_period_s must be > 0")
        g.setflags(write=False)
        object.__setattr__(self, "gains_db", g)

    @property
    def n_samples(self) -> int:
        return self.gains_db.shape[0]

    @property
    def rb_count(self) -> int:
        return self.gains_db.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples * self.sample_period_s

    @property
    def linear_power(self) -> np.ndarray:
        if self._power is None:
            p = 10.0 ** (self.gains_db / 10.0)
            p.setflags(write=False)
            object.__setattr__(self, "_power", p)
        return self._power

    def metadata(self) -> dict:
        return {
            "profile": self.profile.name,
            "delays_ns": list(self.profile.delays_ns),
            "powers_db": list(self.profile.powers_db),
            "doppler_hz": self.doppler_hz,
            "sample_period_s": self.sample_period_s,
            "n_samples": self.n_samples,
            "rb_count": self.rb_count,
            "seed": self.seed,
            "frequency_flat": self.frequency_flat,
        }


def doppler_frequency(speed_kmh: float, carrier_freq_ghz: float) -> float:
    """Maximum Doppler shift in Hz."""
    if speed_kmh < 0 or carrier_freq_ghz <= 0:
        raise ValueError("need speed >= 0 and carrier frequency > 0")
    return (speed_kmh / 3.6) * carrier_freq_ghz * 1e9 / SPEED_OF_LIGHT


def rayleigh_process(doppler_hz: float, times: np.ndarray, rng: np.random.Generator,
                     n_sinusoids: int = N_SINUSOIDS, offset: float | None = None,
                     chunk: int = 16384) -> np.ndarray:
    """Unit-power complex Rayleigh process by sum of sinusoids.

    Arrival angles are equally spaced around the circle, shifted by
    ``offset`` grid steps (random when None), and each sinusoid has an
    independent uniform phase.  The time autocorrelation of one realization
    then follows J0(2 pi f_d tau) closely.
    """
    if offset is None:
        offset = rng.uniform()
    phases = rng.uniform(0.0, 2 * np.pi, n_sinusoids)
    alpha = 2 * np.pi * (np.arange(n_sinusoids) + offset) / n_sinusoids
    w = 2 * np.pi * doppler_hz * np.cos(alpha)
    out = np.empty(len(times), dtype=complex)
    for lo in range(0, len(times), chunk):
        t = times[lo:lo + chunk]
        out[lo:lo + chunk] = np.exp(1j * (np.outer(t, w) + phases)).sum(axis=1)
    return out / math.sqrt(n_sinusoids)


def rb_center_offsets_hz(rb_count: int) -> np.ndarray:
    return (np.arange(rb_count) - (rb_count - 1) / 2.0) * RB_SPACING_HZ


def tap_processes(profile: TapProfile, doppler_hz: float, times: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """Independent unit-power tap processes, [len(times), n_taps].

    Tap k uses angle offset (k + 0.5) / (2 K): the angles of all taps and
    their mirror images then interleave evenly, so no two sinusoids in the
    trace share a Doppler frequency and cross-tap beats average out quickly.
    """
    K = profile.n_taps
    return np.stack([rayleigh_process(doppler_hz, times, rng, offset=(k + 0.5) / (2 * K))
                     for k in range(K)], axis=1)


def whiten_taps(h: np.ndarray) -> np.ndarray:
    """Mix tap processes so their sample covariance over the trace is identity.

    A finite trace leaves residual correlation between taps, which biases the
    mean power of individual RBs.  The symmetric inverse square root is the
    mixing closest to the identity, and since every tap shares the same
    Doppler spectrum the mixture keeps the Rayleigh law and autocorrelation.
    """
    cov = h.conj().T @ h / len(h)
    vals, vecs = np.linalg.eigh(cov)
    return h @ (vecs @ np.diag(vals ** -0.5) @ vecs.conj().T)


def generate_fading_trace(profile: TapProfile, doppler_hz: float, duration_s: float,
                          rb_count: int, bandwidth_mhz: float, rng: np.random.Generator,
                          seed: int | None = None) -> FadingTrace:
    """Time x RB gain matrix in dB, one row per millisecond."""
    if duration_s <= 0:
        raise ValueError("duration_s must be > 0")
    if rb_count < 1:
        raise ValueError("rb_count must be >= 1")
    if rb_count * RB_SPACING_HZ > bandwidth_mhz * 1e6 + 1e-6:
        raise ValueError(f"{rb_count} RBs do not fit in {bandwidth_mhz} MHz")
    n = int(round(duration_s / FADING_SAMPLE_PERIOD_S))
    times = np.arange(n) * FADING_SAMPLE_PERIOD_S
    h = tap_processes(profile, doppler_hz, times, rng)
    if doppler_hz * duration_s >= 1.0 and n > profile.n_taps:
        h = whiten_taps(h)
    tau = np.asarray(profile.delays_ns) * 1e-9
    steer = np.sqrt(profile.linear_powers())[:, None] * np.exp(
        -2j * np.pi * tau[:, None] * rb_center_offsets_hz(rb_count)[None, :])
    H = h @ steer
    gains = 20.0 * np.log10(np.maximum(np.abs(H), 1e-15))
    return FadingTrace(gains, FADING_SAMPLE_PERIOD_S, float(doppler_hz), profile, seed,
                       frequency_flat=profile.n_taps == 1)


def pathloss_db(distance_m, carrier_freq_ghz: float):
    """Log-distance pathloss with a free-space 1 m reference and exponent 2.7."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(~(d > 0)):
        raise NonpositiveDistance(f"distance must be > 0, got {distance_m}")
    pl0 = 20.0 * math.log10(4 * math.pi * carrier_freq_ghz * 1e9 / SPEED_OF_LIGHT)
    pl = pl0 + 10.0 * PATHLOSS_EXPONENT * np.log10(d)
    return float(pl) if pl.ndim == 0 else pl


def noise_floor_dbm(bandwidth_mhz: float, noise_figure_db: float = NOISE_FIGURE_DB) -> float:
    if bandwidth_mhz <= 0:
        raise ValueError("bandwidth must be > 0")
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bandwidth_mhz * 1e6) + noise_figure_db


def link_snr_db(tx_power_dbm, pathloss_db, fading_gain_db, noise_floor_dbm):
    return tx_power_dbm - pathloss_db + fading_gain_db - noise_floor_dbm


# --- export -------------------------------------------------------------------

_BIN_HEADER = struct.Struct("<QQ")


def write_fading_csv(trace: FadingTrace, path: str | Path) -> Path:
    """Write ``t_ms,rb,gain_db`` rows plus a ``.meta.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    n, m = trace.gains_db.shape
    t_ms = np.repeat(np.arange(n) * trace.sample_period_s * 1e3, m)
    rb = np.tile(np.arange(m), n)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t_ms,rb,gain_db\n")
        np.savetxt(fh, np.column_stack([t_ms, rb, trace.gains_db.ravel()]),
                   fmt=("%.3f", "%d", "%.6f"), delimiter=",")
    meta = Path(str(path) + ".meta.json")
    meta.write_text(json.dumps(trace.metadata(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return meta


def read_fading_csv(path: str | Path) -> FadingTrace:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".meta.json").read_text(encoding="utf-8"))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    gains = data[:, 2].reshape(meta["n_samples"], meta["rb_count"])
    profile = TapProfile(meta["profile"], tuple(meta["delays_ns"]), tuple(meta["powers_db"]))
    return FadingTrace(gains, meta["sample_period_s"], meta["doppler_hz"], profile,
                       meta.get("seed"), meta.get("frequency_flat", False))


def write_fading_binary(trace: FadingTrace, path: str | Path) -> None:
    """Header: two little-endian uint64 (rows, cols); body: float64 LE, row-major."""
    g = np.ascontiguousarray(trace.gains_db, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_BIN_HEADER.pack(*g.shape))
        fh.write(g.tobytes(order="C"))


def read_fading_binary(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    rows, cols = _BIN_HEADER.unpack_from(raw)
    body = raw[_BIN_HEADER.size:]
    if len(body) != rows * cols * 8:
        raise ValueError(f"expected {rows}x{cols} doubles, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).copy()
