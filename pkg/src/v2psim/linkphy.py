"""Resource-block link abstraction: capacity, effective SNR, BLER and HARQ."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EESM_BETA = 7.0
BLER_K = 0.448
BLER_S0_DB = -4.90
BLER_FLOOR = 1e-6
HARQ_RTT_MS = 8.0

# LTE channel bandwidth (MHz) -> resource blocks
RB_PER_BANDWIDTH = {1.4: 6, 3.0: 15, 5.0: 25, 10.0: 50, 15.0: 75, 20.0: 100}


class AllocationOutOfRange(ValueError):
    pass


class EmptyPacket(ValueError):
    pass


class EmptyList(ValueError):
    pass


@dataclass(frozen=True)
class ResourceGrid:
    rb_count: int = 50
    subcarriers_per_rb: int = 12
    symbols_per_slot: int = 7
    slots_per_subframe: int = 2
    subframe_ms: float = 1.0

    def __post_init__(self):
        for name in ("rb_count", "subcarriers_per_rb", "symbols_per_slot", "slots_per_subframe",
                     "subframe_ms"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @classmethod
    def for_bandwidth(cls, bandwidth_mhz: float) -> "ResourceGrid":
        try:
            return cls(rb_count=RB_PER_BANDWIDTH[float(bandwidth_mhz)])
        except KeyError:
            raise ValueError(f"no LTE channel of {bandwidth_mhz} MHz") from None


@dataclass(frozen=True)
class McsProfile:
    modulation_bits_per_symbol: int = 4
    code_rate: float = 0.5

    def __post_init__(self):
        if self.modulation_bits_per_symbol not in (2, 4, 6):
            raise ValueError("bits per symbol must be 2, 4 or 6")
        if not 0 < self.code_rate <= 1:
            raise ValueError("code rate must be in (0, 1]")


@dataclass(frozen=True)
class HarqOutcome:
    delivered: bool
    attempts: int
    airtime_ms: float
    harq_delay_ms: float


@dataclass(frozen=True)
class BlerCurve:
    """Logistic waterfall ``1 / (1 + exp(k (s - s0)))`` clamped away from 0 and 1."""

    k: float = BLER_K
    s0_db: float = BLER_S0_DB

    def __call__(self, effective_snr_db):
        s = np.asarray(effective_snr_db, dtype=float)
        # logaddexp keeps full precision in both tails and never overflows
        p = np.exp(-np.logaddexp(0.0, self.k * (s - self.s0_db)))
        p = np.clip(p, BLER_FLOOR, 1.0 - BLER_FLOOR)
        return float(p) if p.ndim == 0 else p

    @classmethod
    def from_anchors(cls, snr_a_db: float, bler_a: float, snr_b_db: float, bler_b: float):
        """Two-point fit: logit(1 - p) is linear in SNR."""
        la = math.log((1 - bler_a) / bler_a)
        lb = math.log((1 - bler_b) / bler_b)
        k = (lb - la) / (snr_b_db - snr_a_db)
        return cls(k=k, s0_db=snr_a_db - la / k)


DEFAULT_BLER = BlerCurve()


def bits_per_subframe(grid: ResourceGrid, mcs: McsProfile, allocated_rbs: int) -> float:
    if not 1 <= allocated_rbs <= grid.rb_count:
        raise AllocationOutOfRange(f"{allocated_rbs} RBs outside [1, {grid.rb_count}]")
    return (allocated_rbs * grid.subcarriers_per_rb * grid.symbols_per_slot
            * grid.slots_per_subframe * mcs.modulation_bits_per_symbol * mcs.code_rate)


def tx_duration_ms(packet_bits: int, grid: ResourceGrid, mcs: McsProfile,
                   allocated_rbs: int) -> float:
    """Airtime of one transmission: whole subframes needed to carry the packet."""
    if packet_bits <= 0:
        raise EmptyPacket("packet must carry at least one bit")
    per_sf = bits_per_subframe(grid, mcs, allocated_rbs)
    return math.ceil(packet_bits / per_sf) * grid.subframe_ms


def effective_snr_db(per_rb_snr_db, beta: float = EESM_BETA):
    """Exponential effective SNR mapping over the last axis.

    Accepts one list of per-RB SNRs or a 2-D array with one link per row.
    """
    s = np.asarray(per_rb_snr_db, dtype=float)
    if s.size == 0 or s.shape[-1] == 0:
        raise EmptyList("need at least one RB SNR")
    lin = 10.0 ** (s / 10.0)
    return _eesm_linear(lin, beta)


def _eesm_linear(lin: np.ndarray, beta: float = EESM_BETA):
    # shift by the per-row minimum so exp() never underflows to zero
    m = lin.min(axis=-1, keepdims=True)
    mean = np.exp((m - lin) / beta).sum(axis=-1) / lin.shape[-1]
    eff = m[..., 0] - beta * np.log(mean)
    out = 10.0 * np.log10(eff)
    return float(out) if out.ndim == 0 else out


def bler(effective_snr_db, curve: BlerCurve = DEFAULT_BLER):
    return curve(effective_snr_db)


def harq_attempts(p_fail, max_attempts: int, rng: np.random.Generator):
    """Vectorised HARQ: attempts used and delivery flag per independent link.

    Each attempt fails independently with probability ``p_fail``; delivery
    stops at the first success.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    p = np.atleast_1d(np.asarray(p_fail, dtype=float))
    fails = rng.random((len(p), max_attempts)) < p[:, None]
    success = ~fails
    delivered = success.any(axis=1)
    attempts = np.where(delivered, success.argmax(axis=1) + 1, max_attempts)
    return attempts, delivered


def transmit_with_harq(packet_bits: int, per_rb_snr_db, grid: ResourceGrid, mcs: McsProfile,
                       allocated_rbs: int, max_attempts: int, rng: np.random.Generator,
                       curve: BlerCurve = DEFAULT_BLER) -> HarqOutcome:
    """One packet over one link with up to ``max_attempts`` independent tries."""
    airtime = tx_duration_ms(packet_bits, grid, mcs, allocated_rbs)
    p = curve(effective_snr_db(per_rb_snr_db))
    attempts, delivered = harq_attempts(p, max_attempts, rng)
    n = int(attempts[0])
    return HarqOutcome(bool(delivered[0]), n, n * airtime, (n - 1) * HARQ_RTT_MS)
