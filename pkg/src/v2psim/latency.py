"""Per-packet latency decomposition for conventional and MEC-assisted cores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linkphy import HarqOutcome

CORE_TRANSPORT_MS = (15.0, 35.0)
TRANSPORT_SHARE = 0.4
BACKHAUL_MS = (1.0, 5.0)
EXEC_MS = 2.0
UL_ACCESS_MS = 4.0
DL_SCHED_MS = 1.0

MODES = ("conventional", "mec")

# Latency terms live on a binary grid of 2**-20 ms (about 1 ns).  Sums of
# grid values below 2**32 ms are exact, so the latency identities hold
# bit-for-bit regardless of summation order.
TIME_QUANTUM_MS = 2.0 ** -20


def quantize_ms(value):
    q = np.round(np.asarray(value, dtype=float) / TIME_QUANTUM_MS) * TIME_QUANTUM_MS
    return float(q) if q.ndim == 0 else q


class UndeliveredPacket(ValueError):
    pass


@dataclass(frozen=True)
class LatencyBreakdown:
    """Latency terms in milliseconds.

    ``t_bh``, ``t_tn`` and ``t_cn`` are one traversal of the backhaul,
    transport and core networks; the end-to-end figure counts them twice.
    """

    t_ul_ms: float
    t_dl_ms: float
    t_bh_ms: float
    t_tn_ms: float
    t_cn_ms: float
    t_exc_ms: float
    mode: str = "conventional"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("t_ul_ms", "t_dl_ms", "t_bh_ms", "t_tn_ms", "t_cn_ms", "t_exc_ms"):
            v = getattr(self, name)
            if not 0 <= v < 2.0 ** 32:
                raise ValueError(f"{name} must be in [0, 2**32) ms")
            object.__setattr__(self, name, quantize_ms(v))
        if self.mode == "mec" and (self.t_tn_ms != 0 or self.t_cn_ms != 0):
            raise ValueError("MEC breakdown cannot carry transport/core latency")

    @property
    def network_ms(self) -> float:
        return self.t_bh_ms + self.t_tn_ms + self.t_cn_ms

    @property
    def one_way_ms(self) -> float:
        return one_way_latency_ms(self)

    @property
    def e2e_ms(self) -> float:
        return e2e_latency_ms(self)

    def without_core(self) -> "LatencyBreakdown":
        """The same packet with transport and core hops removed (MEC)."""
        return LatencyBreakdown(self.t_ul_ms, self.t_dl_ms, self.t_bh_ms, 0.0, 0.0,
                                self.t_exc_ms, "mec")


def one_way_latency_ms(b: LatencyBreakdown) -> float:
    """VRU to processing node: uplink, one network traversal, processing."""
    return b.t_ul_ms + b.t_bh_ms + b.t_tn_ms + b.t_cn_ms + b.t_exc_ms


def e2e_latency_ms(b: LatencyBreakdown) -> float:
    """VRU to vehicle: the network traversal counts once each way, processing once."""
    return b.t_ul_ms + 2 * (b.t_bh_ms + b.t_tn_ms + b.t_cn_ms) + b.t_exc_ms + b.t_dl_ms


def radio_latency_ms(outcome: HarqOutcome, access_ms: float) -> float:
    return outcome.airtime_ms + outcome.harq_delay_ms + access_ms


def sample_network_terms(mode: str, rng: np.random.Generator, size: int | None = None):
    """Draw (t_bh, t_tn, t_cn) for one or ``size`` packets.

    Transport plus core is one U(15, 35) ms draw split 40/60; MEC skips both.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    bh = quantize_ms(rng.uniform(*BACKHAUL_MS, size))
    core_transport = rng.uniform(*CORE_TRANSPORT_MS, size)
    if mode == "mec":
        zero = np.zeros_like(core_transport) if size is not None else 0.0
        return bh, zero, zero
    tn = quantize_ms(TRANSPORT_SHARE * core_transport)
    return bh, tn, quantize_ms(core_transport) - tn


def sample_breakdown(mode: str, radio: tuple[HarqOutcome, HarqOutcome], rng: np.random.Generator,
                     exc_ms: float = EXEC_MS) -> LatencyBreakdown:
    ul, dl = radio
    if not (ul.delivered and dl.delivered):
        raise UndeliveredPacket("a dropped packet has no latency")
    bh, tn, cn = sample_network_terms(mode, rng)
    return LatencyBreakdown(
        t_ul_ms=radio_latency_ms(ul, UL_ACCESS_MS),
        t_dl_ms=radio_latency_ms(dl, DL_SCHED_MS),
        t_bh_ms=float(bh), t_tn_ms=float(tn), t_cn_ms=float(cn),
        t_exc_ms=exc_ms, mode=mode,
    )
