import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from v2psim.linkphy import (HARQ_RTT_MS, AllocationOutOfRange, BlerCurve, EmptyList,
                            EmptyPacket, McsProfile, ResourceGrid, bits_per_subframe, bler,
                            effective_snr_db, harq_attempts, transmit_with_harq, tx_duration_ms)

GRID = ResourceGrid()
QAM16 = McsProfile()


def eesm_oracle(snrs_db, beta=7.0):
    lin = [10 ** (s / 10) for s in snrs_db]
    return 10 * math.log10(-beta * math.log(sum(math.exp(-g / beta) for g in lin) / len(lin)))


def test_capacity_examples():
    assert bits_per_subframe(GRID, QAM16, 50) == 16800
    assert bits_per_subframe(GRID, QAM16, 1) == 336
    with pytest.raises(AllocationOutOfRange):
        bits_per_subframe(GRID, QAM16, 0)
    with pytest.raises(AllocationOutOfRange):
        bits_per_subframe(GRID, QAM16, 51)


def test_tx_duration_examples():
    assert tx_duration_ms(10000, GRID, QAM16, 50) == 1
    assert tx_duration_ms(10000, GRID, QAM16, 5) == 6
    assert tx_duration_ms(336, GRID, QAM16, 1) == 1
    with pytest.raises(EmptyPacket):
        tx_duration_ms(0, GRID, QAM16, 5)


@given(st.integers(1, 10**6), st.integers(1, 50))
def test_capacity_sufficient(bits, rbs):
    assert tx_duration_ms(bits, GRID, QAM16, rbs) * bits_per_subframe(GRID, QAM16, rbs) >= bits


def test_grid_for_bandwidth():
    assert ResourceGrid.for_bandwidth(10).rb_count == 50
    assert ResourceGrid.for_bandwidth(20).rb_count == 100
    with pytest.raises(ValueError):
        ResourceGrid.for_bandwidth(7)


def test_eesm_examples():
    assert effective_snr_db([7.5] * 50) == pytest.approx(7.5, abs=1e-9)
    v = effective_snr_db([10, 10, -40])
    assert -40 < v < 10
    assert effective_snr_db([0, 20]) == pytest.approx(eesm_oracle([0, 20]), abs=1e-9)
    with pytest.raises(EmptyList):
        effective_snr_db([])


@given(st.lists(st.floats(-30, 40), min_size=1, max_size=60))
def test_eesm_bounded(snrs):
    v = effective_snr_db(snrs)
    assert min(snrs) - 1e-9 <= v <= max(snrs) + 1e-9


def test_eesm_rows_match_single():
    rows = np.random.default_rng(0).uniform(-10, 30, (5, 50))
    np.testing.assert_allclose(effective_snr_db(rows), [effective_snr_db(r) for r in rows])
    # extreme spread would underflow a naive exp(-g/beta) mean
    assert math.isfinite(effective_snr_db([60, 60, 70]))


def test_bler_anchors():
    assert bler(-8) == pytest.approx(0.80, abs=0.01)
    assert bler(0) == pytest.approx(0.10, abs=0.01)
    assert bler(60) <= 1e-5


def test_bler_from_anchors_recovers_curve():
    c = BlerCurve.from_anchors(-8, 0.8, 0, 0.1)
    assert c(-8) == pytest.approx(0.8, abs=1e-12)
    assert c(0) == pytest.approx(0.1, abs=1e-12)
    assert c.k == pytest.approx(0.448, abs=0.001)
    assert c.s0_db == pytest.approx(-4.90, abs=0.01)


def test_bler_monotone_and_bounded():
    s = np.linspace(-60, 60, 2001)
    p = bler(s)
    assert np.all((p > 0) & (p < 1))
    core = (s > -35) & (s < 25)  # the clamp to [1e-6, 1 - 1e-6] engages outside this
    assert np.all(np.diff(p[core]) < 0)
    assert np.all(np.diff(p) <= 0)


def test_harq_perfect_channel():
    out = transmit_with_harq(10000, [60] * 50, GRID, QAM16, 50, 4, np.random.default_rng(0))
    assert out.delivered and out.attempts == 1 and out.harq_delay_ms == 0 and out.airtime_ms == 1


def test_harq_dead_channel():
    attempts, ok = harq_attempts(1 - 1e-6, 3, np.random.default_rng(0))
    assert not ok[0] and attempts[0] == 3
    out = transmit_with_harq(10000, [-60] * 50, GRID, QAM16, 50, 3, np.random.default_rng(0))
    assert not out.delivered and out.attempts == 3
    assert out.harq_delay_ms == 2 * HARQ_RTT_MS


def test_harq_geometric_oracle():
    n = 200_000
    attempts, ok = harq_attempts(np.full(n, 0.5), 4, np.random.default_rng(1))
    assert ok.mean() == pytest.approx(0.9375, abs=0.005)
    assert attempts.mean() == pytest.approx(1.875, abs=0.01)


@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("m", [1, 2, 4])
def test_harq_delivery_within_3_se(p, m):
    n = 20_000
    rng = np.random.default_rng(int(p * 10) * 10 + m)
    # drive the scalar entry point through a flat channel whose BLER is exactly p
    curve = BlerCurve(1.0, 0.0)
    snr = math.log((1 - p) / p)
    assert curve(snr) == pytest.approx(p)
    ok = [transmit_with_harq(100, [snr], ResourceGrid(rb_count=1), QAM16, 1, m, rng, curve).delivered
          for _ in range(n)]
    expected = 1 - p ** m
    se = math.sqrt(expected * (1 - expected) / n)
    assert abs(np.mean(ok) - expected) <= 3 * se


def test_harq_rejects_zero_attempts():
    with pytest.raises(ValueError):
        harq_attempts(0.5, 0, np.random.default_rng(0))


def test_mcs_validation():
    with pytest.raises(ValueError):
        McsProfile(3, 0.5)
    with pytest.raises(ValueError):
        McsProfile(4, 0.0)
