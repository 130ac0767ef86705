import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from v2psim.scenario import (ConfigError, MissingField, RangeViolation, ScenarioConfig,
                             ValidatedConfig, density_for_count, format_config, load_config,
                             parse_config_text, substream, validate_config, vehicle_count)


def test_defaults_are_valid():
    cfg = validate_config(ScenarioConfig())
    assert isinstance(cfg, ValidatedConfig)
    assert cfg.enb_tx_power_dbm == 46
    assert cfg.vru_tx_power_dbm == 23
    assert cfg.transmission_range_m == 500


def test_zero_density_rejected():
    with pytest.raises(RangeViolation) as exc:
        validate_config(ScenarioConfig(vehicle_density=0))
    assert exc.value.field == "vehicle_density"


def test_packet_size_preserved():
    assert validate_config(ScenarioConfig(packet_size_bits=10000)).packet_size_bits == 10000


def test_density_bounds_and_override():
    with pytest.raises(RangeViolation):
        validate_config(ScenarioConfig(vehicle_density=0.2))
    cfg = validate_config(ScenarioConfig(vehicle_density=0.2, allow_density_override=True))
    assert vehicle_count(cfg) == 200


def test_all_violations_reported_together():
    bad = ScenarioConfig(lane_count=0, bandwidth_mhz=-1, vehicle_speed_range_kmh=(110, 70))
    with pytest.raises(ConfigError) as exc:
        validate_config(bad)
    fields = {v.field for v in exc.value.violations}
    assert {"lane_count", "bandwidth_mhz", "vehicle_speed_range_kmh"} <= fields


def test_missing_field():
    with pytest.raises(MissingField):
        validate_config(ScenarioConfig(carrier_freq_ghz=None))


def test_bad_delivery_mode():
    with pytest.raises(RangeViolation):
        validate_config(ScenarioConfig(delivery_mode="nearest_k(0)"))
    assert validate_config(ScenarioConfig(delivery_mode="nearest_k(5)")).nearest_k == 5
    assert ScenarioConfig().nearest_k is None


@pytest.mark.parametrize("density, count", [(0.01, 10), (0.09, 90), (0.05, 50)])
def test_vehicle_count_examples(density, count):
    assert vehicle_count(validate_config(ScenarioConfig(vehicle_density=density))) == count


def test_zero_lanes_caught_by_validation():
    with pytest.raises(RangeViolation):
        validate_config(ScenarioConfig(lane_count=0))


def test_validate_is_idempotent():
    cfg = validate_config(ScenarioConfig(seed=7))
    assert validate_config(cfg) is cfg
    assert validate_config(ScenarioConfig(**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__})) == cfg


@given(st.floats(0.01, 0.09), st.floats(0.01, 0.09),
       st.floats(100, 5000), st.integers(1, 4))
def test_vehicle_count_monotone(d1, d2, length, lanes):
    lo, hi = sorted((d1, d2))
    a = validate_config(ScenarioConfig(vehicle_density=lo, road_length_m=length, lane_count=lanes))
    b = validate_config(ScenarioConfig(vehicle_density=hi, road_length_m=length, lane_count=lanes))
    assert vehicle_count(a) <= vehicle_count(b)
    longer = validate_config(a.replace(road_length_m=length * 1.5))
    wider = validate_config(a.replace(lane_count=lanes + 1))
    assert vehicle_count(a) <= vehicle_count(longer)
    assert vehicle_count(a) <= vehicle_count(wider)


def test_density_for_count_inverts():
    for n in range(10, 100, 10):
        assert vehicle_count(validate_config(ScenarioConfig(vehicle_density=density_for_count(n)))) == n


def test_config_file_round_trip(tmp_path):
    cfg = ScenarioConfig(seed=11, delivery_mode="nearest_k(5)", network_mode="mec",
                         vehicle_speed_range_kmh=(60.0, 100.0), vru_stationary=True)
    path = tmp_path / "scenario.cfg"
    path.write_text("# scenario\n" + format_config(cfg))
    assert load_config(path) == cfg


def test_config_file_errors():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("no_such_key = 3\nseed =\nlane_count = two\n")
    kinds = {type(v) for v in exc.value.violations}
    assert MissingField in kinds and RangeViolation in kinds
    assert len(exc.value.violations) == 3


def test_config_file_comments_and_blanks():
    cfg = parse_config_text("\n# comment\nseed = 5  # trailing\ncam_rate_hz=2.5\n")
    assert cfg.seed == 5 and cfg.cam_rate_hz == 2.5


def test_substreams_independent_and_reproducible():
    a = substream(3, "mobility", 50, 0).random(4)
    assert np.array_equal(a, substream(3, "mobility", 50, 0).random(4))
    for other in (substream(3, "fading", 50, 0), substream(3, "mobility", 50, 1),
                  substream(4, "mobility", 50, 0)):
        assert not np.array_equal(a, other.random(4))


def test_nonfinite_power_rejected():
    with pytest.raises(RangeViolation):
        validate_config(ScenarioConfig(vru_tx_power_dbm=math.inf))
