import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ssdf_arena.detector import q_function
from ssdf_arena.link_model import (
    ENVIRONMENTS,
    LinkProfile,
    UnreachableLinkError,
    ber,
    clean_snr_linear,
    environment,
    expected_retransmissions,
    handshake_success_prob,
    link_snr_db,
    load_overrides,
    packet_failure_prob,
    packet_success_prob,
    path_loss_db,
    power_level,
    received_power_dbm,
    shadow_sample_db,
)


def test_path_loss_examples():
    assert path_loss_db(environment("OL"), 1.0) == pytest.approx(40.2)
    ol = path_loss_db(environment("OL"), 125.0)
    on = path_loss_db(environment("ON"), 125.0)
    assert ol == pytest.approx(40.2 + 24.2 * math.log10(125), abs=1e-9)
    assert ol == pytest.approx(90.95, abs=5e-3)
    assert on == pytest.approx(40.2 + 35.1 * math.log10(125), abs=1e-9)
    assert on == pytest.approx(113.81, abs=1e-2)  # the quoted figure is rounded
    assert on > ol
    assert path_loss_db(environment("OL"), 125.0, shadow_sample_db=2.0) == pytest.approx(ol + 2)
    with pytest.raises(ValueError):
        path_loss_db(environment("OL"), 0.5)


def test_received_power_examples():
    assert received_power_dbm(power_level(31), 90.95) == pytest.approx(-90.95)
    assert received_power_dbm(power_level(31), 0.0) == 0.0
    assert received_power_dbm(power_level(3), 90.95) == pytest.approx(-115.95)


def test_link_snr_examples():
    assert link_snr_db(-90.95, environment("OL")) == pytest.approx(2.05)
    assert link_snr_db(-93.0, environment("OL")) == 0.0
    assert link_snr_db(-90.95, environment("IL")) == pytest.approx(-2.95)


def test_ber_examples():
    assert ber(0.0) == 0.5
    assert ber(1.0) == pytest.approx(q_function(4.0)) and ber(1.0) == pytest.approx(3.17e-5, rel=1e-2)
    assert ber(1e4) == pytest.approx(0.0, abs=1e-300)
    with pytest.raises(ValueError):
        ber(-1.0)


def test_packet_examples():
    assert packet_success_prob(0.3, 0) == 1.0
    assert packet_success_prob(1.0, 128) == pytest.approx(0.968, abs=5e-4)
    assert packet_failure_prob(1.0, 128) == 1.0 - packet_success_prob(1.0, 128)


def test_handshake_examples():
    assert handshake_success_prob(1e3, 128, 1e3, 12) == 1.0
    assert handshake_success_prob(1.0, 128, 1.0, 12) == pytest.approx(0.965, abs=5e-4)
    assert handshake_success_prob(0.0, 128, 10.0, 12) < 1e-300


def test_retransmissions():
    assert expected_retransmissions(1.0) == 1.0
    assert expected_retransmissions(0.5) == 2.0
    with pytest.raises(UnreachableLinkError):
        expected_retransmissions(0.0)
    rng = np.random.default_rng(3)
    attempts = rng.geometric(0.8, size=100_000)
    assert attempts.mean() == pytest.approx(1.25, rel=0.01)


@given(st.floats(0.01, 5.0), st.integers(1, 200))
def test_packet_success_monotone(snr, length):
    p = packet_success_prob(snr, length)
    assert 0.0 <= p <= 1.0
    assert packet_success_prob(snr, length + 1) <= p
    assert packet_success_prob(snr * 1.5, length) >= p


def test_environment_ordering():
    link = LinkProfile(shadow_mode="deterministic")
    snr = {e: clean_snr_linear(environment(e), link) for e in ENVIRONMENTS}
    assert snr["UL"] > snr["OL"] > snr["ON"]
    assert min(snr, key=snr.get) == "ON"


def test_shadow_statistics():
    env = environment("UN")
    draws = shadow_sample_db(env, "stochastic", np.random.default_rng(5), size=100_000)
    se = env.shadow_sigma_db / math.sqrt(draws.size)
    assert abs(draws.mean()) < 3 * se
    assert draws.std(ddof=1) == pytest.approx(env.shadow_sigma_db, rel=0.02)


def test_shadow_modes():
    env = environment("OL")
    assert shadow_sample_db(env, "deterministic") == 0.0
    assert shadow_sample_db(env, "literal") == env.shadow_sigma_db
    with pytest.raises(ValueError):
        shadow_sample_db(env, "stochastic")
    with pytest.raises(ValueError):
        shadow_sample_db(env, "gaussian")


def test_unknown_tables():
    with pytest.raises(ValueError):
        environment("XX")
    with pytest.raises(ValueError):
        power_level(5)


def test_link_profile_packets():
    assert LinkProfile().packet_bytes == 128
    assert LinkProfile().packets_per_report == 1
    assert LinkProfile(payload_bytes=50).packets_per_report == 3


def test_overrides(tmp_path):
    path = tmp_path / "tables.ini"
    path.write_text("env.OL = 2.0, 1.0, -90\npower.31 = 60.0, 1.0\n")
    envs, levels = load_overrides(path)
    assert envs["OL"].path_loss_exponent == 2.0
    assert envs["ON"] == ENVIRONMENTS["ON"]
    assert levels[31].consumed_mw == 60.0
    bad = tmp_path / "bad.ini"
    bad.write_text("env.OL = 2.0\n")
    with pytest.raises(ValueError):
        load_overrides(bad)
