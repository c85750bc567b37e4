"""Sensor-to-FC link budget for Tmote-Sky class radios.

Log-distance path loss with optional log-normal shadowing, received power and
SNR against each environment's noise floor, uncoded O-QPSK bit error rate with
DSSS process gain, and the packet / handshake success probabilities that drive
retransmissions.

The six propagation environments and the eight CC2420 power levels ship as
built-in tables; :func:`load_overrides` replaces rows from a small text file.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .detector import db_to_linear, q_function

D0_M = 1.0
PL0_DB = 40.2
DISTANCE_M = 125.0
PROCESS_GAIN = 8.0  # 2 Mchip/s over 250 kb/s


class UnreachableLinkError(ArithmeticError):
    """Handshake success probability is zero; retries never terminate."""


@dataclass(frozen=True)
class Environment:
    """Propagation parameters for one deployment scenario."""

    name: str
    path_loss_exponent: float
    shadow_sigma_db: float
    noise_floor_dbm: float


@dataclass(frozen=True)
class PowerLevel:
    """CC2420 transmit power setting."""

    level: int
    consumed_mw: float
    antenna_dbm: float


# name -> (n, sigma dB, P_n dBm); outdoor/urban/indoor, line-of-sight/non-LOS
ENVIRONMENTS: Dict[str, Environment] = {
    row[0]: Environment(*row)
    for row in [
        ("OL", 2.42, 3.12, -93.0),
        ("ON", 3.51, 2.95, -93.0),
        ("UL", 1.45, 2.45, -92.0),
        ("UN", 3.15, 3.19, -92.0),
        ("IL", 1.64, 3.29, -88.0),
        ("IN", 2.38, 2.25, -88.0),
    ]
}

# level m -> (P_ct mW, P_t dBm)
POWER_LEVELS: Dict[int, PowerLevel] = {
    row[0]: PowerLevel(*row)
    for row in [
        (3, 25.5, -25.0),
        (7, 29.7, -15.0),
        (11, 33.6, -10.0),
        (15, 37.5, -7.0),
        (19, 41.7, -5.0),
        (23, 45.6, -3.0),
        (27, 49.5, -1.0),
        (31, 52.2, 0.0),
    ]
}

SHADOW_MODES = ("stochastic", "deterministic", "literal")


def environment(name: str, table: Optional[Dict[str, Environment]] = None) -> Environment:
    table = ENVIRONMENTS if table is None else table
    try:
        return table[str(name).upper()]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(table)}") from None


def power_level(level: int, table: Optional[Dict[int, PowerLevel]] = None) -> PowerLevel:
    table = POWER_LEVELS if table is None else table
    try:
        return table[int(level)]
    except KeyError:
        raise ValueError(f"unknown power level {level!r}; choose from {sorted(table)}") from None


def load_overrides(path) -> Tuple[Dict[str, Environment], Dict[int, PowerLevel]]:
    """Read replacement table rows from a key-value text file.

    Recognised keys (one per line, ``key = value``)::

        env.OL = 2.42, 3.12, -93      # n, sigma_db, noise_floor_dbm
        power.31 = 52.2, 0            # consumed_mw, antenna_dbm

    Returns:
        Copies of the environment and power tables with the rows replaced.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    text = Path(path).read_text()
    parser.read_string("[overrides]\n" + text)
    envs = dict(ENVIRONMENTS)
    levels = dict(POWER_LEVELS)
    for key, raw in parser.items("overrides"):
        vals = [float(v) for v in raw.replace(",", " ").split()]
        kind, _, name = key.partition(".")
        if kind == "env" and len(vals) == 3:
            envs[name.upper()] = Environment(name.upper(), *vals)
        elif kind == "power" and len(vals) == 2:
            levels[int(name)] = PowerLevel(int(name), *vals)
        else:
            raise ValueError(f"{path}: cannot interpret override {key!r} = {raw!r}")
    return envs, levels


def shadow_sample_db(env: Environment, mode: str = "deterministic",
                     rng: Optional[np.random.Generator] = None, size=None):
    """Shadowing term for one or more links.

    ``stochastic`` draws N(0, sigma^2) dB, ``deterministic`` returns 0 and
    ``literal`` adds the full sigma as a constant margin.
    """
    if mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic shadowing needs a random generator")
        return rng.normal(0.0, env.shadow_sigma_db, size=size)
    if mode == "deterministic":
        return 0.0 if size is None else np.zeros(size)
    if mode == "literal":
        return env.shadow_sigma_db if size is None else np.full(size, env.shadow_sigma_db)
    raise ValueError(f"unknown shadow mode {mode!r}; choose from {SHADOW_MODES}")


def path_loss_db(env: Environment, distance_m, d0_m: float = D0_M,
                 pl0_db: float = PL0_DB, shadow_sample_db=0.0):
    """``PL0 + 10 n log10(d / d0) + shadow``."""
    d = np.asarray(distance_m, dtype=float)
    if d0_m <= 0 or np.any(d < d0_m):
        raise ValueError("distance must be >= d0 > 0")
    pl = pl0_db + 10.0 * env.path_loss_exponent * np.log10(d / d0_m) + shadow_sample_db
    return float(pl) if np.ndim(pl) == 0 else pl


def received_power_dbm(level: PowerLevel, path_loss):
    return level.antenna_dbm - path_loss


def link_snr_db(received_dbm, env: Environment):
    return received_dbm - env.noise_floor_dbm


def ber(snr_linear, process_gain: float = PROCESS_GAIN):
    """Bit error rate ``Q(sqrt(2 gamma Pr_G))``."""
    g = np.asarray(snr_linear, dtype=float)
    if np.any(g < 0) or process_gain <= 0:
        raise ValueError("snr must be >= 0 and process gain > 0")
    return q_function(np.sqrt(2.0 * g * process_gain))


def packet_success_prob(snr_linear, length_bytes: int, process_gain: float = PROCESS_GAIN):
    """All ``8 L`` bits of an uncoded packet arrive intact."""
    if length_bytes < 0:
        raise ValueError("length must be >= 0")
    p = (1.0 - ber(snr_linear, process_gain)) ** (8 * int(length_bytes))
    return float(p) if np.ndim(p) == 0 else p


def packet_failure_prob(snr_linear, length_bytes: int, process_gain: float = PROCESS_GAIN):
    return 1.0 - packet_success_prob(snr_linear, length_bytes, process_gain)


def handshake_success_prob(snr_fwd, data_bytes: int, snr_rev, ack_bytes: int,
                           process_gain: float = PROCESS_GAIN):
    """Data packet and ACK both delivered."""
    return (packet_success_prob(snr_fwd, data_bytes, process_gain)
            * packet_success_prob(snr_rev, ack_bytes, process_gain))


def expected_retransmissions(p_shs: float) -> float:
    """Expected attempts until the first successful handshake."""
    if not 0.0 <= p_shs <= 1.0:
        raise ValueError("p_shs must be a probability")
    if p_shs == 0.0:
        raise UnreachableLinkError("handshake success probability is zero")
    return 1.0 / p_shs


@dataclass(frozen=True)
class LinkProfile:
    """Radio and geometry settings shared by every node in a run.

    Attributes:
        level: Sensor transmit power level ``m``.
        ack_level: FC power level ``u`` used for ACKs.
        payload_bytes: Payload per packet ``D``.
        header_bytes: Per-packet header ``H``.
        report_bytes: Report size per node per round.
        ack_bytes: ACK length.
        process_gain: DSSS process gain.
        distance_m: Sensor-to-FC distance.
        d0_m: Reference distance.
        pl0_db: Path loss at ``d0``.
        shadow_mode: ``stochastic``, ``deterministic`` or ``literal``.
        budget_scale: Budget-unit to power mapping for the SNR coupling.
    """

    level: int = 31
    ack_level: int = 31
    payload_bytes: int = 120
    header_bytes: int = 8
    report_bytes: int = 120
    ack_bytes: int = 12
    process_gain: float = PROCESS_GAIN
    distance_m: float = DISTANCE_M
    d0_m: float = D0_M
    pl0_db: float = PL0_DB
    shadow_mode: str = "stochastic"
    budget_scale: float = 1.0

    @property
    def packet_bytes(self) -> int:
        return self.payload_bytes + self.header_bytes

    @property
    def packets_per_report(self) -> int:
        return max(1, math.ceil(self.report_bytes / self.payload_bytes))

    def with_(self, **kw) -> "LinkProfile":
        return replace(self, **kw)


def clean_snr_linear(env: Environment, link: LinkProfile, shadow_db=0.0,
                     levels: Optional[Dict[int, PowerLevel]] = None):
    """Linear SNR of the sensor-to-FC link before any attack or defense."""
    pl = path_loss_db(env, link.distance_m, link.d0_m, link.pl0_db, shadow_db)
    pr = received_power_dbm(power_level(link.level, levels), pl)
    return db_to_linear(link_snr_db(pr, env))
