"""Energy accounting for sensor nodes and the fusion center.

Closed forms for the cost of one handshake (data packet + ACK inside a TDMA
slot), the expected cost including retransmissions, and a per-round ledger
that splits each node's spend into transmit / receive / processing / sleep /
acquisition buckets and tracks the share wasted on reports that were either
corrupted by the attacker or never delivered.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from .link_model import PowerLevel, UnreachableLinkError, expected_retransmissions

log = logging.getLogger(__name__)

P_CR_W = 69e-3        # receive-mode power
E_DPP_J = 12.66e-6    # per-packet processing
P_OFF_W = 3e-6        # sleep power
P_DA_W = 11.4e-3      # data-acquisition power
T_DA_S = 5e-3         # data-acquisition time
BATTERY_J = 15e3
RETRY_CAP = 10

BUCKETS = ("tx_J", "rx_J", "proc_J", "sleep_J", "acq_J")
LEDGER_COLUMNS = ("round", "node") + BUCKETS + ("battery_J", "non_beneficial_J")
FC_NODE = "FC"


@dataclass(frozen=True)
class TimingProfile:
    """TDMA slot timing (seconds) and radio rate."""

    slot_s: float = 4.78e-3
    guard_s: float = 100e-6
    rate_bps: float = 250e3
    pkt_bytes: int = 128
    ack_bytes: int = 12
    acq_s: float = T_DA_S

    def __post_init__(self) -> None:
        if self.pkt_tx_s > self.slot_s + 1e-15 or self.ack_tx_s > self.slot_s + 1e-15:
            raise ValueError("packet or ACK airtime exceeds the slot")

    @property
    def pkt_tx_s(self) -> float:
        return self.pkt_bytes * 8 / self.rate_bps

    @property
    def ack_tx_s(self) -> float:
        return self.ack_bytes * 8 / self.rate_bps


@dataclass(frozen=True)
class EnergyConstants:
    p_cr_w: float = P_CR_W
    e_dpp_j: float = E_DPP_J
    p_off_w: float = P_OFF_W
    p_da_w: float = P_DA_W
    battery_j: float = BATTERY_J

    @property
    def e_da_j(self) -> float:
        return self.p_da_w * T_DA_S


DEFAULT_CONSTANTS = EnergyConstants()


def tx_energy(level: PowerLevel, pkt_time_s: float) -> float:
    """Energy to transmit one packet, ``P_ct * T_pkt``."""
    if pkt_time_s < 0:
        raise ValueError("time must be >= 0")
    return level.consumed_mw * 1e-3 * pkt_time_s


def slot_tx_energy(level: PowerLevel, timing: TimingProfile,
                   p_cr_w: float = P_CR_W) -> float:
    """Sender energy per handshake attempt: transmit, then listen for the ACK
    for the rest of the slot."""
    return tx_energy(level, timing.pkt_tx_s) + p_cr_w * (timing.slot_s - timing.pkt_tx_s)


def sender_total_energy(level_data: PowerLevel, level_ack: PowerLevel, p_shs: float,
                        timing: TimingProfile, e_dpp_j: float = E_DPP_J,
                        p_cr_w: float = P_CR_W) -> float:
    """Expected sender energy until a successful handshake.

    ``level_ack`` is accepted for symmetry with the receiver side; the sender
    only listens during the ACK.
    """
    if p_shs <= 0:
        raise UnreachableLinkError("handshake success probability is zero")
    return e_dpp_j + expected_retransmissions(p_shs) * slot_tx_energy(level_data, timing, p_cr_w)


def receiver_handshake_energy(timing: TimingProfile, level_ack: PowerLevel,
                              p_cr_w: float = P_CR_W) -> float:
    """FC energy for a slot in which the data packet arrived and was ACKed."""
    return p_cr_w * (timing.slot_s - timing.ack_tx_s) + tx_energy(level_ack, timing.ack_tx_s)


def receiver_failed_energy(timing: TimingProfile, p_cr_w: float = P_CR_W) -> float:
    """FC energy for a slot in which no data packet arrived (listen only)."""
    return p_cr_w * timing.slot_s


def receiver_total_energy(p_s_data: float, p_f_ack: float, p_shs: float,
                          timing: TimingProfile, level_ack: PowerLevel,
                          e_dpp_j: float = E_DPP_J, p_cr_w: float = P_CR_W) -> float:
    """Expected FC energy until a successful handshake.

    Each attempt ends in one of three ways: full success, data received but
    ACK lost, or data lost.  The first two cost a full receive-and-ACK slot,
    the last a listen-only slot.
    """
    if abs(p_shs - p_s_data * (1.0 - p_f_ack)) > 1e-9:
        raise ValueError("inconsistent probabilities: p_shs != p_s_data * (1 - p_f_ack)")
    if p_s_data <= 0 or p_shs <= 0:
        raise UnreachableLinkError("data packets never arrive")
    e_shs = receiver_handshake_energy(timing, level_ack, p_cr_w)
    e_fhs = receiver_failed_energy(timing, p_cr_w)
    re = expected_retransmissions(p_shs)
    p_f_data = 1.0 - p_s_data
    return e_dpp_j + re * (p_shs * e_shs + p_s_data * p_f_ack * e_shs + p_f_data * e_fhs)


def simulate_receiver_energy(p_s_data: float, p_f_ack: float, timing: TimingProfile,
                             level_ack: PowerLevel, trials: int,
                             rng: np.random.Generator, e_dpp_j: float = E_DPP_J,
                             p_cr_w: float = P_CR_W) -> float:
    """Monte Carlo mean FC energy per delivered report (uncapped retries)."""
    e_shs = receiver_handshake_energy(timing, level_ack, p_cr_w)
    e_fhs = receiver_failed_energy(timing, p_cr_w)
    total = 0.0
    # Draw attempts in vectorised batches until every trial has succeeded.
    pending = trials
    while pending:
        data_ok = rng.random(pending) < p_s_data
        ack_ok = rng.random(pending) < (1.0 - p_f_ack)
        total += data_ok.sum() * e_shs + (~data_ok).sum() * e_fhs
        pending = int((~(data_ok & ack_ok)).sum())
    return total / trials + e_dpp_j


@dataclass
class SlotEnergy:
    """Energy booked for one node's slot group in one round.

    ``sender`` and ``fc`` map bucket names to joules; ``air_s`` is the time
    the node's slot group kept the channel busy.
    """

    node: int
    sender: Dict[str, float]
    fc: Dict[str, float]
    wasted_sender: float = 0.0
    wasted_fc: float = 0.0
    air_s: float = 0.0


@dataclass
class RoundEnergy:
    """Column form of a round's slot energies (one row per listed node).

    ``sender`` and ``fc`` have one column per entry of :data:`BUCKETS`.
    """

    nodes: np.ndarray
    sender: np.ndarray
    fc: np.ndarray
    wasted_sender: np.ndarray
    wasted_fc: np.ndarray
    air_s: np.ndarray

    @classmethod
    def from_slots(cls, slots: Iterable[SlotEnergy]) -> "RoundEnergy":
        slots = list(slots)
        k = len(BUCKETS)
        sender = np.zeros((len(slots), k))
        fc = np.zeros((len(slots), k))
        for row, sl in enumerate(slots):
            for b, j in sl.sender.items():
                sender[row, BUCKETS.index(b)] = j
            for b, j in sl.fc.items():
                fc[row, BUCKETS.index(b)] = j
        return cls(
            nodes=np.array([sl.node for sl in slots], dtype=int),
            sender=sender,
            fc=fc,
            wasted_sender=np.array([sl.wasted_sender for sl in slots], dtype=float),
            wasted_fc=np.array([sl.wasted_fc for sl in slots], dtype=float),
            air_s=np.array([sl.air_s for sl in slots], dtype=float),
        )


class EnergyLedger:
    """Cumulative energy buckets for every node plus the FC.

    Row ``i < n_nodes`` is sensor ``i``; the last row is the FC.  Columns of
    :attr:`buckets` follow :data:`BUCKETS`.  Batteries start at ``B`` and are
    debited by every booking; ``B - battery`` must equal the bucket sum.
    """

    def __init__(self, n_nodes: int, battery_j: float = BATTERY_J):
        self.n_nodes = int(n_nodes)
        self.battery_j = float(battery_j)
        rows = self.n_nodes + 1
        self.buckets = np.zeros((rows, len(BUCKETS)))
        self.battery = np.full(rows, self.battery_j)
        self.non_beneficial = np.zeros(rows)
        self.dead = np.zeros(rows, dtype=bool)
        self.history: List[tuple] = []

    @property
    def fc_row(self) -> int:
        return self.n_nodes

    def _book(self, rows, cols, joules) -> None:
        joules = np.asarray(joules, dtype=float)
        if np.any(joules < 0):
            raise ValueError("negative debit")
        np.add.at(self.buckets, (rows, cols), joules)
        np.subtract.at(self.battery, rows, joules)

    def debit(self, node, bucket: str, joules: float) -> None:
        """Book ``joules`` to one bucket of one account (``"FC"`` for the FC)."""
        if bucket not in BUCKETS:
            raise KeyError(f"unknown energy bucket {bucket!r}")
        row = self.fc_row if node == FC_NODE else int(node)
        self._book(np.array([row]), np.array([BUCKETS.index(bucket)]), [joules])

    def account(self, node) -> Dict[str, float]:
        row = self.fc_row if node == FC_NODE else int(node)
        out = dict(zip(BUCKETS, self.buckets[row].tolist()))
        out["battery_J"] = float(self.battery[row])
        out["non_beneficial_J"] = float(self.non_beneficial[row])
        return out

    @property
    def non_beneficial_J(self) -> float:
        return float(self.non_beneficial.sum())

    def spent(self) -> np.ndarray:
        return self.buckets.sum(axis=1)

    def total_spent(self) -> float:
        return float(self.buckets.sum())

    def snapshot(self, round_no: int) -> None:
        self.history.append(
            (int(round_no), self.buckets.copy(), self.battery.copy(), self.non_beneficial.copy())
        )

    def conservation_error(self) -> float:
        """Largest relative gap between ``B - battery`` and the bucket sum."""
        gap = np.abs((self.battery_j - self.battery) - self.spent())
        return float(gap.max() / self.battery_j)

    def history_conservation_error(self) -> float:
        worst = 0.0
        for _, buckets, battery, _ in self.history:
            gap = np.abs((self.battery_j - battery) - buckets.sum(axis=1))
            worst = max(worst, float(gap.max() / self.battery_j))
        return worst

    def rows(self):
        labels = list(range(self.n_nodes)) + [FC_NODE]
        for round_no, buckets, battery, nb in self.history:
            for r, label in enumerate(labels):
                yield (round_no, label, *buckets[r].tolist(), float(battery[r]), float(nb[r]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LEDGER_COLUMNS)
            for row in self.rows():
                w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])


def account_round(ledger: EnergyLedger, outcomes, round_no: int, round_length_s: float,
                  constants: EnergyConstants = DEFAULT_CONSTANTS) -> float:
    """Book one round of slot outcomes into the ledger.

    Args:
        ledger: Ledger to update in place.
        outcomes: A :class:`RoundEnergy` or an iterable of :class:`SlotEnergy`.
        round_no: Round label for the snapshot.
        round_length_s: TDMA round length.
        constants: Energy constants.

    Every node pays acquisition once per round.  Nodes without an outcome
    sleep through the whole round; the FC sleeps whenever no slot is active.

    Returns:
        Total energy booked this round (nodes plus FC), in joules.
    """
    batch = outcomes if isinstance(outcomes, RoundEnergy) else RoundEnergy.from_slots(outcomes)
    before = ledger.total_spent()
    k = len(BUCKETS)
    n = ledger.n_nodes
    node_delta = np.zeros((n, k))
    np.add.at(node_delta, batch.nodes, batch.sender)
    idle = np.ones(n, dtype=bool)
    idle[batch.nodes] = False
    node_delta[idle, BUCKETS.index("sleep_J")] += constants.p_off_w * round_length_s
    node_delta[:, BUCKETS.index("acq_J")] += constants.e_da_j
    fc_delta = batch.fc.sum(axis=0)
    fc_delta[BUCKETS.index("sleep_J")] += constants.p_off_w * max(
        0.0, round_length_s - float(batch.air_s.sum()))
    delta = np.vstack([node_delta, fc_delta])
    if np.any(delta < 0):
        raise ValueError("negative debit")
    ledger.buckets += delta
    ledger.battery -= delta.sum(axis=1)
    np.add.at(ledger.non_beneficial, batch.nodes, batch.wasted_sender)
    ledger.non_beneficial[ledger.fc_row] += float(batch.wasted_fc.sum())
    newly_dead = (ledger.battery <= 0) & ~ledger.dead
    ledger.dead |= newly_dead
    for row in np.flatnonzero(newly_dead):
        label = FC_NODE if row == ledger.fc_row else int(row)
        log.warning("round %d: battery of node %s exhausted", round_no, label)
    ledger.snapshot(round_no)
    return ledger.total_spent() - before
