"""Round-level TDMA simulation of report delivery to the fusion center.

Each round every sensor gets one slot (plus retries inside its slot group) to
push its report to the FC.  The forward SNR is the clean link SNR with the
node's defense budget added to the signal and its attack budget added to the
noise; each attempt is a Bernoulli handshake (data packet, then ACK).
Delivered reports from trusted nodes are fused by a k-out-of-M vote.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import energy_model as em
from .detector import PUModel, effective_snr, roc_point
from .game_engine import GameState
from .link_model import (
    Environment,
    LinkProfile,
    PowerLevel,
    clean_snr_linear,
    packet_success_prob,
    power_level,
    shadow_sample_db,
)


@dataclass(frozen=True)
class Slot:
    node: int
    start_s: float
    duration_s: float

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass(frozen=True)
class Schedule:
    slots: tuple
    guard_s: float

    @property
    def round_length_s(self) -> float:
        if not self.slots:
            return 0.0
        return self.slots[-1].end_s - self.slots[0].start_s

    @property
    def busy_s(self) -> float:
        """Total slot time (excludes guards)."""
        return sum(s.duration_s for s in self.slots)

    def overlaps(self) -> bool:
        return any(b.start_s < a.end_s + self.guard_s - 1e-15
                   for a, b in zip(self.slots, self.slots[1:]))


@functools.lru_cache(maxsize=64)
def build_schedule(n_nodes: int, timing: em.TimingProfile) -> Schedule:
    """One slot per node in index order, separated by guard intervals."""
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    step = timing.slot_s + timing.guard_s
    slots = tuple(Slot(i, i * step, timing.slot_s) for i in range(n_nodes))
    return Schedule(slots, timing.guard_s)


def timing_for(link: LinkProfile, base: Optional[em.TimingProfile] = None) -> em.TimingProfile:
    base = base or em.TimingProfile()
    return em.TimingProfile(
        slot_s=base.slot_s, guard_s=base.guard_s, rate_bps=base.rate_bps,
        pkt_bytes=link.packet_bytes, ack_bytes=link.ack_bytes, acq_s=base.acq_s,
    )


@dataclass(frozen=True)
class SensingProfile:
    """Local detection and fusion settings.

    Attributes:
        pu_model: Primary-user model for local detection.
        pf_target: Local false-alarm rate each node operates at.
        samples: Matched-filter samples; scales link SNR into ``gamma'``.
        fusion_k: Votes needed to declare the PU present; ``None`` means a
            strict majority of the valid delivered reports.
        retry_cap: Maximum handshake attempts per packet.
    """

    pu_model: PUModel = PUModel.NONFLUCTUATING
    pf_target: float = 0.1
    samples: int = 100
    fusion_k: Optional[int] = None
    retry_cap: int = em.RETRY_CAP


@dataclass
class SlotOutcome:
    node: int
    attempts: int
    delivered: bool
    report_valid: bool
    energy_sender_J: float
    energy_receiver_J: float
    packets_delivered: int = 0
    energy: Optional[em.SlotEnergy] = field(default=None, repr=False)


@dataclass
class RoundMetrics:
    round: int
    correct_packets: int
    protected_fraction: float
    fc_decision: Optional[int]
    energy_delta_J: float
    true_hypothesis: int = 0
    outcomes: List[SlotOutcome] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "correct_packets": self.correct_packets,
            "protected_fraction": self.protected_fraction,
            "fc_decision": self.fc_decision,
            "energy_delta_J": self.energy_delta_J,
        }


def fuse(decisions, k: Optional[int] = None) -> Optional[int]:
    """k-out-of-M vote; ``None`` when there are no reports."""
    d = np.asarray(decisions, dtype=int)
    m = d.size
    if m == 0:
        return None
    need = m // 2 + 1 if k is None else int(k)
    return int(d.sum() >= need)


def report_validity(game: GameState) -> np.ndarray:
    """Reports the FC should trust this round: not malicious, not outweighed
    by the attack, and not hit by a hardware fault."""
    return game.protected_mask() & ~game.observed_negative


def _forward_snr(game: GameState, env: Environment, link: LinkProfile,
                 rng: np.random.Generator, nodes: np.ndarray):
    shadow = shadow_sample_db(env, link.shadow_mode, rng, size=len(nodes))
    clean = clean_snr_linear(env, link, shadow)
    k = link.budget_scale
    x = game.defense.amounts[nodes]
    y = game.attack.amounts[nodes]
    # Defense scales the node's signal power, attack the noise floor, so both
    # enter in units of the quantity they modify.
    fwd = effective_snr(clean, k * x * clean, k * y, 1.0, 1.0)
    return np.atleast_1d(fwd), np.atleast_1d(clean)


def _simulate(nodes: np.ndarray, game: GameState, env: Environment, link: LinkProfile,
              rng: np.random.Generator, timing: em.TimingProfile, sensing: SensingProfile,
              round_length_s: float, levels=None,
              constants: em.EnergyConstants = em.DEFAULT_CONSTANTS):
    """Vectorised slot simulation for ``nodes``.

    Returns:
        ``(batch, fwd_snr, delivered, valid, ok_packets, attempts)`` where
        ``batch`` is an :class:`energy_model.RoundEnergy`.
    """
    n = len(nodes)
    fwd, rev = _forward_snr(game, env, link, rng, nodes)
    p_data = np.atleast_1d(packet_success_prob(fwd, link.packet_bytes, link.process_gain))
    p_ack = np.atleast_1d(packet_success_prob(rev, link.ack_bytes, link.process_gain))
    n_pkt = link.packets_per_report
    cap = sensing.retry_cap
    u_data = rng.random((n, n_pkt, cap))
    u_ack = rng.random((n, n_pkt, cap))
    data_ok = u_data < p_data[:, None, None]
    hs_ok = data_ok & (u_ack < p_ack[:, None, None])
    success = hs_ok.any(axis=2)
    first = np.where(success, hs_ok.argmax(axis=2), cap - 1)
    tried = np.arange(cap)[None, None, :] <= first[:, :, None]
    attempts = tried.sum(axis=(1, 2))
    data_rx = (data_ok & tried).sum(axis=(1, 2))
    data_lost = attempts - data_rx
    ok_packets = success.sum(axis=1)
    delivered = ok_packets == n_pkt
    valid = report_validity(game)[nodes]

    lvl: PowerLevel = power_level(link.level, levels)
    ack_lvl: PowerLevel = power_level(link.ack_level, levels)
    e_dt = em.tx_energy(lvl, timing.pkt_tx_s)
    e_listen = constants.p_cr_w * (timing.slot_s - timing.pkt_tx_s)
    fc_ack_rx = constants.p_cr_w * (timing.slot_s - timing.ack_tx_s)
    fc_ack_tx = em.tx_energy(ack_lvl, timing.ack_tx_s)
    e_fhs = em.receiver_failed_energy(timing, constants.p_cr_w)
    e_dpp = constants.e_dpp_j

    air = attempts * timing.slot_s
    s_tx = attempts * e_dt
    s_rx = attempts * e_listen
    s_proc = ok_packets * e_dpp
    s_sleep = constants.p_off_w * np.maximum(0.0, round_length_s - air)
    f_tx = data_rx * fc_ack_tx
    f_rx = data_rx * fc_ack_rx + data_lost * e_fhs
    f_proc = ok_packets * e_dpp
    zeros = np.zeros(n)
    sender = np.column_stack([s_tx, s_rx, s_proc, s_sleep, zeros])
    fc = np.column_stack([f_tx, f_rx, f_proc, zeros, zeros])

    # Trusted, delivered reports only waste the attempts that did not
    # complete a handshake; everything else is wasted outright.
    good = valid & delivered
    bad_attempts = attempts - ok_packets
    acked_lost = data_rx - ok_packets
    waste_s = np.where(good, bad_attempts * (e_dt + e_listen), s_tx + s_rx + s_proc)
    waste_f = np.where(good, acked_lost * (fc_ack_rx + fc_ack_tx) + data_lost * e_fhs,
                       f_tx + f_rx + f_proc)
    batch = em.RoundEnergy(nodes=np.asarray(nodes, dtype=int), sender=sender, fc=fc,
                           wasted_sender=waste_s, wasted_fc=waste_f, air_s=air)
    return batch, fwd, delivered, valid, ok_packets, attempts


def _outcomes(batch: em.RoundEnergy, delivered, valid, ok_packets, attempts) -> List[SlotOutcome]:
    out = []
    for j, node in enumerate(batch.nodes):
        sender = dict(zip(em.BUCKETS, batch.sender[j].tolist()))
        fc = dict(zip(em.BUCKETS, batch.fc[j].tolist()))
        energy = em.SlotEnergy(int(node), sender, fc, float(batch.wasted_sender[j]),
                               float(batch.wasted_fc[j]), float(batch.air_s[j]))
        out.append(SlotOutcome(
            node=int(node), attempts=int(attempts[j]), delivered=bool(delivered[j]),
            report_valid=bool(valid[j]),
            energy_sender_J=float(batch.sender[j, :3].sum()),
            energy_receiver_J=float(batch.fc[j].sum()),
            packets_delivered=int(ok_packets[j]), energy=energy,
        ))
    return out


def simulate_slot(node: int, game: GameState, env: Environment, link: LinkProfile,
                  rng: np.random.Generator, timing: Optional[em.TimingProfile] = None,
                  sensing: Optional[SensingProfile] = None, levels=None) -> SlotOutcome:
    """Deliver one node's report (with retries) and book its energy."""
    timing = timing or timing_for(link)
    sensing = sensing or SensingProfile()
    rl = build_schedule(game.n_nodes, timing).round_length_s
    res = _simulate(np.array([node]), game, env, link, rng, timing, sensing, rl, levels)
    batch, _, delivered, valid, ok_packets, attempts = res
    return _outcomes(batch, delivered, valid, ok_packets, attempts)[0]


def simulate_round(game: GameState, env: Environment, link: LinkProfile,
                   ledger: em.EnergyLedger, rng: np.random.Generator,
                   timing: Optional[em.TimingProfile] = None,
                   sensing: Optional[SensingProfile] = None, levels=None,
                   constants: em.EnergyConstants = em.DEFAULT_CONSTANTS,
                   detail: bool = True):
    """Run every slot of a round, fuse the valid reports and update the ledger.

    Returns:
        ``(RoundMetrics, ledger)``.
    """
    timing = timing or timing_for(link)
    sensing = sensing or SensingProfile()
    schedule = build_schedule(game.n_nodes, timing)
    nodes = np.array([s.node for s in schedule.slots])
    batch, fwd, delivered, valid, ok_packets, attempts = _simulate(
        nodes, game, env, link, rng, timing, sensing, schedule.round_length_s, levels, constants)

    truth = int(rng.random() < 0.5)
    use = delivered & valid
    draws = rng.random(len(nodes))
    if truth:
        p = roc_point(np.full(len(nodes), sensing.pf_target), sensing.samples * fwd,
                      sensing.pu_model)
    else:
        p = np.full(len(nodes), sensing.pf_target)
    votes = (draws < p)[use]
    decision = fuse(votes, sensing.fusion_k)

    delta = em.account_round(ledger, batch, game.round, schedule.round_length_s, constants)
    correct = int(ok_packets[valid].sum())
    outcomes = _outcomes(batch, delivered, valid, ok_packets, attempts) if detail else []
    metrics = RoundMetrics(
        round=game.round,
        correct_packets=correct,
        protected_fraction=game.protected_fraction(),
        fc_decision=decision,
        energy_delta_J=delta,
        true_hypothesis=truth,
        outcomes=outcomes,
    )
    return metrics, ledger
