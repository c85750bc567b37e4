"""Stackelberg attack/defense loop over per-node power budgets.

The fusion center (leader) holds a defense budget ``X`` spread over the sensor
reports as ``x_i``; the SSDF attacker (follower) holds ``Y`` spread as ``y_i``.
Each report's utility is ``U_i = x_i - y_i``.  A round classifies nodes from
their utilities, partitions the benevolent ones into a strong list (SL) and a
weak list (WL), lets the defender move ``xi`` from the strongest report to every
weak one, then lets the attacker pull budget off the strong reports to push the
weak ones below zero.

A node that is negative in two consecutive rounds is declared malicious and is
dropped from the game for good; a single negative round is treated as a
suspected hardware failure.

The module also carries the equilibrium test used to stop the loop and an
exhaustive best-response oracle for small instances.
"""

from __future__ import annotations

import copy
import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

TOL = 1e-12
MALICIOUS_STREAK = 2


class DimensionError(ValueError):
    """Raised when per-node vectors disagree in length."""


class OracleSizeError(ValueError):
    """Raised when a brute-force instance exceeds the enumeration bound."""


class NodeState(str, enum.Enum):
    BENEVOLENT = "Benevolent"
    SUSPECTED_HW_FAILURE = "SuspectedHwFailure"
    MALICIOUS = "Malicious"


@dataclass(frozen=True)
class NodeStatus:
    """Classification of one report.

    Attributes:
        state: Current label.
        negative_streak: Consecutive rounds observed with ``U_i < 0``.
        ever_negative: Whether the node was ever observed negative.
    """

    state: NodeState
    negative_streak: int
    ever_negative: bool


@dataclass
class BudgetVector:
    """Per-node budget amounts under a fixed total.

    Args:
        amounts: Nonnegative per-node budgets.
        total: Budget cap; ``sum(amounts) <= total``.
    """

    amounts: np.ndarray
    total: float

    def __post_init__(self) -> None:
        self.amounts = np.array(self.amounts, dtype=float)
        self.total = float(self.total)
        if self.amounts.ndim != 1:
            raise DimensionError("budget amounts must be one-dimensional")
        if np.any(self.amounts < -1e-12):
            raise ValueError("budget amounts must be nonnegative")
        if self.amounts.sum() > self.total + 1e-9:
            raise ValueError(
                f"budget sum {self.amounts.sum():.6g} exceeds total {self.total:.6g}"
            )

    def __len__(self) -> int:
        return len(self.amounts)

    def copy(self) -> "BudgetVector":
        return BudgetVector(self.amounts.copy(), self.total)

    def transfer(self, src: int, dst: int, amount: float) -> float:
        """Move up to ``amount`` from ``src`` to ``dst`` without overdrawing.

        Returns:
            The amount actually moved.
        """
        moved = min(amount, self.amounts[src])
        if moved <= 0.0:
            return 0.0
        self.amounts[src] -= moved
        self.amounts[dst] += moved
        return float(moved)

    @classmethod
    def equal(cls, n: int, total: float) -> "BudgetVector":
        return cls(np.full(n, total / n), total)


@dataclass(frozen=True)
class Transfer:
    """One budget move recorded in a round log."""

    player: str  # "defender" or "attacker"
    src: int
    dst: int
    amount: float
    partial: bool = False
    kind: str = "redistribute"

    def to_dict(self) -> dict:
        return {
            "player": self.player,
            "src": self.src,
            "dst": self.dst,
            "amount": self.amount,
            "partial": self.partial,
            "kind": self.kind,
        }


@dataclass
class RoundRecord:
    """What happened in one round of the game."""

    round: int
    utilities: List[float]
    statuses: List[str]
    transfers: List[Transfer]
    protected_fraction: float
    skipped_defense: int = 0
    truncated_attack: int = 0

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "utilities": self.utilities,
            "statuses": self.statuses,
            "transfers": [t.to_dict() for t in self.transfers],
            "protected_fraction": self.protected_fraction,
        }


@dataclass
class GameConfig:
    """Parameters of one game run.

    Attributes:
        n_nodes: Number of sensor reports.
        defense_total: Defense budget ``X``.
        attack_total: Attack budget ``Y``.
        xi: Defender increment; ``None`` means ``0.4 * X / N``.
        alpha: Attacker increment; ``None`` means ``xi``.
        max_rounds: Round cap for :func:`run_to_equilibrium`.
        hw_failure_rate: Fraction of nodes given one spontaneous negative round.
        seed: Seed for the opening attack and hardware-failure draws.
        strategy: ``"proposed"`` (adaptive defense), ``"equal"`` (fixed X/N)
            or ``"random"`` (Dirichlet redraw every round).
        initial_attack: ``"dirichlet"`` (seeded random split of Y) or
            ``"uniform"`` (Y/N each).
        follow_up_patience: Quiet rounds before the attacker re-optimizes
            against the whole board.
        defense: Explicit opening defense vector (overrides the equal split).
        attack: Explicit opening attack vector (overrides ``initial_attack``).
    """

    n_nodes: int = 50
    defense_total: float = 20.0
    attack_total: float = 8.0
    xi: Optional[float] = None
    alpha: Optional[float] = None
    max_rounds: int = 20
    hw_failure_rate: float = 0.05
    seed: int = 0
    strategy: str = "proposed"
    initial_attack: str = "dirichlet"
    follow_up_patience: int = 3
    defense: Optional[Sequence[float]] = None
    attack: Optional[Sequence[float]] = None

    def resolved_xi(self) -> float:
        if self.xi is not None:
            return float(self.xi)
        return 0.4 * self.defense_total / self.n_nodes

    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        return self.resolved_xi()


@dataclass
class GameState:
    """Mutable state of one game run.

    Per-node status bookkeeping is kept in arrays; :attr:`statuses` builds the
    :class:`NodeStatus` view on demand.
    """

    round: int
    defense: BudgetVector
    attack: BudgetVector
    xi: float
    alpha: float
    utilities: np.ndarray = None
    strong_list: List[int] = field(default_factory=list)
    weak_list: List[int] = field(default_factory=list)
    negative_streak: np.ndarray = None
    ever_negative: np.ndarray = None
    malicious: np.ndarray = None
    observed_negative: np.ndarray = None
    pressure: np.ndarray = None
    hw_schedule: dict = field(default_factory=dict)
    strategy: str = "proposed"
    follow_up_patience: int = 3
    converged: bool = False
    quiet_rounds: int = 0
    last_signature: Optional[Tuple[bytes, bytes]] = None
    rng: Optional[np.random.Generator] = None

    def __post_init__(self) -> None:
        n = len(self.defense)
        if len(self.attack) != n:
            raise DimensionError(
                f"defense has {n} nodes but attack has {len(self.attack)}"
            )
        if self.utilities is None:
            self.utilities = compute_utilities(self.defense, self.attack)
        for name, dtype in (
            ("negative_streak", int),
            ("ever_negative", bool),
            ("malicious", bool),
            ("observed_negative", bool),
            ("pressure", int),
        ):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n, dtype=dtype))

    @property
    def n_nodes(self) -> int:
        return len(self.defense)

    @property
    def statuses(self) -> List[NodeStatus]:
        out = []
        for i in range(self.n_nodes):
            if self.malicious[i]:
                st = NodeState.MALICIOUS
            elif self.observed_negative[i]:
                st = NodeState.SUSPECTED_HW_FAILURE
            else:
                st = NodeState.BENEVOLENT
            out.append(NodeStatus(st, int(self.negative_streak[i]), bool(self.ever_negative[i])))
        return out

    def live_utilities(self) -> np.ndarray:
        return self.defense.amounts - self.attack.amounts

    def protected_mask(self) -> np.ndarray:
        """Reports that are still trusted and not outweighed by the attack."""
        return (~self.malicious) & (self.live_utilities() >= -TOL)

    def protected_fraction(self) -> float:
        return float(self.protected_mask().mean())

    def copy(self) -> "GameState":
        return copy.deepcopy(self)


def substream(seed: int, key: int) -> np.random.Generator:
    """Independent generator for purpose ``key`` under a run seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(key),)))


STREAM_GAME = 0
STREAM_RANDOM_DEFENSE = 1
STREAM_CHANNEL = 2


def init_state(config: GameConfig) -> GameState:
    """Build the opening state for ``config``.

    The defense starts as an equal split.  The attack opens with a seeded
    Dirichlet(1) split of ``Y`` unless ``attack`` or ``initial_attack`` say
    otherwise; a handful of nodes are scheduled for one spontaneous
    hardware-failure round.
    """
    n = int(config.n_nodes)
    if n < 1:
        raise ValueError("n_nodes must be >= 1")
    if config.defense_total <= 0:
        raise ValueError("defense_total must be > 0")
    if config.attack_total < 0:
        raise ValueError("attack_total must be >= 0")
    if config.strategy not in ("proposed", "equal", "random"):
        raise ValueError(f"unknown strategy {config.strategy!r}")
    rng = substream(config.seed, STREAM_GAME)

    if config.defense is not None:
        defense = BudgetVector(config.defense, config.defense_total)
    else:
        defense = BudgetVector.equal(n, config.defense_total)

    # Both draws always happen so the hardware schedule does not depend on
    # how the opening attack was chosen.
    dirichlet = rng.dirichlet(np.ones(n)) * config.attack_total
    if config.attack is not None:
        attack = BudgetVector(config.attack, config.attack_total)
    elif config.initial_attack == "uniform":
        attack = BudgetVector.equal(n, config.attack_total)
    elif config.initial_attack == "dirichlet":
        attack = BudgetVector(dirichlet, config.attack_total)
    else:
        raise ValueError(f"unknown initial_attack {config.initial_attack!r}")

    hw_nodes = np.nonzero(rng.random(n) < config.hw_failure_rate)[0]
    horizon = max(int(config.max_rounds), 1)
    hw_schedule = {int(i): int(rng.integers(1, horizon + 1)) for i in hw_nodes}

    state = GameState(
        round=0,
        defense=defense,
        attack=attack,
        xi=config.resolved_xi(),
        alpha=config.resolved_alpha(),
        hw_schedule=hw_schedule,
        strategy=config.strategy,
        follow_up_patience=int(config.follow_up_patience),
    )
    if config.strategy == "random":
        state.rng = substream(config.seed, STREAM_RANDOM_DEFENSE)
    return state


def compute_utilities(defense: BudgetVector, attack: BudgetVector) -> np.ndarray:
    """Per-node utility ``x_i - y_i``."""
    x = defense.amounts if isinstance(defense, BudgetVector) else np.asarray(defense, float)
    y = attack.amounts if isinstance(attack, BudgetVector) else np.asarray(attack, float)
    if x.shape != y.shape:
        raise DimensionError(f"node count mismatch: {x.shape[0]} vs {y.shape[0]}")
    return x - y


def classify_nodes(state: GameState, utilities: np.ndarray) -> List[NodeStatus]:
    """Update statuses from this round's observed utilities.

    A negative observation bumps the node's streak; two consecutive negative
    rounds make it malicious (absorbing).  A scheduled hardware fault shows up
    as one negative observation without touching the budgets.
    """
    _classify(state, utilities)
    return state.statuses


def _classify(state: GameState, utilities: np.ndarray) -> None:
    obs = np.array(utilities, dtype=float)
    for node, when in state.hw_schedule.items():
        if when == state.round:
            obs[node] = -abs(obs[node]) - 1e-3
    neg = (obs < -TOL) & ~state.malicious
    state.negative_streak = np.where(
        neg, state.negative_streak + 1,
        np.where(state.malicious, state.negative_streak, 0),
    )
    state.ever_negative |= neg
    state.malicious |= state.negative_streak >= MALICIOUS_STREAK
    state.observed_negative = neg & ~state.malicious


def partition_lists(state: GameState) -> Tuple[List[int], List[int]]:
    """Split benevolent nodes into strong (``U > xi``) and weak lists.

    SL is ordered strongest first, WL weakest first; ties go to the lower
    node index.

    Raises:
        RuntimeError: when no benevolent node is left (total compromise).
    """
    U = state.utilities
    benevolent = ~state.malicious & ~state.observed_negative
    if not benevolent.any():
        raise RuntimeError("no benevolent reports left: total compromise")
    idx = np.arange(len(U))
    strong = benevolent & (U > state.xi)
    weak = benevolent & ~strong
    sl = sorted(idx[strong].tolist(), key=lambda i: (-U[i], i))
    wl = sorted(idx[weak].tolist(), key=lambda i: (U[i], i))
    state.strong_list, state.weak_list = sl, wl
    return sl, wl


def defender_redistribute(state: GameState) -> Tuple[BudgetVector, List[Transfer]]:
    """Move ``xi`` from the current strongest report to each weak report.

    The donor is re-chosen before every transfer (highest live utility among
    strong nodes that can give a whole ``xi`` and stay nonnegative).  When no
    donor qualifies the weak node is skipped and the skip is logged as a
    partial transfer of zero.
    """
    x = state.defense.amounts
    y = state.attack.amounts
    xi = state.xi
    log: List[Transfer] = []
    if xi <= 0:
        return state.defense, log
    for w in state.weak_list:
        best = None
        for d in state.strong_list:
            if x[d] < xi - TOL or x[d] - y[d] - xi < -TOL:
                continue
            u = x[d] - y[d]
            if best is None or u > best[0]:
                best = (u, d)
        if best is None:
            log.append(Transfer("defender", -1, w, 0.0, partial=True))
            continue
        d = best[1]
        state.defense.transfer(d, w, xi)
        log.append(Transfer("defender", d, w, xi))
    return state.defense, log


def attacker_redistribute(state: GameState) -> Tuple[BudgetVector, List[Transfer]]:
    """Push each weak report below zero with budget taken from strong ones.

    The increment for weak node ``r`` is ``U_r + k * alpha`` where ``k`` counts
    consecutive rounds ``r`` has sat in the weak list; donors are drained in
    strong-list order.  When the strong list runs dry the last move is
    truncated and flagged.
    """
    y = state.attack.amounts
    U = state.utilities
    log: List[Transfer] = []
    in_weak = np.zeros(state.n_nodes, dtype=bool)
    in_weak[state.weak_list] = True
    state.pressure = np.where(in_weak, state.pressure + 1, 0)
    for r in state.weak_list:
        need = U[r] + state.pressure[r] * state.alpha
        for d in state.strong_list:
            if need <= TOL:
                break
            if y[d] <= 0:
                continue
            moved = state.attack.transfer(d, r, need)
            need -= moved
            log.append(Transfer("attacker", d, r, moved))
        if need > TOL and log and log[-1].dst == r:
            last = log[-1]
            log[-1] = Transfer(last.player, last.src, last.dst, last.amount, partial=True)
        elif need > TOL:
            log.append(Transfer("attacker", -1, r, 0.0, partial=True))
    return state.attack, log


def attacker_follow_up(state: GameState) -> List[Transfer]:
    """Best-response sweep: kill every report the pooled budget can reach.

    Targets the cheapest protected report first and pools attack budget from
    the other protected reports (largest holdings first).  Repeats until no
    protected report can be pushed to ``-alpha``.
    """
    x = state.defense.amounts
    y = state.attack.amounts
    log: List[Transfer] = []
    while True:
        U = x - y
        prot = ~state.malicious & (U >= -TOL)
        targets = sorted(np.nonzero(prot)[0].tolist(), key=lambda i: (U[i], i))
        donors_all = sorted(np.nonzero(prot & (y > TOL))[0].tolist(), key=lambda i: (-y[i], i))
        pool = y[donors_all].sum() if donors_all else 0.0
        hit = False
        for r in targets:
            need = U[r] + state.alpha
            avail = pool - (y[r] if y[r] > TOL else 0.0)
            if avail + TOL < need:
                continue
            for d in donors_all:
                if d == r:
                    continue
                moved = state.attack.transfer(d, r, need)
                need -= moved
                log.append(Transfer("attacker", d, r, moved, kind="follow_up"))
                if need <= TOL:
                    break
            hit = True
            break
        if not hit:
            return log


def status_labels(state: GameState) -> List[str]:
    return np.where(
        state.malicious, NodeState.MALICIOUS.value,
        np.where(state.observed_negative, NodeState.SUSPECTED_HW_FAILURE.value,
                 NodeState.BENEVOLENT.value),
    ).tolist()


def _signature(state: GameState) -> Tuple[bytes, bytes]:
    neg = state.live_utilities() < -TOL
    return state.malicious.tobytes(), neg.tobytes()


def step_round(state: GameState) -> Tuple[GameState, RoundRecord]:
    """Run one round of the game in place and return the state and its log.

    At a Nash equilibrium the budgets are left untouched (fixed point); only
    the round counter and classification advance.
    """
    at_equilibrium = state.round >= 1 and is_nash_equilibrium(state)
    state.round += 1
    if state.strategy == "random" and not at_equilibrium:
        n = state.n_nodes
        state.defense.amounts = state.rng.dirichlet(np.ones(n)) * state.defense.total
    state.utilities = compute_utilities(state.defense, state.attack)
    _classify(state, state.utilities)
    transfers: List[Transfer] = []
    if not at_equilibrium and (~state.malicious & ~state.observed_negative).any():
        partition_lists(state)
        if state.strategy == "proposed":
            _, t = defender_redistribute(state)
            transfers += t
        _, t = attacker_redistribute(state)
        transfers += t
        sig = _signature(state)
        state.quiet_rounds = state.quiet_rounds + 1 if sig == state.last_signature else 0
        state.last_signature = sig
        if state.quiet_rounds >= state.follow_up_patience:
            transfers += attacker_follow_up(state)
            state.quiet_rounds = 0
    else:
        state.strong_list, state.weak_list = [], []
    live = state.live_utilities()
    record = RoundRecord(
        round=state.round,
        utilities=live.tolist(),
        statuses=status_labels(state),
        transfers=transfers,
        protected_fraction=state.protected_fraction(),
        skipped_defense=sum(1 for t in transfers if t.player == "defender" and t.partial),
        truncated_attack=sum(1 for t in transfers if t.player == "attacker" and t.partial),
    )
    state.utilities = live
    return state, record


def run_to_equilibrium(config: GameConfig) -> Tuple[GameState, List[RoundRecord]]:
    """Iterate :func:`step_round` until equilibrium or ``max_rounds``.

    ``state.converged`` reports whether equilibrium was reached.
    """
    if config.max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    state = init_state(config)
    records = []
    for _ in range(config.max_rounds):
        state, rec = step_round(state)
        records.append(rec)
        if is_nash_equilibrium(state):
            state.converged = True
            break
    return state, records


def is_nash_equilibrium(state: GameState) -> bool:
    """Check for a profitable unilateral deviation among active nodes.

    Active nodes are those not yet malicious.  A node with ``U < 0`` is a
    pending status change, so the state is not yet stable.  Otherwise every
    active node is protected and no defender move can add one; the attacker
    has an improving move iff the budget held on the other protected reports
    can lift some protected report ``r`` to ``-alpha`` (a chain transfer of
    ``U_r + alpha``).
    """
    x = state.defense.amounts
    y = state.attack.amounts
    U = x - y
    active = ~state.malicious
    if (active & (U < -TOL)).any():
        return False
    if not active.any():
        return True
    prot = active & (U >= -TOL)
    pool = y[prot].sum()
    need = U[prot] + state.alpha
    avail = pool - y[prot]
    if state.alpha <= 0:
        # (U_r + alpha)-sized moves can then only bring a report to zero.
        return True
    return bool(np.all(avail < need - 1e-9))


def _compositions(units: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``units``."""
    if parts == 1:
        return np.array([[units]], dtype=int)
    rows = []
    for bars in itertools.combinations(range(units + parts - 1), parts - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(units + parts - 1 - prev - 1)
        rows.append(row)
    return np.array(rows, dtype=int)


def brute_force_best_response(
    defense: BudgetVector, attack_total: float, granularity: float
) -> BudgetVector:
    """Exhaustive attacker best response on a discrete budget grid.

    Enumerates every split of ``attack_total`` into ``granularity`` units and
    returns the one that drives the most reports below zero, breaking ties
    by the most total negative utility and then by enumeration order.

    Raises:
        OracleSizeError: more than 8 nodes or more than 20 units.
    """
    x = defense.amounts if isinstance(defense, BudgetVector) else np.asarray(defense, float)
    n = len(x)
    if granularity <= 0:
        raise ValueError("granularity must be positive")
    units = int(math.floor(attack_total / granularity + 1e-9))
    if n > 8 or units > 20:
        raise OracleSizeError(
            f"instance too large for enumeration (nodes={n}, units={units})"
        )
    if n == 0:
        return BudgetVector(np.zeros(0), attack_total)
    if units == 0:
        return BudgetVector(np.zeros(n), attack_total)
    comps = _compositions(units, n) * granularity
    U = x[None, :] - comps
    kills = (U < -TOL).sum(axis=1)
    damage = np.minimum(U, 0.0).sum(axis=1)
    best = np.lexsort((damage, -kills))[0]
    return BudgetVector(comps[best], attack_total)


def count_kills(defense: BudgetVector, attack: BudgetVector) -> int:
    """Number of reports with negative utility."""
    return int((compute_utilities(defense, attack) < -TOL).sum())
