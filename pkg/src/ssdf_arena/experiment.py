"""Scenario orchestration: config, single runs, sweeps, and table output.

A scenario couples the budget game with the TDMA delivery simulation and the
energy ledger for a fixed number of rounds.  Sweeps run independent scenarios
(optionally in worker processes) and keep input order.  Everything written to
disk is a plain CSV or JSON-lines table plus a ``meta.json`` provenance file;
there is no plotting.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import __version__
from . import energy_model as em
from .detector import PUModel, db_to_linear, roc_point
from .game_engine import (
    STREAM_CHANNEL,
    GameConfig,
    RoundRecord,
    init_state,
    is_nash_equilibrium,
    step_round,
    substream,
)
from .link_model import (
    ENVIRONMENTS,
    SHADOW_MODES,
    LinkProfile,
    clean_snr_linear,
    environment,
    load_overrides,
    power_level,
)
from .tdma_sim import RoundMetrics, SensingProfile, simulate_round, timing_for

STRATEGIES = ("proposed", "random", "equal")
THREADS_ENV = "SSDF_ARENA_THREADS"
REFERENCE_ATTACK_BUDGETS = (8.0, 10.0, 13.0, 17.0)


class ConfigError(ValueError):
    """Invalid scenario configuration (CLI exit code 2)."""


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one scenario run."""

    n_nodes: int = 50
    defense_total: float = 20.0
    attack_total: float = 8.0
    strategy: str = "proposed"
    environment: str = "UL"
    pu_model: str = "nonfluct"
    rounds: int = 20
    seed: int = 0
    xi: Optional[float] = None
    alpha: Optional[float] = None
    hw_failure_rate: float = 0.05
    follow_up_patience: int = 3
    initial_attack: str = "dirichlet"
    power_level: int = 31
    ack_level: int = 31
    d0: float = 1.0
    pl0: float = 40.2
    distance_m: float = 125.0
    shadow_mode: str = "stochastic"
    payload_bytes: int = 120
    budget_scale: float = 1.0
    pf_target: float = 0.1
    samples: int = 100
    fusion_k: Optional[int] = None
    retry_cap: int = em.RETRY_CAP
    overrides: Optional[str] = None

    def validate(self) -> "ScenarioConfig":
        errors = []
        if self.n_nodes < 1:
            errors.append("n_nodes: must be >= 1")
        if self.defense_total <= 0:
            errors.append("defense_total: must be > 0")
        if self.attack_total < 0:
            errors.append("attack_total: must be >= 0")
        if self.rounds < 1:
            errors.append("rounds: must be >= 1")
        if self.strategy not in STRATEGIES:
            errors.append(f"strategy: must be one of {STRATEGIES}")
        envs = ENVIRONMENTS if self.overrides is None else None
        if envs is not None and self.environment.upper() not in envs:
            errors.append(f"environment: must be one of {sorted(envs)}")
        try:
            PUModel.parse(self.pu_model)
        except ValueError as exc:
            errors.append(f"pu_model: {exc}")
        if self.shadow_mode not in SHADOW_MODES:
            errors.append(f"shadow_mode: must be one of {SHADOW_MODES}")
        if self.xi is not None and self.xi < 0:
            errors.append("xi: must be >= 0")
        if self.alpha is not None and self.alpha < 0:
            errors.append("alpha: must be >= 0")
        if not 0 <= self.hw_failure_rate <= 1:
            errors.append("hw_failure_rate: must be in [0, 1]")
        if not 0 < self.pf_target < 1:
            errors.append("pf_target: must be in (0, 1)")
        if self.payload_bytes < 1:
            errors.append("payload_bytes: must be >= 1")
        if self.retry_cap < 1:
            errors.append("retry_cap: must be >= 1")
        if self.initial_attack not in ("dirichlet", "uniform"):
            errors.append("initial_attack: must be dirichlet or uniform")
        if self.overrides is None:
            for name in ("power_level", "ack_level"):
                try:
                    power_level(getattr(self, name))
                except ValueError as exc:
                    errors.append(f"{name}: {exc}")
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    def game_config(self) -> GameConfig:
        return GameConfig(
            n_nodes=self.n_nodes,
            defense_total=self.defense_total,
            attack_total=self.attack_total,
            xi=self.xi,
            alpha=self.alpha,
            max_rounds=self.rounds,
            hw_failure_rate=self.hw_failure_rate,
            seed=self.seed,
            strategy=self.strategy,
            initial_attack=self.initial_attack,
            follow_up_patience=self.follow_up_patience,
        )

    def link_profile(self) -> LinkProfile:
        return LinkProfile(
            level=self.power_level,
            ack_level=self.ack_level,
            payload_bytes=self.payload_bytes,
            distance_m=self.distance_m,
            d0_m=self.d0,
            pl0_db=self.pl0,
            shadow_mode=self.shadow_mode,
            budget_scale=self.budget_scale,
        )

    def sensing_profile(self) -> SensingProfile:
        return SensingProfile(
            pu_model=PUModel.parse(self.pu_model),
            pf_target=self.pf_target,
            samples=self.samples,
            fusion_k=self.fusion_k,
            retry_cap=self.retry_cap,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------- config I/O

ALIASES = {
    "env": "environment",
    "attack_budget": "attack_total",
    "defense_budget": "defense_total",
    "y": "attack_total",
    "x": "defense_total",
    "nodes": "n_nodes",
    "pu": "pu_model",
    "m": "power_level",
    "u": "ack_level",
}
_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def _coerce(name: str, raw):
    if raw is None:
        return None
    f = _FIELDS[name]
    text = str(raw).strip().strip('"').strip("'")
    if text.lower() in ("none", "null", ""):
        if "Optional" in str(f.type):
            return None
        raise ConfigError(f"{name}: a value is required")
    kind = str(f.type)
    try:
        if "int" in kind:
            return int(float(text)) if float(text).is_integer() else int(text)
        if "float" in kind:
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    return text


def normalise_key(key: str) -> str:
    k = key.strip().lower().replace("-", "_")
    k = ALIASES.get(k, k)
    if k not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    return k


def read_kv_file(path) -> Dict[str, str]:
    """Flat ``key = value`` pairs; ``[section]`` headers are allowed and ignored."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None)
    parser.optionxform = str
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        parser.read_string("[__root__]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out: Dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section, raw=True):
            out[key] = value
    return out


def build_config(file_values: Optional[Dict[str, str]] = None,
                 cli_values: Optional[Dict[str, object]] = None) -> ScenarioConfig:
    """Merge defaults < file < CLI and validate."""
    merged: Dict[str, object] = {}
    for source in (file_values or {}, cli_values or {}):
        for key, value in source.items():
            if value is None:
                continue
            name = normalise_key(key)
            merged[name] = _coerce(name, value)
    return ScenarioConfig(**merged).validate()


def expand_grid(values: Dict[str, str]) -> tuple:
    """Turn a grid file into ``(configs, base_seed)``.

    Comma-separated values vary (cartesian product, file order); ``repeats``
    replicates every grid point with consecutive seeds; ``base_seed`` seeds
    the sweep.
    """
    values = dict(values)
    repeats = int(values.pop("repeats", 1))
    base_seed = int(values.pop("base_seed", 0))
    axes = []
    for key, raw in values.items():
        name = normalise_key(key)
        items = [v.strip() for v in str(raw).split(",") if v.strip()]
        axes.append((name, items or [raw]))
    configs = []
    names = [a[0] for a in axes]
    for combo in itertools.product(*[a[1] for a in axes]):
        fixed = dict(zip(names, combo))
        for _ in range(repeats):
            configs.append(build_config(fixed))
    if not configs:
        raise ConfigError("grid expands to no scenarios")
    return configs, base_seed


# ---------------------------------------------------------------- running


@dataclass
class ExperimentReport:
    config: ScenarioConfig
    per_round: List[RoundMetrics]
    summary: dict
    game_rounds: List[RoundRecord] = field(default_factory=list)
    ledger: Optional[em.EnergyLedger] = None
    non_beneficial_by_round: List[float] = field(default_factory=list)
    equilibrium_by_round: List[bool] = field(default_factory=list)
    curves: Optional[dict] = None


@dataclass
class SweepFailure:
    index: int
    config: ScenarioConfig
    message: str


def summarise(per_round: Sequence[RoundMetrics], non_beneficial: Sequence[float],
              at_eq: Sequence[bool]) -> dict:
    """Summary fields recomputable from the per-round stream."""
    first_eq = next((i + 1 for i, e in enumerate(at_eq) if e), None)
    return {
        "protected_fraction_final": per_round[-1].protected_fraction,
        "mean_correct_packets": float(np.mean([m.correct_packets for m in per_round])),
        "total_non_beneficial_J": float(non_beneficial[-1]) if non_beneficial else 0.0,
        "converged": first_eq is not None,
        "rounds_to_equilibrium": first_eq,
    }


def run_scenario(config: ScenarioConfig, keep_detail: bool = True) -> ExperimentReport:
    """Play the game and deliver reports for ``config.rounds`` rounds."""
    config.validate()
    envs, levels = (None, None)
    if config.overrides:
        envs, levels = load_overrides(config.overrides)
    env = environment(config.environment, envs)
    link = config.link_profile()
    timing = timing_for(link)
    sensing = config.sensing_profile()
    game = init_state(config.game_config())
    channel = substream(config.seed, STREAM_CHANNEL)
    ledger = em.EnergyLedger(config.n_nodes)

    per_round, records, nb, at_eq = [], [], [], []
    for _ in range(config.rounds):
        game, rec = step_round(game)
        metrics, ledger = simulate_round(game, env, link, ledger, channel, timing,
                                         sensing, levels, detail=keep_detail)
        per_round.append(metrics)
        records.append(rec)
        nb.append(ledger.non_beneficial_J)
        at_eq.append(is_nash_equilibrium(game))
    summary = summarise(per_round, nb, at_eq)
    return ExperimentReport(
        config=config,
        per_round=per_round,
        summary=summary,
        game_rounds=records if keep_detail else [],
        ledger=ledger,
        non_beneficial_by_round=nb,
        equilibrium_by_round=at_eq,
    )


def derive_seed(base_seed: int, index: int) -> int:
    """Per-scenario seed from the sweep seed and the scenario's position."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def _run_entry(args):
    index, config, keep_detail = args
    try:
        return run_scenario(config, keep_detail=keep_detail)
    except Exception as exc:  # recorded per entry; the sweep keeps going
        return SweepFailure(index, config, f"{type(exc).__name__}: {exc}")


def default_parallelism() -> int:
    n = os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return n


def sweep(configs: Sequence[ScenarioConfig], parallelism: Optional[int] = None,
          base_seed: Optional[int] = None,
          keep_detail: bool = False) -> List[Union[ExperimentReport, SweepFailure]]:
    """Run scenarios independently, preserving input order.

    Args:
        configs: Scenarios to run.
        parallelism: Worker processes; defaults to the CPU count, capped by
            ``SSDF_ARENA_THREADS``.
        base_seed: When given, each scenario's seed is replaced by
            :func:`derive_seed` of ``(base_seed, index)``.
        keep_detail: Keep per-slot outcomes and game logs in the reports.
    """
    if not configs:
        raise ConfigError("sweep needs at least one scenario")
    jobs = []
    for i, cfg in enumerate(configs):
        if base_seed is not None:
            cfg = dataclasses.replace(cfg, seed=derive_seed(base_seed, i))
        jobs.append((i, cfg, keep_detail))
    workers = parallelism if parallelism is not None else default_parallelism()
    cap = os.environ.get(THREADS_ENV)
    if cap:
        workers = min(workers, max(1, int(cap)))
    workers = max(1, min(workers, len(jobs)))
    if workers == 1:
        return [_run_entry(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_entry, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# ---------------------------------------------------------------- curves


def env_link_snr(env_name: str, link: Optional[LinkProfile] = None, envs=None, levels=None) -> float:
    """Clean linear link SNR for an environment with no shadowing."""
    link = link or LinkProfile(shadow_mode="deterministic")
    return float(clean_snr_linear(environment(env_name, envs), link, 0.0, levels))


def roc_table(env_name: str, samples: int = 100, pf_grid=None,
              link: Optional[LinkProfile] = None) -> np.ndarray:
    """Rows ``(pf, pd_nonfluct, pd_fluct)`` for one environment's link SNR."""
    pf = np.linspace(0.01, 0.99, 99) if pf_grid is None else np.asarray(pf_grid, float)
    gamma = samples * env_link_snr(env_name, link)
    return np.column_stack([
        pf,
        roc_point(pf, np.full_like(pf, gamma), PUModel.NONFLUCTUATING),
        roc_point(pf, np.full_like(pf, gamma), PUModel.FLUCTUATING),
    ])


def pd_snr_table(protected: Dict[str, float], pf: float = 0.1, samples: int = 100,
                 model=PUModel.NONFLUCTUATING, snr_db_grid=None) -> np.ndarray:
    """System detection probability versus per-sample SNR for each strategy.

    Protected reports detect at the matched-filter rate; reports the attacker
    owns are no better than chance (Pd = Pf).
    """
    snr_db = np.arange(-30.0, 10.5, 1.0) if snr_db_grid is None else np.asarray(snr_db_grid, float)
    pd = roc_point(np.full_like(snr_db, pf), samples * db_to_linear(snr_db), model)
    cols = [snr_db]
    for name in protected:
        p = protected[name]
        cols.append(p * pd + (1.0 - p) * pf)
    return np.column_stack(cols)


def protection_table(reports: Dict[str, ExperimentReport]) -> List[list]:
    """Rows ``round, proposed, random, equal`` of per-round protected fraction."""
    rounds = len(next(iter(reports.values())).per_round)
    rows = []
    for r in range(rounds):
        row = [r + 1]
        for name in STRATEGIES:
            rep = reports.get(name)
            row.append(rep.per_round[r].protected_fraction if rep else float("nan"))
        rows.append(row)
    return rows


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return v


def write_table(path, header: Sequence[str], rows, fmt: str = "csv") -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            if fmt == "csv":
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([_fmt(_py(v)) for v in row])
            elif fmt == "jsonl":
                for row in rows:
                    fh.write(json.dumps({h: _py(v) for h, v in zip(header, row)}) + "\n")
            else:
                raise ConfigError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _py(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


ROUND_COLUMNS = ("round", "correct_packets", "protected_fraction", "fc_decision", "energy_delta_J")
SUMMARY_COLUMNS = ("protected_fraction_final", "mean_correct_packets",
                   "total_non_beneficial_J", "converged", "rounds_to_equilibrium")
CONFIG_COLUMNS = ("strategy", "environment", "attack_total", "defense_total", "n_nodes", "seed")


def write_meta(out_dir: Path, configs: Sequence[ScenarioConfig], extra: Optional[dict] = None) -> Path:
    meta = {
        "artifact": "ssdf_arena",
        "version": __version__,
        "scenarios": [c.to_dict() for c in configs],
    }
    if extra:
        meta.update(extra)
    path = out_dir / "meta.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def emit(reports, fmt: str, path, name: str = "scenario") -> List[Path]:
    """Write reports as tables plus ``meta.json`` under directory ``path``.

    A single report yields ``<name>_rounds``, ``<name>_game.jsonl``,
    ``<name>_ledger.csv`` and ``<name>_summary``; several reports yield a
    rounds table with a leading ``scenario`` column and one summary row each.
    Failed sweep entries are listed in ``meta.json``.
    """
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    reports = list(reports)
    if not reports:
        raise ConfigError("nothing to emit: empty report list")
    if fmt not in ("csv", "jsonl"):
        raise ConfigError(f"unknown format {fmt!r}")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    ok = [(i, r) for i, r in enumerate(reports) if isinstance(r, ExperimentReport)]
    failed = [r for r in reports if isinstance(r, SweepFailure)]
    written = []
    if len(reports) == 1 and ok:
        rep = ok[0][1]
        rows = [[m.to_dict()[c] for c in ROUND_COLUMNS] for m in rep.per_round]
        written.append(write_table(out / f"{name}_rounds.{fmt}", ROUND_COLUMNS, rows, fmt))
        written.append(write_table(out / f"{name}_summary.{fmt}", SUMMARY_COLUMNS,
                                   [[rep.summary[c] for c in SUMMARY_COLUMNS]], fmt))
        if rep.game_rounds:
            p = out / f"{name}_game.jsonl"
            with open(p, "w") as fh:
                for rec in rep.game_rounds:
                    fh.write(json.dumps(rec.to_dict()) + "\n")
            written.append(p)
        if rep.ledger is not None:
            p = out / f"{name}_ledger.csv"
            rep.ledger.write_csv(p)
            written.append(p)
    else:
        header = ("scenario",) + ROUND_COLUMNS
        rows = [[i] + [m.to_dict()[c] for c in ROUND_COLUMNS]
                for i, rep in ok for m in rep.per_round]
        written.append(write_table(out / f"{name}_rounds.{fmt}", header, rows, fmt))
        header = ("scenario",) + CONFIG_COLUMNS + SUMMARY_COLUMNS
        rows = [[i] + [getattr(rep.config, c) for c in CONFIG_COLUMNS]
                + [rep.summary[c] for c in SUMMARY_COLUMNS] for i, rep in ok]
        written.append(write_table(out / f"{name}_summary.{fmt}", header, rows, fmt))
    configs = [r.config for r in reports]
    extra = {"format": fmt}
    if failed:
        extra["failures"] = [{"index": f.index, "message": f.message} for f in failed]
    written.append(write_meta(out, configs, extra))
    return written


def aggregate(reports: Sequence[ExperimentReport], keys: Sequence[str]) -> List[list]:
    """Mean and std of the summary metrics per distinct ``keys`` combination."""
    groups: Dict[tuple, List[ExperimentReport]] = {}
    for rep in reports:
        if isinstance(rep, ExperimentReport):
            groups.setdefault(tuple(getattr(rep.config, k) for k in keys), []).append(rep)
    rows = []
    for key, reps in groups.items():
        row = list(key) + [len(reps)]
        for col in ("protected_fraction_final", "mean_correct_packets", "total_non_beneficial_J"):
            vals = np.array([r.summary[col] for r in reps], dtype=float)
            row += [float(vals.mean()), float(vals.std())]
        rows.append(row)
    return rows


AGGREGATE_METRICS = ("protected_fraction_final", "mean_correct_packets", "total_non_beneficial_J")


def aggregate_header(keys: Sequence[str]) -> List[str]:
    cols = list(keys) + ["runs"]
    for m in AGGREGATE_METRICS:
        cols += [f"{m}_mean", f"{m}_std"]
    return cols
