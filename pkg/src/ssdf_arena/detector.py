"""Matched-filter detection math for a single sensor report.

Under H0 the received samples are noise only; under H1 they carry the primary
user's signal.  Correlating against the known pilot gives a Gaussian test
statistic whose mean is the received signal energy ``E`` and whose variance
is ``E * sigma^2``, so detection and false-alarm probabilities follow from the
Gaussian tail ``Q``.

Everything here is a pure function over floats or numpy arrays.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import erfc, erfcinv

SQRT2 = math.sqrt(2.0)


class PUModel(str, enum.Enum):
    NONFLUCTUATING = "nonfluct"
    FLUCTUATING = "fluct"

    @classmethod
    def parse(cls, value) -> "PUModel":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "nonfluct": cls.NONFLUCTUATING,
            "nonfluctuating": cls.NONFLUCTUATING,
            "fluct": cls.FLUCTUATING,
            "fluctuating": cls.FLUCTUATING,
            "fluctuatingrayleigh": cls.FLUCTUATING,
            "rayleigh": cls.FLUCTUATING,
        }
        if key not in aliases:
            raise ValueError(f"unknown PU model {value!r}")
        return aliases[key]


class Anchor(str, enum.Enum):
    FROM_PF = "FromPf"
    FROM_PD = "FromPd"


@dataclass
class DetectorParams:
    """Matched-filter operating parameters.

    Attributes:
        signal_energy: Received signal energy ``E`` (channel gain folded in).
        noise_variance: Per-sample noise variance ``sigma^2``.
        samples: Number of samples ``N_sm``.
        pilot: Known pilot of length ``N_sm``; defaults to all ones.
    """

    signal_energy: float
    noise_variance: float = 1.0
    samples: int = 1
    pilot: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.noise_variance <= 0:
            raise ValueError("noise_variance must be > 0")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.signal_energy < 0:
            raise ValueError("signal_energy must be >= 0")
        if self.pilot is None:
            self.pilot = np.ones(self.samples)
        else:
            self.pilot = np.asarray(self.pilot, dtype=float)
            if self.pilot.shape != (self.samples,):
                raise ValueError("pilot length must equal samples")

    @property
    def spread(self) -> float:
        """Standard deviation ``sqrt(E * sigma^2)`` of the test statistic."""
        s = math.sqrt(self.signal_energy * self.noise_variance)
        if s == 0.0:
            raise ZeroDivisionError("E * sigma^2 must be > 0")
        return s


def q_function(z):
    """Gaussian tail probability ``Q(z) = 0.5 * erfc(z / sqrt(2))``."""
    out = 0.5 * erfc(np.asarray(z, dtype=float) / SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def q_inverse(p):
    """Inverse of :func:`q_function` on ``(0, 1)``."""
    out = SQRT2 * erfcinv(2.0 * np.asarray(p, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def mf_statistic(received: Sequence[float], pilot: Sequence[float]) -> float:
    """Correlate the received samples with the pilot."""
    y = np.asarray(received, dtype=float)
    xp = np.asarray(pilot, dtype=float)
    if y.shape != xp.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {xp.shape}")
    return float(np.dot(y, xp))


def prob_detection(threshold: float, params: DetectorParams) -> float:
    """``Pd = Q((lambda - E) / sqrt(E sigma^2))``."""
    return q_function((threshold - params.signal_energy) / params.spread)


def prob_false_alarm(threshold: float, params: DetectorParams) -> float:
    """``Pf = Q(lambda / sqrt(E sigma^2))``."""
    return q_function(threshold / params.spread)


def threshold_for(target: float, params: DetectorParams, anchor=Anchor.FROM_PF) -> float:
    """Threshold that hits ``target`` for the chosen probability.

    Args:
        target: Desired Pf (``FromPf``) or Pd (``FromPd``), in ``(0, 1)``.
        params: Detector parameters.
        anchor: Which probability the target refers to.
    """
    if not 0.0 < target < 1.0:
        raise ValueError(f"target must be in (0, 1), got {target}")
    anchor = Anchor(anchor)
    lam = q_inverse(target) * params.spread
    if anchor is Anchor.FROM_PD:
        lam += params.signal_energy
    return lam


def roc_point(pf, snr, model=PUModel.NONFLUCTUATING):
    """Detection probability at false-alarm ``pf`` and SNR ``gamma'``.

    Nonfluctuating users give ``Q(Q^-1(pf) - sqrt(gamma'))``; a Rayleigh
    fluctuating user gives ``pf ** (1 / (1 + gamma'))``.  Accepts scalars or
    broadcastable arrays.
    """
    model = PUModel.parse(model)
    pf_a = np.asarray(pf, dtype=float)
    snr_a = np.asarray(snr, dtype=float)
    if np.any((pf_a <= 0) | (pf_a >= 1)):
        raise ValueError("pf must lie in (0, 1)")
    if np.any(snr_a < 0):
        raise ValueError("snr must be >= 0")
    if model is PUModel.NONFLUCTUATING:
        pd = 0.5 * erfc((q_inverse(pf_a) - np.sqrt(snr_a)) / SQRT2)
        pd = np.where(snr_a == 0, pf_a, pd)
    else:
        pd = pf_a ** (1.0 / (1.0 + snr_a))
    if np.ndim(pd) == 0:
        return float(pd)
    return pd


def effective_snr(tx_power, defense, attack, gain, noise_power):
    """SNR of a report with defense power added to the signal and attack
    power added to the noise: ``G (S + x) / (P_n + y)``.  Broadcasts over
    numpy arrays."""
    denom = np.asarray(noise_power, dtype=float) + attack
    if np.any(denom <= 0):
        raise ZeroDivisionError("noise_power + attack must be > 0")
    out = gain * (np.asarray(tx_power, dtype=float) + defense) / denom
    return float(out) if np.ndim(out) == 0 else out


def db_to_linear(db):
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def linear_to_db(lin):
    return 10.0 * np.log10(np.asarray(lin, dtype=float))


def roc_curve(pf_grid: Iterable[float], snr: float, model=PUModel.NONFLUCTUATING) -> np.ndarray:
    """Array of ``(pf, pd)`` rows for one SNR."""
    pf = np.asarray(list(pf_grid), dtype=float)
    return np.column_stack([pf, roc_point(pf, snr, model)])


def pd_vs_snr(snr_db_grid: Iterable[float], pf: float, model=PUModel.NONFLUCTUATING,
              samples: int = 1) -> np.ndarray:
    """Array of ``(snr_db, pd)`` rows at a fixed false-alarm rate.

    ``samples`` scales the per-sample SNR into the integrated ``gamma'``.
    """
    snr_db = np.asarray(list(snr_db_grid), dtype=float)
    gamma = samples * db_to_linear(snr_db)
    return np.column_stack([snr_db, roc_point(np.full_like(gamma, pf), gamma, model)])


def write_curve(rows: np.ndarray, path, header: Sequence[str]) -> None:
    """Write curve rows as CSV with a header line."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
