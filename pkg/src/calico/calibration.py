"""Calibration measurement and the post-hoc temperature baseline.

Expected calibration error bins confidences into M equal-width intervals
((m-1)/M, m/M], right endpoint included, and weights the per-bin |accuracy -
confidence| gap by bin occupancy. Temperature scaling is the optional
post-hoc comparison: one scalar T tuned to minimize held-out NLL, leaving
argmax predictions untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .models import ModelState, confidence, logits, posterior

DEFAULT_BINS = 15


@dataclass(frozen=True)
class BinStats:
    """One confidence interval ((lo, hi]) with its occupancy statistics."""

    lo: float
    hi: float
    count: int
    acc: float
    conf: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class CalibrationReport:
    m_bin: int
    bins: tuple = field(repr=False)
    ece: float = 0.0
    accuracy: float = 0.0
    n_data: int = 0

    def __post_init__(self):
        if sum(b.count for b in self.bins) != self.n_data:
            raise ValidationError("bin counts do not sum to n_data")
        if not 0.0 <= self.ece <= 1.0:
            raise ValidationError("ece must lie in [0,1]")


def _bin_index(conf: np.ndarray, m_bin: int) -> np.ndarray:
    # right-closed intervals: the first edge >= c identifies c's bin
    edges = np.arange(1, m_bin + 1, dtype=np.float64) / m_bin
    return np.searchsorted(edges, conf, side="left")


def compute_ece(confidences: np.ndarray, correct: np.ndarray,
                m_bin: int = DEFAULT_BINS) -> CalibrationReport:
    """Bin-weighted calibration error with full per-bin statistics."""
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if conf.ndim != 1 or conf.shape != corr.shape:
        raise ValidationError("confidences and correct must be equal-length vectors")
    if conf.size == 0:
        raise ValidationError("empty prediction set")
    if m_bin < 1:
        raise ValidationError("m_bin must be >= 1")
    if np.any(conf <= 0.0) or np.any(conf > 1.0):
        raise ValidationError("confidences must lie in (0, 1]")

    idx = _bin_index(conf, m_bin)
    n = conf.size
    bins = []
    ece = 0.0
    for m in range(m_bin):
        mask = idx == m
        cnt = int(mask.sum())
        if cnt:
            acc = float(corr[mask].mean())
            avg = float(conf[mask].mean())
            ece += (cnt / n) * abs(acc - avg)
        else:
            acc = 0.0
            avg = 0.0
        bins.append(BinStats(lo=m / m_bin, hi=(m + 1) / m_bin,
                             count=cnt, acc=acc, conf=avg))
    return CalibrationReport(m_bin=m_bin, bins=tuple(bins), ece=float(ece),
                             accuracy=float(corr.mean()), n_data=n)


def evaluate_model(state: ModelState, features: np.ndarray,
                   labels: np.ndarray, m_bin: int = DEFAULT_BINS) -> CalibrationReport:
    """Score a labeled evaluation set: accuracy plus the ECE report."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValidationError("empty evaluation set")
    p = posterior(logits(state, features))
    conf, pred = confidence(p)
    return compute_ece(conf, pred == labels, m_bin)


def reliability_table(report: CalibrationReport) -> list:
    """Rows for a reliability diagram: every bin, empty ones included."""
    rows = []
    for b in report.bins:
        rows.append({
            "midpoint": b.midpoint,
            "acc": b.acc,
            "conf": b.conf,
            "count": b.count,
            "deviation": b.acc - b.conf if b.count else 0.0,
        })
    return rows


def _nll(scaled_logits: np.ndarray, labels: np.ndarray) -> float:
    m = scaled_logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(scaled_logits - m).sum(axis=1))
    return float(np.mean(lse - scaled_logits[np.arange(len(labels)), labels]))


def negative_log_likelihood(logit_rows: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of the implied posterior against true labels."""
    l = np.asarray(logit_rows, dtype=np.float64)
    y = np.asarray(labels)
    if l.ndim != 2 or l.shape[0] != y.shape[0] or l.shape[0] == 0:
        raise ValidationError("logits and labels must align and be nonempty")
    return _nll(l, y)


def temperature_scale(held_logits: np.ndarray, labels: np.ndarray,
                      log_t_range: tuple = (-3.0, 3.0),
                      tol: float = 1e-4) -> float:
    """Golden-section search for the NLL-minimizing temperature.

    The search runs over the natural log of T so the bracket covers
    [e^-3, e^3] multiplicatively. Scaling by any T > 0 preserves argmax.
    """
    l = np.asarray(held_logits, dtype=np.float64)
    y = np.asarray(labels)
    if l.ndim != 2 or l.shape[0] == 0 or l.shape[0] != y.shape[0]:
        raise ValidationError("held-out logits and labels must align and be nonempty")
    if np.unique(y).size < 2:
        raise ValidationError("held-out set must contain at least two classes")

    def objective(log_t: float) -> float:
        return _nll(l / np.exp(log_t), y)

    lo, hi = log_t_range
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = objective(c), objective(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(d)
    return float(np.exp(0.5 * (a + b)))
