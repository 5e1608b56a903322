"""Detection metrics, threshold sweeps, histograms and report tables.

Rates are exact fractions of counts::

    false_alarm = (n_ben - n_ben_correct) / n_ben
    missing     = (n_adv - n_adv_correct) / n_adv
"""
from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

CSS_GRID = tuple(round(0.05 * k, 2) for k in range(1, 15))  # 0.05 .. 0.70
CRS_GRID = tuple(round(0.05 * k, 2) for k in range(1, 11))  # 0.05 .. 0.50


def threshold_grid(lo: float, hi: float, step: float) -> tuple[float, ...]:
    n = int(round((hi - lo) / step))
    return tuple(round(lo + k * step, 10) for k in range(n + 1))


@dataclass(frozen=True)
class DetectionCounts:
    n_ben: int
    n_ben_correct: int
    n_adv: int
    n_adv_correct: int

    def __post_init__(self):
        if min(self.n_ben, self.n_ben_correct, self.n_adv, self.n_adv_correct) < 0:
            raise ValueError("counts must be non-negative")
        if self.n_ben_correct > self.n_ben or self.n_adv_correct > self.n_adv:
            raise ValueError("correct counts cannot exceed totals")


@dataclass(frozen=True)
class RatePoint:
    threshold: float
    false_alarm: Fraction
    missing: Fraction
    benign_acc: Fraction
    adv_acc: Fraction

    def __post_init__(self):
        if self.false_alarm != 1 - self.benign_acc or self.missing != 1 - self.adv_acc:
            raise ValueError("rates must complement accuracies")

    def as_floats(self) -> tuple[float, float, float, float, float]:
        return (self.threshold, float(self.false_alarm), float(self.missing),
                float(self.benign_acc), float(self.adv_acc))


def rates(counts: DetectionCounts, threshold: float = float("nan")) -> RatePoint:
    if counts.n_ben == 0 or counts.n_adv == 0:
        raise ZeroDivisionError("rates need at least one benign and one adversarial sample")
    ben = Fraction(counts.n_ben_correct, counts.n_ben)
    adv = Fraction(counts.n_adv_correct, counts.n_adv)
    return RatePoint(threshold, 1 - ben, 1 - adv, ben, adv)


def percent(x: Fraction | float) -> str:
    return f"{100 * float(x):.2f}%"


def count_at(scores_benign, scores_adv, threshold: float, polarity: str = "high") -> DetectionCounts:
    """``polarity='high'``: large scores are flagged (MSE detectors);
    ``'low'``: small scores are flagged (correlation detector)."""
    ben = np.asarray(scores_benign, dtype=np.float64)
    adv = np.asarray(scores_adv, dtype=np.float64)
    if polarity == "high":
        ben_ok, adv_ok = ben <= threshold, adv > threshold
    elif polarity == "low":
        ben_ok, adv_ok = ben >= threshold, adv < threshold
    else:
        raise ValueError("polarity must be 'high' or 'low'")
    return DetectionCounts(ben.size, int(ben_ok.sum()), adv.size, int(adv_ok.sum()))


def threshold_sweep(scores_benign, scores_adv, thresholds: Sequence[float], polarity: str = "high") -> list[RatePoint]:
    if len(scores_benign) == 0 or len(scores_adv) == 0:
        raise ValueError("score lists must be nonempty")
    return [rates(count_at(scores_benign, scores_adv, t, polarity), float(t)) for t in thresholds]


def balanced_threshold(points: Sequence[RatePoint]) -> RatePoint:
    """Grid point minimizing ``|false_alarm - missing|``; ties go to the lower threshold."""
    if not points:
        raise ValueError("no rate points")
    return min(points, key=lambda p: (abs(p.false_alarm - p.missing), p.threshold))


@dataclass(frozen=True)
class HistogramBin:
    bin_lo: float
    bin_hi: float
    density: float


def histogram(scores, bins: int) -> list[HistogramBin]:
    """Density histogram; a zero-width range collapses to one unit-mass bin."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("no scores")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    lo, hi = float(s.min()), float(s.max())
    if lo == hi:
        half = 0.5 if lo == 0 else 0.5 * abs(lo)
        return [HistogramBin(lo - half, lo + half, 1.0 / (2 * half))]
    dens, edges = np.histogram(s, bins=bins, density=True)
    return [HistogramBin(float(a), float(b), float(d)) for a, b, d in zip(edges[:-1], edges[1:], dens)]


def write_ratepoints_csv(path, points: Sequence[RatePoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "false_alarm", "missing", "benign_acc", "adv_acc"])
        for p in points:
            w.writerow([repr(v) for v in p.as_floats()])


def write_histogram_csv(path, table: Sequence[HistogramBin]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f.name for f in fields(HistogramBin)])
        for b in table:
            w.writerow([repr(v) for v in astuple(b)])


# ---------------------------------------------------------------------------
# report tables


@dataclass(frozen=True)
class ReportTable:
    """Rows are sample families (``x_i`` benign, ``x_j->i`` adversarial),
    columns are settings (sampling percentages, thresholds, ...)."""

    title: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float, ...]], ...]

    def __post_init__(self):
        for name, vals in self.rows:
            if len(vals) != len(self.columns):
                raise ValueError(f"row {name!r} has {len(vals)} values for {len(self.columns)} columns")

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.rows), len(self.columns))


def report_table(title: str, columns: Sequence[str], benign: Mapping[str, Sequence[float]],
                 adversarial: Mapping[str, Sequence[float]] | None = None) -> ReportTable:
    """Benign rows first, then adversarial rows, in mapping order."""
    rows = [(k, tuple(float(v) for v in vals)) for k, vals in benign.items()]
    rows += [(k, tuple(float(v) for v in vals)) for k, vals in (adversarial or {}).items()]
    return ReportTable(title, tuple(columns), tuple(rows))


def table_to_csv(table: ReportTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([table.title, *table.columns])
    for name, vals in table.rows:
        w.writerow([name, *(repr(v) for v in vals)])
    return buf.getvalue()


def table_from_csv(text: str) -> ReportTable:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty table")
    head = rows[0]
    return ReportTable(head[0], tuple(head[1:]), tuple((r[0], tuple(float(v) for v in r[1:])) for r in rows[1:]))


def table_to_text(table: ReportTable, digits: int = 2) -> str:
    cells = [[table.title, *table.columns]]
    cells += [[name, *(f"{v:.{digits}f}" for v in vals)] for name, vals in table.rows]
    widths = [max(len(row[c]) for row in cells) for c in range(len(cells[0]))]
    lines = ["  ".join(cell.ljust(widths[c]) if c == 0 else cell.rjust(widths[c]) for c, cell in enumerate(row))
             for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
