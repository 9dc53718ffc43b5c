"""Rank and correlation analysis with significance testing.

Ranks are ascending with tied values sharing the mean of their positional
ranks.  The Spearman coefficient is computed, by definition, as the
Pearson coefficient of the two rank vectors, so the identity between the
two holds bit for bit, ties included.

Significance defaults to the two-sided t approximation; a permutation
test (exhaustive for small samples, seeded sampling otherwise) is
available as an alternative and is used as the fallback when a sample is
too small for the t approximation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import t as t_distribution

from .ingest import format_value
from .metrics import GroupScores
from .model import GroupMetricsError, Subgroup, in_subgroup

DEFAULT_ALPHA = 0.05

# Exhaustive permutation enumeration up to this sample size; larger
# samples use a seeded sample of PERMUTATION_SAMPLES permutations.
EXHAUSTIVE_PERMUTATION_LIMIT = 8
PERMUTATION_SAMPLES = 10000

# Recomputed coefficients can differ from the observed one in the last
# ulp; treat anything this close as "at least as extreme".
_PERMUTATION_TIE_TOLERANCE = 1e-12


class EmptyInputError(GroupMetricsError):
    pass


class NonFiniteValueError(GroupMetricsError):
    pass


class LengthMismatchError(GroupMetricsError):
    pass


class DegenerateVarianceError(GroupMetricsError):
    pass


class TooFewPointsError(GroupMetricsError):
    pass


class CoefficientOutOfRangeError(GroupMetricsError):
    pass


class SignificanceMethod(str, Enum):
    T_APPROX = "tapprox"
    PERMUTATION = "permutation"


class Pairing(str, Enum):
    """Which pair of measures to correlate: per-head or size-scaled."""

    SPECIFIC = "specific"
    ABSOLUTE = "absolute"


def _as_vector(values: Sequence[float] | np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise GroupMetricsError(f"{name} must be one-dimensional")
    if v.size == 0:
        raise EmptyInputError(f"{name} is empty")
    if not np.all(np.isfinite(v)):
        raise NonFiniteValueError(f"{name} contains a non-finite value")
    return v


def average_ranks(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Ascending ranks with tie averaging.

    Tied values share the mean of the positional ranks they span, so
    every rank vector sums to n(n+1)/2 exactly (ranks are multiples of
    one half, which float64 represents without error).
    """
    v = _as_vector(values, "values")
    n = v.size
    order = np.argsort(v, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and v[order[j + 1]] == v[order[i]]:
            j += 1
        # positions i+1 .. j+1 (1-based); their mean is (i + j + 2) / 2
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def pearson(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """Product-moment correlation coefficient, clipped into [-1, 1]."""
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    if xv.size != yv.size:
        raise LengthMismatchError(f"length mismatch: {xv.size} vs {yv.size}")
    if xv.size < 3:
        raise TooFewPointsError(f"need at least 3 points, got {xv.size}")
    if xv.max() == xv.min():
        raise DegenerateVarianceError("x is constant")
    if yv.max() == yv.min():
        raise DegenerateVarianceError("y is constant")
    xd = xv - xv.mean()
    yd = yv - yv.mean()
    denominator = math.sqrt(float(xd @ xd)) * math.sqrt(float(yd @ yd))
    if denominator == 0.0:
        raise DegenerateVarianceError("zero variance after centering")
    r = float(xd @ yd) / denominator
    return max(-1.0, min(1.0, r))


def spearman(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """Rank correlation: Pearson applied to the average-rank vectors."""
    return pearson(average_ranks(x), average_ranks(y))


def significance(
    coefficient: float,
    n: int,
    alpha: float = DEFAULT_ALPHA,
    method: SignificanceMethod = SignificanceMethod.T_APPROX,
    *,
    data: tuple[Sequence[float], Sequence[float]] | None = None,
    statistic: str = "pearson",
    seed: int = 0,
) -> tuple[float, bool]:
    """Two-sided p-value and accept/reject decision at ``alpha``.

    T_APPROX maps the coefficient onto t = c * sqrt((n-2) / (1-c^2)) and
    evaluates the central t distribution with n-2 degrees of freedom.
    PERMUTATION recomputes the statistic over label permutations of the
    raw data (required via ``data``): exhaustive for n <= 8, otherwise a
    seeded sample, with p the fraction at least as extreme as observed.
    """
    if not math.isfinite(coefficient) or abs(coefficient) > 1.0:
        raise CoefficientOutOfRangeError(f"coefficient out of [-1, 1]: {coefficient}")
    if not (0.0 < alpha < 1.0):
        raise GroupMetricsError(f"alpha must be in (0, 1), got {alpha}")

    if method is SignificanceMethod.T_APPROX:
        if n < 4:
            raise TooFewPointsError(f"t approximation needs n >= 4, got {n}")
        df = n - 2
        one_minus_c2 = 1.0 - coefficient * coefficient
        if one_minus_c2 <= 0.0:
            p = 0.0
        else:
            t = abs(coefficient) * math.sqrt(df / one_minus_c2)
            p = 2.0 * float(t_distribution.sf(t, df))
        return p, p < alpha

    if n < 3:
        raise TooFewPointsError(f"permutation test needs n >= 3, got {n}")
    if data is None:
        raise GroupMetricsError("permutation method requires data=(x, y)")
    x, y = data
    p = _permutation_pvalue(x, y, statistic, abs(coefficient), seed)
    return p, p < alpha


def _permutation_pvalue(
    x: Sequence[float],
    y: Sequence[float],
    statistic: str,
    observed_abs: float,
    seed: int,
) -> float:
    if statistic not in ("pearson", "spearman"):
        raise GroupMetricsError(f"unknown statistic {statistic!r}")
    xv = _as_vector(x, "x")
    yv = _as_vector(y, "y")
    if xv.size != yv.size:
        raise LengthMismatchError(f"length mismatch: {xv.size} vs {yv.size}")
    if statistic == "spearman":
        # permuting y permutes its rank vector identically, so the test
        # runs on the rank vectors directly
        xv = average_ranks(xv)
        yv = average_ranks(yv)
    if xv.max() == xv.min() or yv.max() == yv.min():
        raise DegenerateVarianceError("constant input")

    xd = xv - xv.mean()
    yd = yv - yv.mean()
    denominator = math.sqrt(float(xd @ xd)) * math.sqrt(float(yd @ yd))
    if denominator == 0.0:
        raise DegenerateVarianceError("zero variance after centering")
    threshold = observed_abs - _PERMUTATION_TIE_TOLERANCE

    n = xv.size
    if n <= EXHAUSTIVE_PERMUTATION_LIMIT:
        count = 0
        total = 0
        for perm in itertools.permutations(range(n)):
            dot = 0.0
            for i, j in enumerate(perm):
                dot += xd[i] * yd[j]
            total += 1
            if abs(dot / denominator) >= threshold:
                count += 1
        return count / total

    rng = np.random.default_rng(seed)
    tiled = np.tile(yd, (PERMUTATION_SAMPLES, 1))
    permuted = rng.permuted(tiled, axis=1)
    r_values = (permuted @ xd) / denominator
    count = int(np.count_nonzero(np.abs(r_values) >= threshold))
    return count / PERMUTATION_SAMPLES


@dataclass(frozen=True)
class CorrelationResult:
    """Pearson and Spearman coefficients with two-sided p-values and
    accept/reject flags at the configured level."""

    n: int
    r: float
    p_r: float
    significant_r: bool
    rho: float
    p_rho: float
    significant_rho: bool


@dataclass(frozen=True)
class SubgroupCell:
    """One table cell: a subgroup's sample size and, when computable,
    its correlation result; ``note`` explains any missing result."""

    subgroup: Subgroup
    n: int
    result: CorrelationResult | None = None
    note: str | None = None


@dataclass(frozen=True)
class CorrelationReport:
    """One pairing's correlations per discipline and subgroup, mirroring
    the all / large / medium-small table layout."""

    pairing: Pairing
    alpha: float
    method: SignificanceMethod
    entries: Mapping[str, Mapping[Subgroup, SubgroupCell]]

    def cell(self, discipline_id: str, subgroup: Subgroup) -> SubgroupCell:
        return self.entries[discipline_id][subgroup]


def _pair_values(scores: Sequence[GroupScores], pairing: Pairing) -> tuple[np.ndarray, np.ndarray]:
    if pairing is Pairing.SPECIFIC:
        return (
            np.array([s.s1 for s in scores], dtype=np.float64),
            np.array([s.i for s in scores], dtype=np.float64),
        )
    return (
        np.array([s.S1 for s in scores], dtype=np.float64),
        np.array([s.I for s in scores], dtype=np.float64),
    )


def _correlate(
    scores: Sequence[GroupScores],
    pairing: Pairing,
    alpha: float,
    method: SignificanceMethod,
    seed: int,
) -> CorrelationResult:
    x, y = _pair_values(scores, pairing)
    n = len(scores)
    r = pearson(x, y)
    rho = spearman(x, y)

    # the t approximation needs n >= 4; fall back to the exact
    # permutation test for the smallest samples
    eff_method = method
    if method is SignificanceMethod.T_APPROX and n < 4:
        eff_method = SignificanceMethod.PERMUTATION

    p_r, sig_r = significance(
        r, n, alpha, eff_method, data=(x, y), statistic="pearson", seed=seed
    )
    p_rho, sig_rho = significance(
        rho, n, alpha, eff_method, data=(x, y), statistic="spearman", seed=seed
    )
    return CorrelationResult(
        n=n,
        r=r,
        p_r=p_r,
        significant_r=sig_r,
        rho=rho,
        p_rho=p_rho,
        significant_rho=sig_rho,
    )


def correlation_suite(
    scores: Sequence[GroupScores],
    pairing: Pairing,
    alpha: float = DEFAULT_ALPHA,
    method: SignificanceMethod = SignificanceMethod.T_APPROX,
    seed: int = 0,
) -> CorrelationReport:
    """Correlations per discipline over the all / large / medium-small
    subgroups.

    Unknown-class groups contribute to the ALL subgroup only.  Subgroups
    with fewer than 3 members, or with a constant measure, are reported
    as cells without a result rather than failing the whole suite; the
    ALL subgroup must be computable and raises otherwise.
    """
    by_discipline: dict[str, list[GroupScores]] = {}
    for s in scores:
        by_discipline.setdefault(s.discipline_id, []).append(s)

    entries: dict[str, dict[Subgroup, SubgroupCell]] = {}
    for discipline_id, members in by_discipline.items():
        cells: dict[Subgroup, SubgroupCell] = {}
        for subgroup in (Subgroup.ALL, Subgroup.LARGE, Subgroup.MEDIUM_SMALL):
            selected = [m for m in members if in_subgroup(m.size_class, subgroup)]
            n = len(selected)
            if n < 3:
                if subgroup is Subgroup.ALL:
                    raise TooFewPointsError(
                        f"discipline {discipline_id!r} has only {n} groups; need >= 3"
                    )
                cells[subgroup] = SubgroupCell(subgroup, n, note="insufficient n")
                continue
            try:
                result = _correlate(selected, pairing, alpha, method, seed)
            except DegenerateVarianceError:
                if subgroup is Subgroup.ALL:
                    raise
                cells[subgroup] = SubgroupCell(subgroup, n, note="degenerate variance")
                continue
            cells[subgroup] = SubgroupCell(subgroup, n, result=result)
        entries[discipline_id] = cells

    return CorrelationReport(pairing=pairing, alpha=alpha, method=method, entries=entries)


REPORT_COLUMNS = (
    "discipline_id",
    "pairing",
    "subgroup",
    "n",
    "r",
    "p_r",
    "sig_r",
    "rho",
    "p_rho",
    "sig_rho",
)


def report_rows(report: CorrelationReport) -> list[list[str]]:
    """Machine-export rows; empty strings for unavailable cells."""
    rows: list[list[str]] = []
    for discipline_id, cells in report.entries.items():
        for subgroup in (Subgroup.ALL, Subgroup.LARGE, Subgroup.MEDIUM_SMALL):
            cell = cells[subgroup]
            if cell.result is None:
                values = [""] * 6
            else:
                res = cell.result
                values = [
                    format_value(res.r),
                    format_value(res.p_r),
                    format_value(res.significant_r),
                    format_value(res.rho),
                    format_value(res.p_rho),
                    format_value(res.significant_rho),
                ]
            rows.append(
                [discipline_id, report.pairing.value, subgroup.value, str(cell.n)] + values
            )
    return rows


def _format_cell(cell: SubgroupCell, which: str) -> str:
    if cell.result is None:
        return "--"
    res = cell.result
    if which == "r":
        value, starred = res.r, res.significant_r
    else:
        value, starred = res.rho, res.significant_rho
    return f"{value:.2f}{'*' if starred else ''}"


def render_report(report: CorrelationReport) -> str:
    """Fixed-width table with ``*`` marking significance and ``--`` for
    subgroups without size information."""
    if report.pairing is Pairing.SPECIFIC:
        title = "Correlations between specific measures: quality s1 vs impact i"
        columns = ["discipline", "n", "r (all)", "r (large)", "r (med/small)", "rho (all)"]
    else:
        title = "Correlations between absolute measures: strength S1 vs impact I"
        columns = ["discipline", "n", "r (all)", "r (large)", "r (med/small)"]

    table: list[list[str]] = [columns]
    for discipline_id, cells in report.entries.items():
        row = [
            discipline_id,
            str(cells[Subgroup.ALL].n),
            _format_cell(cells[Subgroup.ALL], "r"),
            _format_cell(cells[Subgroup.LARGE], "r"),
            _format_cell(cells[Subgroup.MEDIUM_SMALL], "r"),
        ]
        if report.pairing is Pairing.SPECIFIC:
            row.append(_format_cell(cells[Subgroup.ALL], "rho"))
        table.append(row)

    widths = [max(len(row[c]) for row in table) for c in range(len(columns))]
    lines = [
        title,
        f"significance: * marks p < {report.alpha:g} ({report.method.value}); "
        "-- marks subgroups without enough classified groups",
        "",
    ]
    for row in table:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
