"""The four core group measures.

Specific (per-head) measures: peer-review quality ``s1`` (the weighted
star-band sum) and citation impact ``i`` (mean rebased citations, the
normalised citation impact).  Absolute measures scale each by group size:
strength ``S1 = s1 * N`` and impact ``I = i * N``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence, TextIO

from .ingest import (
    BaselineTable,
    GroupsTable,
    MalformedRowError,
    PaperRecord,
    RowError,
    TableParseError,
    column_index,
    float_field,
    format_value,
    read_rows,
    write_rows,
)
from .model import (
    DEFAULT_SCHEME,
    GroupMetricsError,
    NonPositiveSizeError,
    QualityProfile,
    SizeClass,
    WeightingScheme,
)

logger = logging.getLogger(__name__)

SCORES_COLUMNS = ("discipline_id", "group_id", "N", "size_class", "s1", "S1", "i", "I")

# Supplied and recomputed NCI values may differ by rounding in the source
# data; anything beyond this is worth flagging.
NCI_DISCREPANCY_TOLERANCE = 1e-6

_PRODUCT_RTOL = 1e-12


class MissingBaselineError(GroupMetricsError):
    def __init__(self, field_id: str, pub_year: int):
        super().__init__(f"no baseline for field {field_id!r}, year {pub_year}")
        self.field_id = field_id
        self.pub_year = pub_year


class EmptyRecordSetError(GroupMetricsError):
    pass


class MissingNciSourceError(GroupMetricsError):
    def __init__(self, group_id: str):
        super().__init__(
            f"group {group_id!r} has no citation-impact source: supply an nci "
            "column or papers plus baselines"
        )
        self.group_id = group_id


class Attribution(str, Enum):
    """How co-authored outputs enter the group mean: equally, or weighted
    by the group's fractional author share."""

    UNWEIGHTED = "unweighted"
    SHARE_WEIGHTED = "share"


@dataclass(frozen=True)
class GroupScores:
    """All four measures for one group; the absolute columns are exact
    size multiples of the specific ones (to float round-off)."""

    discipline_id: str
    group_id: str
    N: float
    size_class: SizeClass
    s1: float
    S1: float
    i: float
    I: float

    def __post_init__(self):
        if self.N <= 0:
            raise NonPositiveSizeError(self.N)
        for label, total, specific in (("S1", self.S1, self.s1), ("I", self.I, self.i)):
            expected = specific * self.N
            if abs(total - expected) > _PRODUCT_RTOL * abs(expected):
                raise GroupMetricsError(
                    f"{label} must equal its specific measure times N: "
                    f"{total} vs {expected} (group {self.group_id})"
                )


def weighted_quality(profile: QualityProfile, scheme: WeightingScheme = DEFAULT_SCHEME) -> float:
    """Quality score s1: the weight-by-band sum over the profile.

    Under the default 7/3/1/0/0 weighting this lands in [0, 700]
    percent-points times weight.
    """
    bands = profile.bands()
    weights = scheme.weights()
    return (
        weights[0] * bands[0]
        + weights[1] * bands[1]
        + weights[2] * bands[2]
        + weights[3] * bands[3]
        + weights[4] * bands[4]
    )


def normalized_quality(s1: float, scheme: WeightingScheme = DEFAULT_SCHEME) -> float:
    """Affine rescaling of s1 onto a 0-100 scale (s1 / max weight).

    The rescaling cannot change any downstream correlation, so which
    scale reports use is purely presentational.
    """
    return s1 / max(scheme.weights())


def strength(s1: float, N: float) -> float:
    """Absolute strength S1 = s1 * N, the volume of quality."""
    if not math.isfinite(N) or N <= 0:
        raise NonPositiveSizeError(N)
    return s1 * N


def impact(i: float, N: float) -> float:
    """Absolute impact I = i * N, total citation impact of the group."""
    if not math.isfinite(N) or N <= 0:
        raise NonPositiveSizeError(N)
    if i < 0:
        raise GroupMetricsError(f"specific impact must be >= 0, got {i}")
    return i * N


def rebase_citation(record: PaperRecord, baselines: BaselineTable) -> float:
    """Rebased impact of one output: citations divided by the mean
    citations per paper for its field and publication year."""
    mean = baselines.lookup(record.field_id, record.pub_year)
    if mean is None:
        raise MissingBaselineError(record.field_id, record.pub_year)
    return record.citations / mean


def group_nci(
    records: Sequence[PaperRecord],
    baselines: BaselineTable,
    attribution: Attribution = Attribution.UNWEIGHTED,
) -> float:
    """Group-level citation impact: the mean rebased impact over the
    group's submitted outputs.

    SHARE_WEIGHTED weights each output by the group's author share, so a
    half-share paper counts half; with all shares equal to 1 the two
    policies coincide exactly.
    """
    if not records:
        raise EmptyRecordSetError("cannot average an empty record set")
    rebased = [rebase_citation(r, baselines) for r in records]
    if attribution is Attribution.UNWEIGHTED:
        return sum(rebased) / len(rebased)
    shares = [r.author_share for r in records]
    return sum(s * x for s, x in zip(shares, rebased)) / sum(shares)


def score_cohort(
    groups: GroupsTable,
    papers: Sequence[PaperRecord] | None = None,
    baselines: BaselineTable | None = None,
    scheme: WeightingScheme = DEFAULT_SCHEME,
    attribution: Attribution = Attribution.UNWEIGHTED,
) -> list[GroupScores]:
    """Score every group: quality and impact, specific and absolute.

    The impact source is the group's supplied nci column when present,
    otherwise the mean rebased impact of its papers.  When both exist the
    supplied value wins; a discrepancy beyond ``NCI_DISCREPANCY_TOLERANCE``
    is logged as a warning.  Output order matches input order.
    """
    papers_by_group: dict[str, list[PaperRecord]] = {}
    if papers is not None:
        for p in papers:
            papers_by_group.setdefault(p.group_id, []).append(p)

    scores: list[GroupScores] = []
    for g in groups:
        s1 = weighted_quality(g.profile, scheme)

        computed: float | None = None
        if baselines is not None and g.group_id in papers_by_group:
            computed = group_nci(papers_by_group[g.group_id], baselines, attribution)

        if g.nci is not None:
            i = g.nci
            if computed is not None and abs(computed - g.nci) > NCI_DISCREPANCY_TOLERANCE:
                logger.warning(
                    "group %s: supplied nci %.6f differs from computed %.6f; "
                    "using the supplied value",
                    g.group_id,
                    g.nci,
                    computed,
                )
        elif computed is not None:
            i = computed
        else:
            raise MissingNciSourceError(g.group_id)

        scores.append(
            GroupScores(
                discipline_id=g.discipline_id,
                group_id=g.group_id,
                N=g.N,
                size_class=g.size_class,
                s1=s1,
                S1=strength(s1, g.N),
                i=i,
                I=impact(i, g.N),
            )
        )
    return scores


def write_scores_table(
    scores: Sequence[GroupScores], stream: TextIO, delimiter: str = ","
) -> None:
    rows = [
        [
            s.discipline_id,
            s.group_id,
            format_value(s.N),
            s.size_class.value,
            format_value(s.s1),
            format_value(s.S1),
            format_value(s.i),
            format_value(s.I),
        ]
        for s in scores
    ]
    write_rows(stream, SCORES_COLUMNS, rows, delimiter)


def parse_scores_table(stream: TextIO) -> list[GroupScores]:
    """Re-parse an exported scores file; floats round-trip exactly."""
    header, raw_rows, _ = read_rows(stream)
    index = column_index(header, SCORES_COLUMNS)

    scores: list[GroupScores] = []
    errors: list[RowError] = []
    for lineno, fields in raw_rows:
        if len(fields) != len(header):
            errors.append(
                RowError(lineno, None, f"expected {len(header)} fields, got {len(fields)}")
            )
            continue
        try:
            raw_class = fields[index["size_class"]]
            try:
                size_class = SizeClass(raw_class)
            except ValueError:
                raise MalformedRowError(f"unknown size_class {raw_class!r}") from None
            scores.append(
                GroupScores(
                    discipline_id=fields[index["discipline_id"]],
                    group_id=fields[index["group_id"]],
                    N=float_field(fields, index, "N"),
                    size_class=size_class,
                    s1=float_field(fields, index, "s1"),
                    S1=float_field(fields, index, "S1"),
                    i=float_field(fields, index, "i"),
                    I=float_field(fields, index, "I"),
                )
            )
        except GroupMetricsError as exc:
            errors.append(RowError(lineno, None, str(exc)))

    if errors:
        raise TableParseError(errors)
    return scores
