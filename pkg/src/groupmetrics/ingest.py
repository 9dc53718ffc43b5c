"""Parsers and writers for the tabular datasets the pipeline consumes.

All tables are delimiter-separated text (comma or tab, autodetected from
the header line) with a mandatory header row, UTF-8 text and ``.`` as the
decimal separator.  Parsers validate every row, collect all rejected rows
with their 1-based line numbers, and raise a single ``TableParseError``
at the end so a report can list every problem at once.

Parsing is pure and order-preserving: re-serializing a parsed table and
parsing it again yields an identical table.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

from .model import (
    DEFAULT_SCHEME,
    DisciplineConfig,
    GroupMetricsError,
    ResearchGroup,
    SizeClass,
    WeightingScheme,
    classify_size,
    validate_profile,
)

# Assessment window (years): submissions ran 1 Jan 2001 to 31 Jul 2007,
# and publication years are recorded at year granularity.
ASSESSMENT_WINDOW = (2001, 2007)

GROUPS_COLUMNS = (
    "discipline_id",
    "institution",
    "group_id",
    "N",
    "p4",
    "p3",
    "p2",
    "p1",
    "pU",
)
PAPERS_COLUMNS = (
    "paper_id",
    "group_id",
    "field_id",
    "pub_year",
    "citations",
    "author_share",
)
BASELINES_COLUMNS = ("field_id", "pub_year", "mean_citations")
DISCIPLINES_COLUMNS = ("discipline_id", "name", "Nk", "Nc")

# FTE sizes are published with at most two decimals.
_FTE_RE = re.compile(r"^\d+(\.\d{1,2})?$")


class MalformedRowError(GroupMetricsError):
    pass


class UnknownDisciplineError(GroupMetricsError):
    def __init__(self, discipline_id: str):
        super().__init__(f"unknown discipline: {discipline_id!r}")
        self.discipline_id = discipline_id


class DuplicateGroupIdError(GroupMetricsError):
    def __init__(self, group_id: str, discipline_id: str):
        super().__init__(
            f"duplicate group_id {group_id!r} in discipline {discipline_id!r}"
        )
        self.group_id = group_id


class NegativeCitationsError(GroupMetricsError):
    pass


class AuthorShareOutOfRangeError(GroupMetricsError):
    pass


class YearOutOfWindowError(GroupMetricsError):
    pass


class DuplicateKeyError(GroupMetricsError):
    pass


class NonPositiveBaselineError(GroupMetricsError):
    pass


@dataclass(frozen=True)
class RowError:
    """One rejected input row: file line (1-based, header is line 1),
    offending column when identifiable, and the underlying problem."""

    line: int
    column: str | None
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}"
        if self.column:
            where += f", column {self.column}"
        return f"{where}: {self.message}"


class TableParseError(GroupMetricsError):
    """Raised after a full parse pass when any row was rejected."""

    def __init__(self, errors: Sequence[RowError]):
        self.errors = list(errors)
        summary = "; ".join(str(e) for e in self.errors[:5])
        more = "" if len(self.errors) <= 5 else f" (+{len(self.errors) - 5} more)"
        super().__init__(f"{len(self.errors)} rejected row(s): {summary}{more}")


@dataclass(frozen=True)
class TableSource:
    path: str | None
    row_count: int
    discipline_ids: tuple[str, ...]


@dataclass(frozen=True)
class GroupsTable:
    rows: tuple[ResearchGroup, ...]
    source: TableSource

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)


@dataclass(frozen=True)
class PaperRecord:
    """One submitted output with its citation count and the submitting
    group's fractional share of authorship."""

    paper_id: str
    group_id: str
    field_id: str
    pub_year: int
    citations: int
    author_share: float = 1.0

    def __post_init__(self):
        if self.citations < 0:
            raise NegativeCitationsError(
                f"citations must be >= 0, got {self.citations} ({self.paper_id})"
            )
        if not (0.0 < self.author_share <= 1.0):
            raise AuthorShareOutOfRangeError(
                f"author_share must be in (0, 1], got {self.author_share} "
                f"({self.paper_id})"
            )


@dataclass(frozen=True)
class BaselineTable:
    """Mean citations per paper keyed by (field, publication year); the
    denominators used to rebase raw citation counts."""

    means: Mapping[tuple[str, int], float]

    def lookup(self, field_id: str, pub_year: int) -> float | None:
        return self.means.get((field_id, pub_year))

    def __len__(self) -> int:
        return len(self.means)


@dataclass(frozen=True)
class DisciplineSummary:
    discipline_id: str
    total_groups: int
    class_counts: Mapping[SizeClass, int]
    total_fte: float
    papers_per_fte: float | None = None

    def describe(self) -> str:
        parts = []
        for cls in (SizeClass.LARGE, SizeClass.MEDIUM, SizeClass.SMALL, SizeClass.UNKNOWN):
            n = self.class_counts.get(cls, 0)
            if n:
                parts.append(f"{n} {cls.value}")
        detail = ", ".join(parts) if parts else "none classified"
        return f"{self.discipline_id}: {self.total_groups} groups: {detail}"


@dataclass(frozen=True)
class CohortSummary:
    disciplines: tuple[DisciplineSummary, ...]
    warnings: tuple[str, ...] = ()

    def for_discipline(self, discipline_id: str) -> DisciplineSummary | None:
        for d in self.disciplines:
            if d.discipline_id == discipline_id:
                return d
        return None


def sniff_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def read_rows(stream: TextIO) -> tuple[list[str], list[tuple[int, list[str]]], str]:
    """Read a delimited table: header fields, (line_number, fields) rows,
    and the detected delimiter.  Blank lines are skipped."""
    text = stream.read()
    if not text.strip():
        raise MalformedRowError("input is empty: header row is mandatory")
    first_line = text.splitlines()[0]
    delimiter = sniff_delimiter(first_line)
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    header: list[str] | None = None
    rows: list[tuple[int, list[str]]] = []
    for lineno, fields in enumerate(reader, start=1):
        if not fields or all(not f.strip() for f in fields):
            continue
        stripped = [f.strip() for f in fields]
        if header is None:
            header = stripped
        else:
            rows.append((lineno, stripped))
    assert header is not None
    return header, rows, delimiter


def write_rows(
    stream: TextIO,
    header: Sequence[str],
    rows: Iterable[Sequence[str]],
    delimiter: str = ",",
) -> None:
    writer = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)


def format_value(value) -> str:
    """Lossless text form: floats use repr so they round-trip exactly."""
    if value is None:
        return ""
    if isinstance(value, SizeClass):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def column_index(header: Sequence[str], required: Sequence[str]) -> dict[str, int]:
    index = {name: i for i, name in enumerate(header)}
    missing = [name for name in required if name not in index]
    if missing:
        raise MalformedRowError(
            f"header is missing required column(s): {', '.join(missing)}"
        )
    return index


def float_field(fields: Sequence[str], index: Mapping[str, int], name: str) -> float:
    raw = fields[index[name]]
    try:
        value = float(raw)
    except ValueError:
        raise MalformedRowError(f"non-numeric value {raw!r} for {name}") from None
    if not math.isfinite(value):
        raise MalformedRowError(f"non-finite value {raw!r} for {name}")
    return value


def int_field(fields: Sequence[str], index: Mapping[str, int], name: str) -> int:
    raw = fields[index[name]]
    try:
        return int(raw)
    except ValueError:
        raise MalformedRowError(f"non-integer value {raw!r} for {name}") from None


def parse_groups_table(
    stream: TextIO,
    configs: Mapping[str, DisciplineConfig],
    path: str | None = None,
) -> GroupsTable:
    """Parse a groups file into validated ``ResearchGroup`` rows.

    Every row runs through profile validation and size classification;
    all rejected rows are reported together via ``TableParseError``.
    """
    header, raw_rows, _ = read_rows(stream)
    index = column_index(header, GROUPS_COLUMNS)
    has_nci = "nci" in index

    groups: list[ResearchGroup] = []
    errors: list[RowError] = []
    seen: set[tuple[str, str]] = set()

    for lineno, fields in raw_rows:
        if len(fields) != len(header):
            errors.append(
                RowError(lineno, None, f"expected {len(header)} fields, got {len(fields)}")
            )
            continue
        try:
            discipline_id = fields[index["discipline_id"]]
            if discipline_id not in configs:
                raise UnknownDisciplineError(discipline_id)
            config = configs[discipline_id]

            group_id = fields[index["group_id"]]
            if not group_id:
                raise MalformedRowError("group_id must be non-empty")
            key = (discipline_id, group_id)
            if key in seen:
                raise DuplicateGroupIdError(group_id, discipline_id)

            raw_n = fields[index["N"]]
            if not _FTE_RE.match(raw_n):
                raise MalformedRowError(
                    f"N must be a decimal with at most two decimals, got {raw_n!r}"
                )
            n_fte = float(raw_n)

            profile = validate_profile(
                [float_field(fields, index, b) for b in ("p4", "p3", "p2", "p1", "pU")]
            )

            nci: float | None = None
            if has_nci and fields[index["nci"]] != "":
                nci = float_field(fields, index, "nci")

            group = ResearchGroup(
                group_id=group_id,
                institution=fields[index["institution"]],
                discipline_id=discipline_id,
                N=n_fte,
                profile=profile,
                nci=nci,
                size_class=classify_size(n_fte, config),
            )
        except GroupMetricsError as exc:
            errors.append(RowError(lineno, _offending_column(exc), str(exc)))
            continue
        seen.add(key)
        groups.append(group)

    if errors:
        raise TableParseError(errors)

    discipline_ids = tuple(dict.fromkeys(g.discipline_id for g in groups))
    return GroupsTable(
        rows=tuple(groups),
        source=TableSource(path=path, row_count=len(groups), discipline_ids=discipline_ids),
    )


def _offending_column(exc: GroupMetricsError) -> str | None:
    from . import model

    if isinstance(exc, (model.NegativeBandError, model.BandOver100Error)):
        return exc.band
    if isinstance(exc, model.SumOutOfToleranceError):
        return "p4..pU"
    if isinstance(exc, model.NonPositiveSizeError):
        return "N"
    if isinstance(exc, UnknownDisciplineError):
        return "discipline_id"
    if isinstance(exc, DuplicateGroupIdError):
        return "group_id"
    if isinstance(exc, NegativeCitationsError):
        return "citations"
    if isinstance(exc, AuthorShareOutOfRangeError):
        return "author_share"
    if isinstance(exc, YearOutOfWindowError):
        return "pub_year"
    return None


def write_groups_table(table: GroupsTable, stream: TextIO, delimiter: str = ",") -> None:
    """Serialize back to the groups input format (round-trips exactly)."""
    include_nci = any(g.nci is not None for g in table.rows)
    header = list(GROUPS_COLUMNS) + (["nci"] if include_nci else [])
    rows = []
    for g in table.rows:
        row = [
            g.discipline_id,
            g.institution,
            g.group_id,
            format_value(g.N),
            *(format_value(b) for b in g.profile.bands()),
        ]
        if include_nci:
            row.append(format_value(g.nci))
        rows.append(row)
    write_rows(stream, header, rows, delimiter)


def parse_papers_table(
    stream: TextIO,
    year_range: tuple[int, int] = ASSESSMENT_WINDOW,
) -> list[PaperRecord]:
    """Parse submitted outputs with citation counts and author shares."""
    header, raw_rows, _ = read_rows(stream)
    index = column_index(header, PAPERS_COLUMNS)

    records: list[PaperRecord] = []
    errors: list[RowError] = []
    lo, hi = year_range

    for lineno, fields in raw_rows:
        if len(fields) != len(header):
            errors.append(
                RowError(lineno, None, f"expected {len(header)} fields, got {len(fields)}")
            )
            continue
        try:
            pub_year = int_field(fields, index, "pub_year")
            if not (lo <= pub_year <= hi):
                raise YearOutOfWindowError(
                    f"pub_year {pub_year} outside assessment window {lo}-{hi}"
                )
            record = PaperRecord(
                paper_id=fields[index["paper_id"]],
                group_id=fields[index["group_id"]],
                field_id=fields[index["field_id"]],
                pub_year=pub_year,
                citations=int_field(fields, index, "citations"),
                author_share=float_field(fields, index, "author_share"),
            )
        except GroupMetricsError as exc:
            errors.append(RowError(lineno, _offending_column(exc), str(exc)))
            continue
        records.append(record)

    if errors:
        raise TableParseError(errors)
    return records


def write_papers_table(
    records: Sequence[PaperRecord], stream: TextIO, delimiter: str = ","
) -> None:
    rows = [
        [
            r.paper_id,
            r.group_id,
            r.field_id,
            str(r.pub_year),
            str(r.citations),
            format_value(r.author_share),
        ]
        for r in records
    ]
    write_rows(stream, PAPERS_COLUMNS, rows, delimiter)


def parse_baselines_table(stream: TextIO) -> BaselineTable:
    """Parse the (field, year) -> mean citations table used for rebasing."""
    header, raw_rows, _ = read_rows(stream)
    index = column_index(header, BASELINES_COLUMNS)

    means: dict[tuple[str, int], float] = {}
    errors: list[RowError] = []

    for lineno, fields in raw_rows:
        if len(fields) != len(header):
            errors.append(
                RowError(lineno, None, f"expected {len(header)} fields, got {len(fields)}")
            )
            continue
        try:
            key = (fields[index["field_id"]], int_field(fields, index, "pub_year"))
            mean = float_field(fields, index, "mean_citations")
            if mean <= 0:
                raise NonPositiveBaselineError(
                    f"baseline mean must be > 0, got {mean} for {key}"
                )
            if key in means:
                raise DuplicateKeyError(f"duplicate baseline key {key}")
        except GroupMetricsError as exc:
            column = "mean_citations" if isinstance(exc, NonPositiveBaselineError) else None
            errors.append(RowError(lineno, column, str(exc)))
            continue
        means[key] = mean

    if errors:
        raise TableParseError(errors)
    return BaselineTable(means=means)


def write_baselines_table(
    baselines: BaselineTable, stream: TextIO, delimiter: str = ","
) -> None:
    rows = [
        [field_id, str(pub_year), format_value(mean)]
        for (field_id, pub_year), mean in baselines.means.items()
    ]
    write_rows(stream, BASELINES_COLUMNS, rows, delimiter)


def parse_disciplines_table(
    stream: TextIO,
    scheme: WeightingScheme | None = None,
) -> dict[str, DisciplineConfig]:
    """Parse discipline configs; empty Nk/Nc cells mean no thresholds."""
    header, raw_rows, _ = read_rows(stream)
    index = column_index(header, DISCIPLINES_COLUMNS)

    configs: dict[str, DisciplineConfig] = {}
    errors: list[RowError] = []

    for lineno, fields in raw_rows:
        if len(fields) != len(header):
            errors.append(
                RowError(lineno, None, f"expected {len(header)} fields, got {len(fields)}")
            )
            continue
        try:
            discipline_id = fields[index["discipline_id"]]
            if discipline_id in configs:
                raise DuplicateKeyError(f"duplicate discipline {discipline_id!r}")
            nk = fields[index["Nk"]]
            nc = fields[index["Nc"]]
            config = DisciplineConfig(
                discipline_id=discipline_id,
                name=fields[index["name"]],
                Nk=float(nk) if nk else None,
                Nc=float(nc) if nc else None,
                scheme=scheme or DEFAULT_SCHEME,
            )
        except GroupMetricsError as exc:
            errors.append(RowError(lineno, None, str(exc)))
            continue
        except ValueError:
            errors.append(RowError(lineno, None, "non-numeric threshold"))
            continue
        configs[discipline_id] = config

    if errors:
        raise TableParseError(errors)
    return configs


def permissive_configs(
    discipline_ids: Iterable[str],
    scheme: WeightingScheme | None = None,
) -> dict[str, DisciplineConfig]:
    """Threshold-free configs for datasets without a disciplines file;
    every group then classifies as UNKNOWN."""
    return {
        d: DisciplineConfig(discipline_id=d, name=d, scheme=scheme or DEFAULT_SCHEME)
        for d in dict.fromkeys(discipline_ids)
    }


def discipline_ids_in_stream(stream: TextIO) -> list[str]:
    """Cheap pre-scan for the discipline ids present in a groups file."""
    header, raw_rows, _ = read_rows(stream)
    index = column_index(header, ("discipline_id",))
    col = index["discipline_id"]
    return list(
        dict.fromkeys(fields[col] for _, fields in raw_rows if len(fields) > col)
    )


EXPECTED_OUTPUTS_PER_HEAD = 4.0
OUTPUTS_PER_HEAD_SLACK = 0.10


def summarize_cohort(
    groups: GroupsTable,
    papers: Sequence[PaperRecord] | None = None,
) -> CohortSummary:
    """Per-discipline composition: group counts by size class, total FTE
    and, when papers are supplied, submitted outputs per FTE.

    Submission rules put four outputs per head into the exercise, so a
    papers-per-FTE ratio more than 10% away from 4 earns a warning.
    """
    warnings: list[str] = []
    summaries: list[DisciplineSummary] = []

    by_discipline: dict[str, list[ResearchGroup]] = {}
    for g in groups:
        by_discipline.setdefault(g.discipline_id, []).append(g)

    papers_by_group: dict[str, int] = {}
    if papers is not None:
        for p in papers:
            papers_by_group[p.group_id] = papers_by_group.get(p.group_id, 0) + 1

    for discipline_id, members in by_discipline.items():
        counts: dict[SizeClass, int] = {}
        for g in members:
            counts[g.size_class] = counts.get(g.size_class, 0) + 1
        total_fte = sum(g.N for g in members)

        papers_per_fte = None
        if papers is not None and total_fte > 0:
            n_papers = sum(papers_by_group.get(g.group_id, 0) for g in members)
            papers_per_fte = n_papers / total_fte
            expected = EXPECTED_OUTPUTS_PER_HEAD
            if abs(papers_per_fte - expected) > OUTPUTS_PER_HEAD_SLACK * expected:
                warnings.append(
                    f"{discipline_id}: outputs per FTE is {papers_per_fte:.2f}, "
                    f"expected about {expected:g}"
                )

        summaries.append(
            DisciplineSummary(
                discipline_id=discipline_id,
                total_groups=len(members),
                class_counts=counts,
                total_fte=total_fte,
                papers_per_fte=papers_per_fte,
            )
        )

    return CohortSummary(disciplines=tuple(summaries), warnings=tuple(warnings))
