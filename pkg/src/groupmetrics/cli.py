"""Command-line pipeline: validate, score, correlate, rank, synth, report.

Every command is deterministic for fixed inputs and seed; machine
outputs use the same delimiter format the parsers read, so they can be
re-ingested without loss.  Exit status is 0 iff the run produced no
errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from . import ingest, metrics, stats, synth
from .ingest import GroupsTable, TableParseError, format_value
from .model import (
    DEFAULT_SCHEME,
    GroupMetricsError,
    SizeClass,
    WeightingScheme,
)
from .stats import Pairing, SignificanceMethod

logger = logging.getLogger(__name__)

RANKING_MEASURES = ("s1", "i", "S1", "I")

RANKING_CAVEAT = (
    "Caution: per-head measures (s1, i) carry strong group-size effects and the\n"
    "citation-based measure is a weak proxy for peer-reviewed quality, so these\n"
    "listings are not a sound basis for ranking or comparing groups on their own."
)


class Command(str, Enum):
    VALIDATE = "validate"
    SCORE = "score"
    CORRELATE = "correlate"
    RANK = "rank"
    SYNTH = "synth"
    REPORT = "report"


@dataclass(frozen=True)
class RunConfig:
    """Resolved invocation: one command plus every input it needs."""

    command: Command
    groups: Path | None = None
    papers: Path | None = None
    baselines: Path | None = None
    disciplines: Path | None = None
    synth_config: Path | None = None
    out: Path | None = None
    alpha: float = stats.DEFAULT_ALPHA
    scheme: WeightingScheme = DEFAULT_SCHEME
    attribution: metrics.Attribution = metrics.Attribution.UNWEIGHTED
    method: SignificanceMethod = SignificanceMethod.T_APPROX
    seed: int | None = None
    discipline: str | None = None
    normalized_quality: bool = False

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        return cls(
            command=Command(args.command),
            groups=_maybe_path(getattr(args, "groups", None)),
            papers=_maybe_path(getattr(args, "papers", None)),
            baselines=_maybe_path(getattr(args, "baselines", None)),
            disciplines=_maybe_path(getattr(args, "disciplines", None)),
            synth_config=_maybe_path(getattr(args, "synth_config", None)),
            out=_maybe_path(getattr(args, "out", None)),
            alpha=getattr(args, "alpha", stats.DEFAULT_ALPHA),
            scheme=WeightingScheme.from_string(getattr(args, "scheme", "7,3,1,0,0")),
            attribution=metrics.Attribution(getattr(args, "attribution", "unweighted")),
            method=SignificanceMethod(getattr(args, "method", "tapprox")),
            seed=getattr(args, "seed", None),
            discipline=getattr(args, "discipline", None),
            normalized_quality=getattr(args, "normalized_quality", False),
        )


def _maybe_path(value) -> Path | None:
    return Path(value) if value is not None else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupmetrics",
        description=(
            "Research-group assessment pipeline: peer-review quality scores, "
            "normalised citation impact, specific and absolute measures, "
            "rank/correlation analysis, and a synthetic-cohort simulator."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_flags(p: argparse.ArgumentParser, groups_required: bool = True):
        p.add_argument("--groups", required=groups_required, help="groups table path")
        p.add_argument("--papers", help="papers table path")
        p.add_argument("--baselines", help="citation baselines table path")
        p.add_argument("--disciplines", help="discipline config table path")
        p.add_argument(
            "--scheme",
            default="7,3,1,0,0",
            help="quality weights w4,w3,w2,w1,wU (default 7,3,1,0,0)",
        )
        p.add_argument(
            "--attribution",
            choices=[a.value for a in metrics.Attribution],
            default="unweighted",
            help="how author shares weight the group impact mean",
        )

    def add_out_flag(p: argparse.ArgumentParser):
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("validate", help="parse and validate datasets, print a summary")
    add_data_flags(p)

    p = sub.add_parser("score", help="compute group scores and export them")
    add_data_flags(p)
    add_out_flag(p)

    p = sub.add_parser("correlate", help="correlation tables per discipline and subgroup")
    add_data_flags(p)
    add_out_flag(p)
    p.add_argument("--alpha", type=float, default=stats.DEFAULT_ALPHA)
    p.add_argument(
        "--method",
        choices=[m.value for m in SignificanceMethod],
        default="tapprox",
        help="significance test",
    )
    p.add_argument("--seed", type=int, default=0, help="seed for sampled permutations")

    p = sub.add_parser("rank", help="ranked listings per discipline and measure")
    add_data_flags(p)
    add_out_flag(p)
    p.add_argument(
        "--normalized-quality",
        action="store_true",
        help="report quality on the 0-100 scale (s1 / max weight)",
    )

    p = sub.add_parser("synth", help="run the synthetic inflation experiment")
    p.add_argument("--synth-config", required=True, help="key = value config file")
    add_out_flag(p)
    p.add_argument("--seed", type=int, help="override the config file seed")

    p = sub.add_parser("report", help="scatter data files per discipline")
    add_data_flags(p)
    add_out_flag(p)
    p.add_argument("--discipline", help="only emit files for this discipline id")
    p.add_argument(
        "--normalized-quality",
        action="store_true",
        help="report quality on the 0-100 scale (s1 / max weight)",
    )

    return parser


def load_datasets(config: RunConfig):
    """Parse every dataset the invocation names.

    Without a disciplines file, threshold-free configs are synthesized
    from the discipline ids present, so every group classifies UNKNOWN.
    """
    assert config.groups is not None
    if config.disciplines is not None:
        with open(config.disciplines, encoding="utf-8") as fh:
            discipline_configs = ingest.parse_disciplines_table(fh, scheme=config.scheme)
    else:
        with open(config.groups, encoding="utf-8") as fh:
            seen = ingest.discipline_ids_in_stream(fh)
        discipline_configs = ingest.permissive_configs(seen, scheme=config.scheme)

    with open(config.groups, encoding="utf-8") as fh:
        groups = ingest.parse_groups_table(fh, discipline_configs, path=str(config.groups))

    papers = None
    if config.papers is not None:
        with open(config.papers, encoding="utf-8") as fh:
            papers = ingest.parse_papers_table(fh)

    baselines = None
    if config.baselines is not None:
        with open(config.baselines, encoding="utf-8") as fh:
            baselines = ingest.parse_baselines_table(fh)

    return groups, papers, baselines, discipline_configs


def _score(config: RunConfig) -> list[metrics.GroupScores]:
    groups, papers, baselines, _ = load_datasets(config)
    return metrics.score_cohort(
        groups,
        papers=papers,
        baselines=baselines,
        scheme=config.scheme,
        attribution=config.attribution,
    )


def _ensure_out(config: RunConfig) -> Path:
    assert config.out is not None
    config.out.mkdir(parents=True, exist_ok=True)
    return config.out


def _write_text(path: Path, content: str) -> None:
    path.write_text(content, encoding="utf-8")


def _write_table(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        ingest.write_rows(fh, header, rows)


def run_validate(config: RunConfig) -> int:
    groups, papers, _, _ = load_datasets(config)
    summary = ingest.summarize_cohort(groups, papers)
    if not groups.rows:
        print("0 groups")
        return 0
    for disc in summary.disciplines:
        line = disc.describe()
        if disc.papers_per_fte is not None:
            line += f" ({disc.papers_per_fte:.2f} outputs per FTE)"
        print(line)
    for warning in summary.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def run_score(config: RunConfig) -> int:
    scores = _score(config)
    out = _ensure_out(config)
    with open(out / "scores.csv", "w", encoding="utf-8", newline="") as fh:
        metrics.write_scores_table(scores, fh)
    print(f"wrote {len(scores)} score rows to {out / 'scores.csv'}")
    return 0


def run_correlate(config: RunConfig) -> int:
    scores = _score(config)
    out = _ensure_out(config)
    seed = config.seed if config.seed is not None else 0
    for pairing, stem in ((Pairing.SPECIFIC, "correlations_specific"),
                          (Pairing.ABSOLUTE, "correlations_absolute")):
        report = stats.correlation_suite(
            scores, pairing, alpha=config.alpha, method=config.method, seed=seed
        )
        _write_table(out / f"{stem}.csv", stats.REPORT_COLUMNS, stats.report_rows(report))
        _write_text(out / f"{stem}.txt", stats.render_report(report))
    print(f"wrote correlation tables to {out}")
    return 0


def _rank_listing(scores: list[metrics.GroupScores], measure: str) -> list[tuple[float, float, str]]:
    """(rank, value, group_id) triples sorted ascending by value."""
    values = [getattr(s, measure) for s in scores]
    ranks = stats.average_ranks(values)
    triples = [(float(ranks[idx]), values[idx], scores[idx].group_id) for idx in range(len(scores))]
    triples.sort(key=lambda t: (t[1], t[2]))
    return triples


def run_rank(config: RunConfig) -> int:
    scores = _score(config)
    out = _ensure_out(config)
    divisor = max(config.scheme.weights()) if config.normalized_quality else 1.0

    by_discipline: dict[str, list[metrics.GroupScores]] = {}
    for s in scores:
        by_discipline.setdefault(s.discipline_id, []).append(s)

    for discipline_id, members in by_discipline.items():
        header = ["group_id", "N"]
        for measure in RANKING_MEASURES:
            header += [measure, f"rank_{measure}"]
        ranks = {m: stats.average_ranks([getattr(s, m) for s in members]) for m in RANKING_MEASURES}
        rows = []
        for idx, s in enumerate(members):
            row = [s.group_id, format_value(s.N)]
            for measure in RANKING_MEASURES:
                value = getattr(s, measure)
                if measure in ("s1", "S1"):
                    value = value / divisor
                row += [format_value(value), format_value(float(ranks[measure][idx]))]
            rows.append(row)
        _write_table(out / f"rankings_{discipline_id}.csv", header, rows)

        lines = [RANKING_CAVEAT, ""]
        for measure in RANKING_MEASURES:
            lines.append(f"ranked by {measure} (ascending):")
            for rank, value, group_id in _rank_listing(members, measure):
                shown = value / divisor if measure in ("s1", "S1") else value
                lines.append(f"  {rank:6.1f}  {group_id:<16} {shown:.3f}")
            lines.append("")
        _write_text(out / f"rankings_{discipline_id}.txt", "\n".join(lines))

    print(f"wrote ranking files for {len(by_discipline)} discipline(s) to {out}")
    return 0


def run_synth(config: RunConfig) -> int:
    assert config.synth_config is not None
    with open(config.synth_config, encoding="utf-8") as fh:
        synth_config, n_seeds = synth.load_synth_run(fh)
    if config.seed is not None:
        from dataclasses import replace

        synth_config = replace(synth_config, seed=config.seed)

    results = synth.inflation_experiment(synth_config, n_seeds)
    out = _ensure_out(config)

    rows = [
        [
            str(r.seed),
            format_value(r.r_specific),
            format_value(r.r_absolute),
            format_value(r.rho_specific),
            format_value(r.rho_absolute),
            format_value(r.gap),
        ]
        for r in results
    ]
    _write_table(out / "inflation_results.csv", synth.RESULTS_COLUMNS, rows)

    fraction = synth.positive_gap_fraction(results)
    median = synth.median_gap(results)
    aggregate = (
        f"n_seeds = {len(results)}\n"
        f"median_gap = {format_value(median)}\n"
        f"positive_gap_fraction = {format_value(fraction)}\n"
    )
    _write_text(out / "inflation_summary.txt", aggregate)
    print(aggregate, end="")
    return 0


def run_report(config: RunConfig) -> int:
    scores = _score(config)
    out = _ensure_out(config)
    divisor = max(config.scheme.weights()) if config.normalized_quality else 1.0

    if config.discipline is not None:
        discipline_ids = [config.discipline]
    else:
        discipline_ids = list(dict.fromkeys(s.discipline_id for s in scores))

    for discipline_id in discipline_ids:
        members = [s for s in scores if s.discipline_id == discipline_id]
        specific_rows = [
            [s.group_id, format_value(s.s1 / divisor), format_value(s.i), s.size_class.value]
            for s in members
        ]
        absolute_rows = [
            [s.group_id, format_value(s.S1 / divisor), format_value(s.I), s.size_class.value]
            for s in members
        ]
        _write_table(
            out / f"scatter_specific_{discipline_id}.csv",
            ("group_id", "s1", "i", "size_class"),
            specific_rows,
        )
        _write_table(
            out / f"scatter_absolute_{discipline_id}.csv",
            ("group_id", "S1", "I", "size_class"),
            absolute_rows,
        )
    print(f"wrote scatter files for {len(discipline_ids)} discipline(s) to {out}")
    return 0


_RUNNERS = {
    Command.VALIDATE: run_validate,
    Command.SCORE: run_score,
    Command.CORRELATE: run_correlate,
    Command.RANK: run_rank,
    Command.SYNTH: run_synth,
    Command.REPORT: run_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = RunConfig.from_args(args)
        return _RUNNERS[config.command](config)
    except TableParseError as exc:
        for row_error in exc.errors:
            print(f"error: {row_error}", file=sys.stderr)
        return 1
    except GroupMetricsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
