"""Outcome and query-quality metrics, aggregation and report rendering."""
from __future__ import annotations

import csv
import json
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .query_lang import Query, parse_query


class EmptyGoodSet(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeRecord:
    success: bool
    length: int
    queries: tuple[Query, ...]
    good_set: frozenset[Query]
    task: str = ""

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(Query(*q) for q in self.queries))
        object.__setattr__(self, "good_set", frozenset(Query(*q) for q in self.good_set))
        if self.length < 0:
            raise ValueError("episode length must be non-negative")


@dataclass(frozen=True)
class QueryQuality:
    precision: float
    recall: float
    f1: float


def query_quality(rec: EpisodeRecord) -> QueryQuality:
    """Precision counts every issued query; recall and n_g count distinct good ones."""
    if not rec.good_set:
        raise EmptyGoodSet("query quality needs a non-empty good-query set")
    n_tot = len(rec.queries)
    if n_tot == 0:
        return QueryQuality(0.0, 0.0, 0.0)
    n_g = len(set(rec.queries) & rec.good_set)
    assert n_g <= min(n_tot, len(rec.good_set))
    # 2PR / (P + R) simplifies to 2 n_g / (n_tot + |Q_t|), which is 0 when n_g is
    # 0 and rounds once instead of four times
    return QueryQuality(n_g / n_tot, n_g / len(rec.good_set), 2 * n_g / (n_tot + len(rec.good_set)))


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    if not xs:
        return 0.0, 0.0
    return statistics.fmean(xs), statistics.pstdev(xs)


@dataclass(frozen=True)
class Report:
    episodes: int
    success_mean: float
    success_std: float
    length_mean: float
    length_std: float
    precision: float
    recall: float
    f1: float
    query_histogram: dict[int, int] = field(default_factory=dict)
    label: str = ""

    def rows(self) -> list[tuple[str, str]]:
        return [
            ("episodes", str(self.episodes)),
            ("success rate (%)", f"{100 * self.success_mean:.1f} ± {100 * self.success_std:.1f}"),
            ("episode length", f"{self.length_mean:.1f} ± {self.length_std:.1f}"),
            ("precision", f"{self.precision:.3f}"),
            ("recall", f"{self.recall:.3f}"),
            ("f1", f"{self.f1:.3f}"),
        ]

    def render(self) -> str:
        title = f"Success rate (%) on {self.label}" if self.label else "Evaluation report"
        rows = self.rows()
        width = max(len(k) for k, _ in rows)
        lines = [title, "-" * len(title)]
        lines += [f"{k:<{width}}  {v}" for k, v in rows]
        lines.append("")
        lines.append("queries per episode  episodes")
        for n, count in sorted(self.query_histogram.items()):
            lines.append(f"{n:>19}  {count}")
        return "\n".join(lines)

    def write_csv(self, summary_path: str | Path, histogram_path: str | Path | None = None):
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "episodes", "success_mean", "success_std", "length_mean", "length_std",
                        "precision", "recall", "f1"])
            w.writerow([self.label, self.episodes, self.success_mean, self.success_std, self.length_mean,
                        self.length_std, self.precision, self.recall, self.f1])
        if histogram_path is not None:
            with open(histogram_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["queries", "episodes"])
                for n, count in sorted(self.query_histogram.items()):
                    w.writerow([n, count])


def aggregate_report(records: Iterable[EpisodeRecord], label: str = "") -> Report:
    records = list(records)
    if not records:
        raise ValueError("cannot aggregate an empty record set")
    success = [float(r.success) for r in records]
    lengths = [float(r.length) for r in records]
    qualities = [query_quality(r) for r in records if r.good_set]
    s_mean, s_std = _mean_std(success)
    l_mean, l_std = _mean_std(lengths)
    hist = Counter(len(r.queries) for r in records)
    return Report(
        episodes=len(records),
        success_mean=s_mean,
        success_std=s_std,
        length_mean=l_mean,
        length_std=l_std,
        precision=_mean_std([q.precision for q in qualities])[0],
        recall=_mean_std([q.recall for q in qualities])[0],
        f1=_mean_std([q.f1 for q in qualities])[0],
        query_histogram=dict(sorted(hist.items())),
        label=label,
    )


def read_transcripts(paths: Iterable[str | Path]) -> list[EpisodeRecord]:
    """Rebuild episode records from JSON-lines transcripts.

    Queries come from ``query_text`` fields; the closing record of each
    episode carries ``good_queries`` and ``length``.
    """
    records = []
    for path in paths:
        pending: dict[int, list[Query]] = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: malformed transcript line") from exc
                ep = rec.get("episode", 0)
                queries = pending.setdefault(ep, [])
                if "query_text" in rec:
                    queries.append(parse_query(rec["query_text"]))
                if rec.get("done"):
                    good = frozenset(parse_query(q) for q in rec.get("good_queries", []))
                    records.append(EpisodeRecord(bool(rec["success"]), int(rec.get("length", rec["t"])),
                                                 tuple(pending.pop(ep)), good, rec.get("task", "")))
    return records
