"""Corpus statistics: description lengths, timing, histogram, throughput.

The report path emits three files: a JSON report, a plot-ready CSV of
histogram bins, and a rendered histogram figure (PNG via matplotlib's Agg
canvas, no pyplot state).
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backends import TimedDescription


class EmptyCorpus(ValueError):
    """Statistics were requested over an empty description corpus."""


class NonPositiveLatency(ValueError):
    """Throughput estimation needs strictly positive latencies."""


@dataclass(frozen=True)
class BackendStats:
    backend_name: str
    mean_length: float
    length_variance: float
    mean_time: float
    count: int


@dataclass(frozen=True)
class Histogram:
    """Word-count histogram over half-open bins [k*w, (k+1)*w)."""

    bin_width: int
    bins: dict[int, int]

    def total(self) -> int:
        return sum(self.bins.values())


def length_stats(descriptions: Sequence[TimedDescription]) -> dict[str, BackendStats]:
    """Per-backend mean length, population variance of length, mean time."""
    if not descriptions:
        raise EmptyCorpus("no descriptions to aggregate")
    by_backend: dict[str, list[TimedDescription]] = {}
    for d in descriptions:
        by_backend.setdefault(d.backend_name, []).append(d)

    out: dict[str, BackendStats] = {}
    for name, group in by_backend.items():
        counts = [d.word_count for d in group]
        mean = statistics.fmean(counts)
        out[name] = BackendStats(
            backend_name=name,
            mean_length=mean,
            length_variance=statistics.pvariance(counts, mu=mean),
            mean_time=statistics.fmean(d.elapsed for d in group),
            count=len(group),
        )
    return out


def word_count_histogram(
    descriptions: Sequence[TimedDescription], bin_width: int = 2
) -> Histogram:
    if bin_width < 1:
        raise ValueError(f"bin_width must be >= 1, got {bin_width!r}")
    bins: dict[int, int] = {}
    for d in descriptions:
        lower = (d.word_count // bin_width) * bin_width
        bins[lower] = bins.get(lower, 0) + 1
    return Histogram(bin_width=bin_width, bins=dict(sorted(bins.items())))


def throughput_estimate(per_call_means: Sequence[float], merge_mean: float) -> int:
    """Items per day in the sequential single-thread model: every describer
    call plus one merge call per item, back to back.

    ``merge_mean`` may be zero (no merge step); describer means must be
    positive.
    """
    if not per_call_means or any(m <= 0 for m in per_call_means) or merge_mean < 0:
        raise NonPositiveLatency("describer means must be > 0 and merge mean >= 0")
    seconds_per_item = sum(per_call_means) + merge_mean
    return int(86400.0 // seconds_per_item)


def build_report(
    describer_descriptions: Sequence[TimedDescription],
    merger_descriptions: Sequence[TimedDescription] = (),
    *,
    bin_width: int = 2,
    backend_order: Sequence[str] | None = None,
) -> dict:
    """Assemble the JSON-ready stats report.

    ``backend_order`` pins the per-backend row order (config order); unknown
    or missing names fall back to alphabetical.
    """
    hist = word_count_histogram(describer_descriptions, bin_width)
    report: dict = {
        "corpus_size": len(describer_descriptions),
        "backends": [],
        "merger": None,
        "histogram": {
            "bin_width": hist.bin_width,
            "bins": {str(k): v for k, v in hist.bins.items()},
        },
        "throughput_items_per_day": None,
    }
    if not describer_descriptions:
        return report

    per_backend = length_stats(describer_descriptions)
    names = list(backend_order or [])
    names += sorted(n for n in per_backend if n not in names)
    ordered = [per_backend[n] for n in names if n in per_backend]
    report["backends"] = [
        {
            "backend_name": s.backend_name,
            "mean_length": s.mean_length,
            "length_variance": s.length_variance,
            "mean_time": s.mean_time,
            "count": s.count,
        }
        for s in ordered
    ]

    if merger_descriptions:
        merge_mean = statistics.fmean(d.elapsed for d in merger_descriptions)
        report["merger"] = {
            "backend_name": merger_descriptions[0].backend_name,
            "mean_time": merge_mean,
            "count": len(merger_descriptions),
        }
        report["throughput_items_per_day"] = throughput_estimate(
            [s.mean_time for s in ordered], merge_mean
        )
    return report


def write_report_json(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, ensure_ascii=False) + "\n", "utf-8")


def write_histogram_csv(report: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_lower", "count"])
        for lower, count in report["histogram"]["bins"].items():
            writer.writerow([lower, count])


def render_histogram_figure(report: dict, path: str | Path) -> None:
    """Render the word-count histogram to an image file (PNG by suffix)."""
    from matplotlib.figure import Figure

    bin_width = report["histogram"]["bin_width"]
    bins = {int(k): v for k, v in report["histogram"]["bins"].items()}
    fig = Figure(figsize=(7.0, 4.0))
    ax = fig.subplots()
    if bins:
        lowers = sorted(bins)
        ax.bar(
            [lo + bin_width / 2.0 for lo in lowers],
            [bins[lo] for lo in lowers],
            width=bin_width * 0.9,
            color="#4878cf",
            edgecolor="black",
            linewidth=0.5,
        )
    ax.set_xlabel("words per description")
    ax.set_ylabel("descriptions")
    ax.set_title("Description word-count distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def report_paths(output_path: str | Path) -> dict[str, Path]:
    """Derived report file locations next to a dataset output path."""
    out = Path(output_path)
    stem = out.with_suffix("")
    return {
        "stats": stem.with_name(stem.name + ".stats.json"),
        "histogram_csv": stem.with_name(stem.name + ".histogram.csv"),
        "histogram_png": stem.with_name(stem.name + ".histogram.png"),
    }
