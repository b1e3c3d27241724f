import csv
import json
import math
import random

import pytest

from refexpgen.backends import TimedDescription
from refexpgen.stats import (
    EmptyCorpus,
    NonPositiveLatency,
    build_report,
    length_stats,
    render_histogram_figure,
    report_paths,
    throughput_estimate,
    word_count_histogram,
    write_histogram_csv,
    write_report_json,
)


def td(word_count, elapsed=1.0, backend="m1"):
    return TimedDescription(
        backend_name=backend, text=" ".join(["w"] * word_count), elapsed=elapsed,
        word_count=word_count,
    )


class TestLengthStats:
    def test_constant_lengths(self):
        stats = length_stats([td(10), td(10), td(10)])
        assert stats["m1"].mean_length == 10
        assert stats["m1"].length_variance == 0
        assert stats["m1"].count == 3

    def test_population_variance(self):
        stats = length_stats([td(8), td(12)])
        assert stats["m1"].mean_length == 10
        assert stats["m1"].length_variance == 4  # ((8-10)^2 + (12-10)^2) / 2

    def test_mean_time(self):
        stats = length_stats([td(5, elapsed=1.0), td(5, elapsed=3.0)])
        assert stats["m1"].mean_time == 2.0

    def test_grouped_by_backend(self):
        stats = length_stats([td(4, backend="a"), td(8, backend="b"), td(6, backend="a")])
        assert stats["a"].mean_length == 5
        assert stats["a"].count == 2
        assert stats["b"].mean_length == 8

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            length_stats([])

    def test_permutation_invariant(self):
        rng = random.Random(3)
        descriptions = [td(rng.randint(1, 40), rng.uniform(0.1, 5)) for _ in range(50)]
        base = length_stats(descriptions)["m1"]
        shuffled = descriptions[:]
        rng.shuffle(shuffled)
        other = length_stats(shuffled)["m1"]
        assert math.isclose(base.mean_length, other.mean_length, abs_tol=1e-12)
        assert math.isclose(base.length_variance, other.length_variance, abs_tol=1e-9)

    def test_variance_zero_iff_constant(self):
        assert length_stats([td(7)] * 5)["m1"].length_variance == 0
        assert length_stats([td(7), td(8)])["m1"].length_variance > 0


class TestWordCountHistogram:
    def test_hand_binned(self):
        hist = word_count_histogram([td(24), td(25), td(26)], bin_width=2)
        assert hist.bins == {24: 2, 26: 1}

    def test_empty_corpus_empty_bins(self):
        hist = word_count_histogram([], bin_width=2)
        assert hist.bins == {}
        assert hist.total() == 0

    def test_width_one_bins_per_distinct_count(self):
        hist = word_count_histogram([td(3), td(5), td(5), td(9)], bin_width=1)
        assert hist.bins == {3: 1, 5: 2, 9: 1}

    def test_counts_sum_to_corpus_size(self):
        rng = random.Random(9)
        corpus = [td(rng.randint(0, 60)) for _ in range(137)]
        for width in (1, 2, 5, 7):
            assert word_count_histogram(corpus, width).total() == 137

    def test_invalid_width(self):
        with pytest.raises(ValueError):
            word_count_histogram([], 0)


class TestThroughputEstimate:
    def test_reference_latencies(self):
        # 86400 / (3.47 + 3.81 + 4.71 + 5.01) = 86400 / 17.0 -> 5082
        assert throughput_estimate([3.47, 3.81, 4.71], 5.01) == 5082

    def test_one_item_per_day(self):
        assert throughput_estimate([86400.0], 0.0) == 1

    def test_boundary_whole_day(self):
        assert throughput_estimate([86399.0], 1.0) == 1

    def test_simple_arithmetic(self):
        assert throughput_estimate([1.0], 1.0) == 43200

    def test_monotonically_decreasing(self):
        base = throughput_estimate([2.0, 3.0], 1.0)
        assert throughput_estimate([2.5, 3.0], 1.0) <= base
        assert throughput_estimate([2.0, 3.0], 1.5) <= base

    def test_non_positive_latency(self):
        with pytest.raises(NonPositiveLatency):
            throughput_estimate([0.0], 1.0)
        with pytest.raises(NonPositiveLatency):
            throughput_estimate([1.0], -2.0)
        with pytest.raises(NonPositiveLatency):
            throughput_estimate([], 1.0)


class TestReportOutputs:
    def _rows(self):
        return [
            td(10, 1.0, "m1"), td(12, 2.0, "m1"),
            td(20, 3.0, "m2"), td(30, 5.0, "m2"),
        ]

    def test_report_structure(self):
        report = build_report(self._rows(), [td(8, 4.0, "judge")], backend_order=["m1", "m2"])
        assert report["corpus_size"] == 4
        names = [b["backend_name"] for b in report["backends"]]
        assert names == ["m1", "m2"]
        assert report["merger"]["backend_name"] == "judge"
        assert report["merger"]["mean_time"] == 4.0
        # 86400 // (1.5 + 4.0 + 4.0) = 9094
        assert report["throughput_items_per_day"] == int(86400 // 9.5)

    def test_empty_report(self):
        report = build_report([])
        assert report["corpus_size"] == 0
        assert report["backends"] == []
        assert report["throughput_items_per_day"] is None

    def test_files_written(self, tmp_path):
        report = build_report(self._rows(), backend_order=["m1", "m2"])
        paths = report_paths(tmp_path / "dataset.jsonl")
        write_report_json(report, paths["stats"])
        write_histogram_csv(report, paths["histogram_csv"])
        render_histogram_figure(report, paths["histogram_png"])

        loaded = json.loads(paths["stats"].read_text())
        assert loaded == report

        with open(paths["histogram_csv"]) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["bin_lower", "count"]
        assert sum(int(r[1]) for r in rows[1:]) == 4

        header = paths["histogram_png"].read_bytes()[:8]
        assert header == b"\x89PNG\r\n\x1a\n"

    def test_histogram_bins_listed_in_numeric_order(self):
        report = build_report([td(4), td(30), td(8)])
        lowers = [int(k) for k in report["histogram"]["bins"]]
        assert lowers == sorted(lowers)

    def test_figure_renders_empty_corpus(self, tmp_path):
        report = build_report([])
        out = tmp_path / "empty.png"
        render_histogram_figure(report, out)
        assert out.exists()
