from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revdistill.corpus import Corpus, Label, ReviewEntry, SplitTag
from revdistill.distill import (
    DesirednessVerdict,
    build_verdicts,
    emit_kto,
    emit_sft,
    median_consensus,
    partition,
    read_verdicts,
    render_review_prompt,
    stats,
    write_kto,
    write_sft,
    write_verdicts,
)
from revdistill.scoring import DesirednessScore
from revdistill.tokenization import ByteTokenCounter
from revdistill.util import percentage


def score(entry_id: str, backend_id: str, ds: float) -> DesirednessScore:
    return DesirednessScore(entry_id, backend_id, ppl_with=1.0, ppl_without=1.0 + ds, ds=ds)


def scores_for(entry_id: str, values: list[float]) -> list[DesirednessScore]:
    return [score(entry_id, f"b{i}", v) for i, v in enumerate(values)]


def entry(entry_id: str, **overrides) -> ReviewEntry:
    settings_ = {
        "entry_id": entry_id,
        "language": "py",
        "old_hunk": f"old code {entry_id}",
        "comment": f"comment {entry_id}",
        "new_hunk": f"new code {entry_id}",
    }
    settings_.update(overrides)
    return ReviewEntry(**settings_)


def verdict(entry_id: str, label: Label, ds: float = 1.0) -> DesirednessVerdict:
    signed = ds if label is Label.DESIRED else -abs(ds)
    return DesirednessVerdict(
        entry_id=entry_id,
        per_backend_ds=(("b0", signed),),
        consensus_ds=signed,
        verdict=label,
    )


def sort_oracle_median(values: list[float]) -> float:
    ordered = sorted(values)
    mid = len(ordered) // 2
    if len(ordered) % 2 == 1:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2


class TestMedianConsensus:
    def test_even_count_averages_middle_pair(self):
        result = median_consensus(scores_for("e", [1.0, -2.0, 3.0, 0.5]))
        assert result.consensus_ds == pytest.approx(0.75, rel=1e-15)
        assert result.verdict is Label.DESIRED

    def test_constant_votes(self):
        result = median_consensus(scores_for("e", [2, 2, 2, 2]))
        assert result.consensus_ds == 2.0
        assert result.verdict is Label.DESIRED

    def test_against_sort_oracle(self):
        values = [-1.0, -1.0, 5.0, 9.0]
        result = median_consensus(scores_for("e", values))
        assert result.consensus_ds == sort_oracle_median(values) == 2.0

    def test_zero_is_undesired(self):
        assert median_consensus(scores_for("e", [0.0])).verdict is Label.UNDESIRED
        assert median_consensus(scores_for("e", [-1.0, 1.0])).verdict is Label.UNDESIRED

    def test_just_above_zero_is_desired(self):
        assert median_consensus(scores_for("e", [1e-12])).verdict is Label.DESIRED

    def test_errors(self):
        with pytest.raises(ValueError, match="non-empty"):
            median_consensus([])
        with pytest.raises(ValueError, match="mix"):
            median_consensus([score("a", "b0", 1.0), score("z", "b1", 1.0)])
        with pytest.raises(ValueError, match="duplicate backend"):
            median_consensus([score("a", "b0", 1.0), score("a", "b0", 2.0)])

    @settings(max_examples=500)
    @given(st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=9))
    def test_median_matches_oracle(self, values):
        result = median_consensus(scores_for("e", values))
        assert result.consensus_ds == pytest.approx(sort_oracle_median(values), rel=1e-12, abs=1e-12)

    @settings(max_examples=200)
    @given(
        values=st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=9),
        seed=st.integers(min_value=0, max_value=2**16),
    )
    def test_backend_order_irrelevant(self, values, seed):
        baseline = median_consensus(scores_for("e", values))
        shuffled = scores_for("e", values)
        random.Random(seed).shuffle(shuffled)
        permuted = median_consensus(shuffled)
        assert permuted.consensus_ds == baseline.consensus_ds
        assert permuted.verdict is baseline.verdict
        assert permuted.per_backend_ds == baseline.per_backend_ds


class TestBuildVerdicts:
    def test_groups_and_sorts_by_entry_id(self):
        rows = scores_for("b", [1.0, 2.0]) + scores_for("a", [-1.0, -2.0])
        verdicts, incomplete = build_verdicts(rows)
        assert list(verdicts) == ["a", "b"]
        assert incomplete == []
        assert verdicts["a"].verdict is Label.UNDESIRED

    def test_incomplete_coverage_excluded_not_judged(self):
        rows = scores_for("full", [1.0, 2.0]) + [score("partial", "b0", 5.0)]
        verdicts, incomplete = build_verdicts(rows)
        assert list(verdicts) == ["full"]
        assert incomplete == ["partial"]

    def test_explicit_backend_set(self):
        rows = scores_for("e", [1.0, 2.0])
        verdicts, incomplete = build_verdicts(rows, expected_backends=["b0", "b1", "b2"])
        assert not verdicts
        assert incomplete == ["e"]


class TestPartition:
    def make_corpus(self, ids, unscorable=()):  # entries in given order
        entries = tuple(
            entry(i, new_hunk=None) if i in unscorable else entry(i) for i in ids
        )
        return Corpus(entries=entries, source_path="-", split_tag=SplitTag.OTHER)

    def test_three_way_split_preserves_order(self):
        corpus = self.make_corpus(["e1", "e2", "e3"])
        verdicts = {
            "e1": verdict("e1", Label.DESIRED),
            "e2": verdict("e2", Label.UNDESIRED),
            "e3": verdict("e3", Label.DESIRED),
        }
        desired, undesired, unscorable = partition(corpus, verdicts)
        assert [e.entry_id for e in desired] == ["e1", "e3"]
        assert [e.entry_id for e in undesired] == ["e2"]
        assert unscorable == []

    def test_entry_without_verdict_routed_unscorable(self):
        corpus = self.make_corpus(["e1", "e2"], unscorable={"e2"})
        desired, undesired, unscorable = partition(corpus, {"e1": verdict("e1", Label.DESIRED)})
        assert [e.entry_id for e in unscorable] == ["e2"]

    def test_unknown_verdict_id_rejected(self):
        corpus = self.make_corpus(["e1"])
        with pytest.raises(ValueError, match="zz"):
            partition(corpus, {"zz": verdict("zz", Label.DESIRED)})

    @settings(max_examples=100)
    @given(st.lists(st.sampled_from(["desired", "undesired", "none"]), min_size=1, max_size=30))
    def test_partition_then_merge_is_identity(self, assignments):
        ids = [f"e{i}" for i in range(len(assignments))]
        corpus = self.make_corpus(ids)
        verdicts = {
            eid: verdict(eid, Label(kind))
            for eid, kind in zip(ids, assignments)
            if kind != "none"
        }
        desired, undesired, unscorable = partition(corpus, verdicts)
        assert len(desired) + len(undesired) + len(unscorable) == len(corpus.entries)
        merged = sorted(
            desired + undesired + unscorable, key=lambda e: ids.index(e.entry_id)
        )
        assert tuple(merged) == corpus.entries


class TestEmitSft:
    def test_prompt_embeds_hunk_verbatim(self):
        records = emit_sft([entry("e1", old_hunk="def f():\n    pass")], truncation_limit=2048, counter=ByteTokenCounter())
        assert len(records) == 1
        assert records[0].instruction_prompt == (
            "Review the given code and provide a constructive code review comment.\n"
            "The code/(diff hunk) is: 'def f():\n    pass '"
        )
        assert records[0].target_comment == "comment e1"
        assert not records[0].truncated

    def test_empty_input_empty_output(self):
        assert emit_sft([], truncation_limit=2048, counter=ByteTokenCounter()) == []

    def test_oversized_hunk_truncated_with_flag(self):
        big = entry("e1", old_hunk="A" * 5000)
        records = emit_sft([big], truncation_limit=2048, counter=ByteTokenCounter())
        assert records[0].truncated
        assert records[0].hunk == "A" * 2048
        assert records[0].instruction_prompt == render_review_prompt("A" * 2048)

    def test_file_fields(self, tmp_path):
        path = tmp_path / "sft.jsonl"
        write_sft(path, emit_sft([entry("e1")], truncation_limit=2048, counter=ByteTokenCounter()))
        record = json.loads(path.read_text().splitlines()[0])
        assert list(record) == ["instruction", "input", "output"]
        assert record["input"] == "old code e1"
        assert record["output"] == "comment e1"
        # the instruction frame re-renders into the full prompt
        assert record["instruction"].format(record["input"]) == render_review_prompt("old code e1")


class TestEmitKto:
    def test_counts_and_labels_mirror_verdicts(self):
        entries = [entry(f"e{i}") for i in range(5)]
        labels = [Label.DESIRED, Label.DESIRED, Label.UNDESIRED, Label.UNDESIRED, Label.UNDESIRED]
        verdicts = {e.entry_id: verdict(e.entry_id, lab) for e, lab in zip(entries, labels)}
        records = emit_kto(entries, verdicts, truncation_limit=2048, counter=ByteTokenCounter())
        assert len(records) == 5
        assert [r.label for r in records] == labels
        assert sum(1 for r in records if r.label is Label.DESIRED) == 2

    def test_missing_verdict_rejected(self):
        with pytest.raises(ValueError, match="e0"):
            emit_kto([entry("e0")], {}, truncation_limit=2048, counter=ByteTokenCounter())

    def test_label_counts_feed_lambda_constraint(self):
        # cross-module consistency: emitted label counts drive the weight check
        from revdistill.kto import KTOConfig, check_lambda_constraint

        entries = [entry(f"e{i}") for i in range(10)]
        labels = [Label.DESIRED if i < 4 else Label.UNDESIRED for i in range(10)]
        verdicts = {e.entry_id: verdict(e.entry_id, lab) for e, lab in zip(entries, labels)}
        records = emit_kto(entries, verdicts, truncation_limit=2048, counter=ByteTokenCounter())
        n_desired = sum(1 for r in records if r.label is Label.DESIRED)
        n_undesired = len(records) - n_desired
        check = check_lambda_constraint(KTOConfig(), n_desired, n_undesired)
        assert check.ratio == pytest.approx(1.7 * 4 / 6, rel=1e-12)
        assert check.ok  # 1.1333 sits inside [1, 4/3]

    def test_file_fields(self, tmp_path):
        verdicts = {"e1": verdict("e1", Label.DESIRED)}
        path = tmp_path / "kto.jsonl"
        write_kto(path, emit_kto([entry("e1")], verdicts, truncation_limit=2048, counter=ByteTokenCounter()))
        record = json.loads(path.read_text().splitlines()[0])
        assert list(record) == ["prompt", "completion", "label"]
        assert record["label"] == "desired"
        assert record["completion"] == "comment e1"
        assert record["prompt"] == render_review_prompt("old code e1")


class TestStats:
    def test_percentage_helper_on_published_counts(self):
        assert percentage(64934, 150406) == 43.17
        assert percentage(85472, 150406) == 56.83
        assert percentage(5727, 13103) == 43.71
        assert percentage(7376, 13103) == 56.29

    def test_counts_and_percentages(self):
        verdicts = {}
        for i in range(3):
            verdicts[f"d{i}"] = verdict(f"d{i}", Label.DESIRED)
        for i in range(5):
            verdicts[f"u{i}"] = verdict(f"u{i}", Label.UNDESIRED)
        result = stats(verdicts, unscorable=2)
        assert (result.total, result.desired, result.undesired, result.unscorable) == (10, 3, 5, 2)
        assert result.desired_pct == 37.5
        assert result.undesired_pct == 62.5

    def test_zero_scored_reports_undefined_not_zero(self):
        result = stats({}, unscorable=4)
        assert result.desired_pct is None
        assert result.undesired_pct is None
        assert "n/a" in result.table()


class TestVerdictFile:
    def test_round_trip(self, tmp_path):
        rows = [
            DesirednessVerdict("e1", (("a", 1.5), ("b", -0.5)), 0.5, Label.DESIRED),
            DesirednessVerdict("e2", (("a", -1.0), ("b", 0.0)), -0.5, Label.UNDESIRED),
        ]
        path = tmp_path / "verdicts.jsonl"
        assert write_verdicts(path, rows) == 2
        assert list(read_verdicts(path).values()) == rows

    def test_duplicate_rejected(self, tmp_path):
        rows = [verdict("e1", Label.DESIRED)]
        path = tmp_path / "verdicts.jsonl"
        write_verdicts(path, rows * 2)
        with pytest.raises(Exception, match="duplicate"):
            read_verdicts(path)
