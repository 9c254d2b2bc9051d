from __future__ import annotations

import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revdistill import backends as backends_module
from revdistill.corpus import Label, ReviewEntry
from revdistill.errors import JudgeParseError, UnscorableEntryError
from revdistill.evalmetrics import (
    ChiSquaredResult,
    ConfusionCounts,
    bleu4,
    bleu4_corpus,
    bleu_tokenize,
    chi_squared_2x2,
    confusion,
    llm_judge,
    metrics,
    parse_judgment,
    render_judge_prompt,
    ten_line_rule,
)

# published chi-squared(df=1) tail values used as independent oracles
CHI2_SF_20 = 7.744216431044088e-06
CHI2_CRIT_95 = 3.841458820694124
CHI2_CRIT_99 = 6.634896601021213


def entry(old: str, new: str | None, comment: str = "c", entry_id: str = "e") -> ReviewEntry:
    return ReviewEntry(entry_id=entry_id, language="", old_hunk=old, comment=comment, new_hunk=new)


def manual_bleu4(candidate_tokens: list[str], reference_tokens: list[str]) -> float:
    """Longhand oracle: explicit n-gram tables, clipping, smoothing, brevity penalty."""
    if not candidate_tokens:
        return 0.0
    precisions = []
    for n in (1, 2, 3, 4):
        cand_grams = [tuple(candidate_tokens[i : i + n]) for i in range(len(candidate_tokens) - n + 1)]
        ref_grams = [tuple(reference_tokens[i : i + n]) for i in range(len(reference_tokens) - n + 1)]
        ref_table = Counter(ref_grams)
        matches = 0
        for gram, count in Counter(cand_grams).items():
            matches += min(count, ref_table.get(gram, 0))
        if matches == 0:
            if n == 1:
                return 0.0
            precisions.append(1.0 / (len(cand_grams) + 1))
        else:
            precisions.append(matches / len(cand_grams))
    geo = (precisions[0] * precisions[1] * precisions[2] * precisions[3]) ** 0.25
    c, r = len(candidate_tokens), len(reference_tokens)
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return bp * geo


class TestConfusion:
    def test_all_correct(self):
        labels = {f"d{i}": Label.DESIRED for i in range(6)} | {f"u{i}": Label.UNDESIRED for i in range(4)}
        counts = confusion(dict(labels), labels)
        assert (counts.tp, counts.tn, counts.fp, counts.fn) == (6, 4, 0, 0)

    def test_all_flipped(self):
        labels = {f"d{i}": Label.DESIRED for i in range(6)} | {f"u{i}": Label.UNDESIRED for i in range(4)}
        flipped = {
            k: Label.UNDESIRED if v is Label.DESIRED else Label.DESIRED for k, v in labels.items()
        }
        counts = confusion(flipped, labels)
        assert (counts.tp, counts.tn) == (0, 0)
        assert (counts.fp, counts.fn) == (4, 6)

    def test_missing_verdict_rejected(self):
        with pytest.raises(ValueError, match="x1"):
            confusion({}, {"x1": Label.DESIRED})

    def test_random_case_matches_pairwise_oracle(self):
        rng = random.Random(3)
        ids = [f"e{i}" for i in range(200)]
        labels = {i: rng.choice(list(Label)) for i in ids}
        verdicts = {i: rng.choice(list(Label)) for i in ids}
        counts = confusion(verdicts, labels)
        tp = sum(1 for i in ids if labels[i] is Label.DESIRED and verdicts[i] is Label.DESIRED)
        fn = sum(1 for i in ids if labels[i] is Label.DESIRED and verdicts[i] is Label.UNDESIRED)
        fp = sum(1 for i in ids if labels[i] is Label.UNDESIRED and verdicts[i] is Label.DESIRED)
        tn = sum(1 for i in ids if labels[i] is Label.UNDESIRED and verdicts[i] is Label.UNDESIRED)
        assert (counts.tp, counts.fp, counts.fn, counts.tn) == (tp, fp, fn, tn)

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionCounts(tp=-1, fp=0, fn=0, tn=0)


class TestMetrics:
    def test_hand_case(self):
        report = metrics(ConfusionCounts(tp=3, fp=1, fn=2, tn=4))
        assert report.precision == pytest.approx(0.75)
        assert report.recall == pytest.approx(0.60)
        assert report.accuracy == pytest.approx(0.70)
        assert report.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35, rel=1e-12)
        assert report.percentages() == {
            "accuracy": 70.00,
            "precision": 75.00,
            "recall": 60.00,
            "f1": 66.67,
        }

    def test_perfect(self):
        report = metrics(ConfusionCounts(tp=5, fp=0, fn=0, tn=5))
        assert (report.accuracy, report.precision, report.recall, report.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_zero_denominator_reports_none_not_zero(self):
        report = metrics(ConfusionCounts(tp=0, fp=0, fn=2, tn=4))
        assert report.precision is None
        assert report.f1 is None
        assert report.recall == 0.0
        assert "n/a" in report.table()

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            metrics(ConfusionCounts(0, 0, 0, 0))

    @settings(max_examples=300)
    @given(
        tp=st.integers(min_value=0, max_value=50),
        fp=st.integers(min_value=0, max_value=50),
        fn=st.integers(min_value=0, max_value=50),
        tn=st.integers(min_value=0, max_value=50),
    )
    def test_accuracy_exact_and_f1_bounds(self, tp, fp, fn, tn):
        counts = ConfusionCounts(tp, fp, fn, tn)
        if counts.total == 0:
            return
        report = metrics(counts)
        assert report.accuracy == (tp + tn) / counts.total
        if report.f1 is not None and report.precision is not None and report.recall is not None:
            assert 0.0 <= report.f1 <= max(report.precision, report.recall) + 1e-15


class TestTenLineRule:
    def test_changed_fix_is_desired(self):
        assert ten_line_rule(entry("a = 1", "a = 2")) is Label.DESIRED

    def test_identical_fix_is_undesired(self):
        assert ten_line_rule(entry("a = 1", "a = 1")) is Label.UNDESIRED

    def test_absent_fix_is_undesired(self):
        assert ten_line_rule(entry("a = 1", None)) is Label.UNDESIRED

    def test_trailing_whitespace_only_change_is_undesired(self):
        assert ten_line_rule(entry("a = 1\nb = 2", "a = 1  \nb = 2\n\n")) is Label.UNDESIRED


class TestLlmJudge:
    def test_parse_true_false_variants(self):
        assert parse_judgment("True") is Label.DESIRED
        assert parse_judgment("false.") is Label.UNDESIRED
        assert parse_judgment("  TRUE!") is Label.DESIRED
        assert parse_judgment("False, because...") is Label.UNDESIRED

    def test_parse_rejects_open_ended_output(self):
        with pytest.raises(JudgeParseError):
            parse_judgment("It depends")
        with pytest.raises(JudgeParseError):
            parse_judgment("")
        with pytest.raises(JudgeParseError):
            parse_judgment("Truthful")

    def test_prompt_contains_all_three_blocks(self):
        prompt = render_judge_prompt("OLD", "NEW", "COMMENT")
        assert "```original code\nOLD\n```" in prompt
        assert "```modified code\nNEW\n```" in prompt
        assert "```review comment\nCOMMENT\n```" in prompt
        assert prompt.startswith("Your task is to determine whether the changes")

    def test_judge_uses_greedy_generation(self, monkeypatch, ref_backend):
        calls = {}

        def fake_generate(cfg, prompt, *, temperature, max_tokens):
            calls["temperature"] = temperature
            return "True"

        monkeypatch.setattr(backends_module, "generate", fake_generate)
        assert llm_judge(entry("a", "b"), ref_backend) is Label.DESIRED
        assert calls["temperature"] == 0.0

    def test_judge_requires_fix(self, ref_backend):
        with pytest.raises(UnscorableEntryError):
            llm_judge(entry("a", None), ref_backend)


class TestBleu:
    def test_identity_is_one(self):
        assert bleu4("The cat sat down.", "The cat sat down.") == pytest.approx(1.0, rel=1e-12)

    def test_disjoint_vocab_is_zero(self):
        assert bleu4("alpha beta", "gamma delta") == 0.0

    def test_golden_fixture_matches_manual_oracle(self):
        # frozen before implementation: p1..p3 = 1, p4 smoothed to 1, bp = exp(1 - 4/3)
        golden = math.exp(-1.0 / 3.0)
        got = bleu4("the cat sat", "the cat sat down")
        assert got == pytest.approx(golden, rel=1e-9)
        oracle = manual_bleu4(bleu_tokenize("the cat sat"), bleu_tokenize("the cat sat down"))
        assert got == pytest.approx(oracle, rel=1e-12)

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            bleu4("x", "   ")

    def test_empty_candidate_scores_zero(self):
        assert bleu4("", "something") == 0.0

    def test_tokenization_lowercases_and_splits_punctuation(self):
        assert bleu_tokenize("Hello, world!") == ["hello", ",", "world", "!"]
        assert bleu_tokenize("x+=1;") == ["x", "+", "=", "1", ";"]

    def test_case_insensitive(self):
        assert bleu4("THE CAT", "the cat") == pytest.approx(1.0, rel=1e-12)

    @settings(max_examples=200)
    @given(
        st.lists(st.sampled_from("use fix the code null check add remove rename".split()), min_size=1, max_size=20)
    )
    def test_self_bleu_is_one(self, words):
        text = " ".join(words)
        assert bleu4(text, text) == pytest.approx(1.0, rel=1e-12)

    @settings(max_examples=150)
    @given(
        cand=st.lists(st.sampled_from("a b c d e f g".split()), min_size=1, max_size=12),
        ref=st.lists(st.sampled_from("a b c d e f g".split()), min_size=1, max_size=12),
    )
    def test_matches_manual_oracle(self, cand, ref):
        got = bleu4(" ".join(cand), " ".join(ref))
        assert got == pytest.approx(manual_bleu4(cand, ref), rel=1e-9, abs=1e-12)

    def test_corpus_mean(self):
        pairs = [("the cat sat", "the cat sat down"), ("same text", "same text")]
        expected = (bleu4(*pairs[0]) + bleu4(*pairs[1])) / 2
        assert bleu4_corpus([p[0] for p in pairs], [p[1] for p in pairs]) == pytest.approx(expected)

    def test_corpus_length_mismatch(self):
        with pytest.raises(ValueError):
            bleu4_corpus(["a"], ["a", "b"])


class TestChiSquared:
    def test_identical_proportions(self):
        result = chi_squared_2x2([[30, 20], [30, 20]])
        assert result.statistic == 0.0
        assert result.p_value == 1.0

    def test_diagonal_table_exact_statistic_and_published_p(self):
        result = chi_squared_2x2([[10, 0], [0, 10]])
        assert result.statistic == 20.0
        assert result.p_value == pytest.approx(CHI2_SF_20, abs=1e-7)
        assert result.p_value == pytest.approx(CHI2_SF_20, rel=1e-8)

    def test_known_quantiles(self):
        assert chi_squared_2x2([[1, 1], [1, 1]]).p_value == 1.0
        assert math.erfc(math.sqrt(CHI2_CRIT_95 / 2)) == pytest.approx(0.05, abs=1e-8)
        assert math.erfc(math.sqrt(CHI2_CRIT_99 / 2)) == pytest.approx(0.01, abs=1e-8)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            chi_squared_2x2([[1, 2]])
        with pytest.raises(ValueError):
            chi_squared_2x2([[1], [2]])

    def test_zero_marginal_rejected(self):
        with pytest.raises(ValueError):
            chi_squared_2x2([[0, 0], [5, 5]])
        with pytest.raises(ValueError):
            chi_squared_2x2([[0, 5], [0, 5]])

    @settings(max_examples=200)
    @given(
        a=st.integers(min_value=1, max_value=200),
        b=st.integers(min_value=1, max_value=200),
        c=st.integers(min_value=1, max_value=200),
        d=st.integers(min_value=1, max_value=200),
    )
    def test_transpose_and_swap_invariance(self, a, b, c, d):
        base = chi_squared_2x2([[a, b], [c, d]]).statistic
        transposed = chi_squared_2x2([[a, c], [b, d]]).statistic
        swapped = chi_squared_2x2([[d, c], [b, a]]).statistic
        assert transposed == pytest.approx(base, rel=1e-12, abs=1e-12)
        assert swapped == pytest.approx(base, rel=1e-12, abs=1e-12)

    def test_p_value_strictly_decreasing_in_statistic(self):
        tables = [[[11, 9], [9, 11]], [[14, 6], [6, 14]], [[18, 2], [2, 18]]]
        results = [chi_squared_2x2(t) for t in tables]
        stats = [r.statistic for r in results]
        ps = [r.p_value for r in results]
        assert stats == sorted(stats)
        assert ps == sorted(ps, reverse=True)
        assert len(set(ps)) == len(ps)

    def test_result_type(self):
        assert isinstance(chi_squared_2x2([[5, 5], [5, 5]]), ChiSquaredResult)
