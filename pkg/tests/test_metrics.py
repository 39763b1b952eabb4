from __future__ import annotations

import numpy as np
import pytest

from lowprofile.core import AttackRecord, Example, FAILED, SKIPPED_ORIG_WRONG, SUCCESS
from lowprofile.metrics import (CampaignSummary, HashingSentenceEncoder,
                                compute_asr, compute_dr, compute_nasr,
                                cosine_similarity, percent_words,
                                semantic_similarity, summarize_records,
                                transfer_evaluate, word_edit_distance)
from lowprofile.tasks import get_task
from lowprofile.victim import BlackBoxVictim, templates_for_task


def build_records(n_skipped=0, n_success=0, n_failed=0,
                  detected_msp=0, detected_md=0):
    records = []
    for i in range(n_skipped):
        records.append(AttackRecord(example_id=f"s{i}", status=SKIPPED_ORIG_WRONG))
    for i in range(n_success):
        records.append(AttackRecord(
            example_id=f"ok{i}", status=SUCCESS, adv_text="x", adv_label=1,
            flagged_msp=i < detected_msp, flagged_md=i < detected_md))
    for i in range(n_failed):
        records.append(AttackRecord(example_id=f"f{i}", status=FAILED))
    return records


class TestRates:
    def test_asr_direct_count(self):
        records = build_records(n_success=8, n_failed=2)
        assert compute_asr(records) == pytest.approx(0.8)

    def test_asr_absent_without_attackable(self):
        assert compute_asr(build_records(n_skipped=3)) is None

    def test_nasr_equals_asr_without_detections(self):
        records = build_records(n_success=5, n_failed=5)
        assert compute_nasr(records, "msp") == compute_asr(records)
        assert compute_nasr(records, "md") == compute_asr(records)

    def test_nasr_zero_when_all_detected(self):
        records = build_records(n_success=5, n_failed=5, detected_msp=5)
        assert compute_nasr(records, "msp") == 0.0

    def test_dr_direct_count_and_identity(self):
        records = build_records(n_success=8, n_failed=4, detected_md=2)
        assert compute_dr(records, "md") == pytest.approx(0.25)
        asr = compute_asr(records)
        nasr = compute_nasr(records, "md")
        assert compute_dr(records, "md") == pytest.approx((asr - nasr) / asr)
        assert compute_dr(records, "md") * asr + nasr == pytest.approx(asr)

    def test_dr_absent_without_successes(self):
        assert compute_dr(build_records(n_failed=3), "msp") is None


class TestSummary:
    def test_count_identity_and_relations(self):
        records = build_records(n_skipped=7, n_success=12, n_failed=6,
                                detected_msp=3, detected_md=5)
        summary = summarize_records(records)
        assert summary.n_total == 25
        assert summary.n_total == summary.n_skipped + summary.n_success + summary.n_failed
        assert summary.acc_adv == pytest.approx(
            summary.acc_orig * (1 - summary.asr), abs=1e-12)
        assert summary.nasr_msp <= summary.asr
        assert summary.nasr_md <= summary.asr
        assert summary.dr_msp == pytest.approx(3 / 12)
        assert summary.dr_md == pytest.approx(5 / 12)

    def test_render_and_csv_schema(self):
        summary = summarize_records(build_records(n_success=2, n_failed=2))
        text = summary.render()
        for column in ("ACC_orig", "ASR", "NASR_MSP", "NASR_MD", "%Words", "SS"):
            assert column in text
        csv = summary.to_csv()
        header = csv.splitlines()[0].split(",")
        assert header == list(CampaignSummary.CSV_COLUMNS)

    def test_absent_metrics_render_as_dash(self):
        summary = summarize_records(build_records(n_skipped=2))
        assert summary.asr is None
        assert "-" in summary.render()

    def test_pct_words_and_ss_over_successes(self):
        examples = {
            "ok0": Example(id="ok0", text_a="a b c d", gold_label=0,
                           label_names=("x", "y")),
        }
        records = [AttackRecord(example_id="ok0", status=SUCCESS,
                                adv_text="a b c z", adv_label=1),
                   AttackRecord(example_id="f0", status=FAILED)]
        encoder = HashingSentenceEncoder()
        summary = summarize_records(records, examples, encoder=encoder)
        assert summary.pct_words_mean == pytest.approx(25.0)
        assert summary.ss_mean is not None
        assert summary.ss_encoder == encoder.name

    def test_ss_absent_without_encoder(self):
        examples = {"ok0": Example(id="ok0", text_a="a b", gold_label=0,
                                   label_names=("x", "y"))}
        records = [AttackRecord(example_id="ok0", status=SUCCESS,
                                adv_text="a z", adv_label=1)]
        summary = summarize_records(records, examples)
        assert summary.ss_mean is None and summary.ss_encoder is None


class TestPercentWords:
    def test_identical_texts(self):
        assert percent_words("a b c", "a b c") == 0.0

    def test_one_of_four(self):
        assert percent_words("a b c d", "a b z d") == pytest.approx(25.0)

    def test_positional_oracle_on_same_length_pairs(self):
        rng = np.random.default_rng(1)
        vocab = list("abcdefg")
        for _ in range(100):
            n = int(rng.integers(1, 12))
            orig = [str(rng.choice(vocab)) for _ in range(n)]
            adv = [w if rng.random() < 0.6 else str(rng.choice(vocab))
                   for w in orig]
            expected = 100.0 * sum(a != b for a, b in zip(orig, adv)) / n
            assert percent_words(" ".join(orig), " ".join(adv)) == pytest.approx(expected)

    def test_unequal_lengths_use_edit_script(self):
        # one word deleted: a single edit over four original words
        assert percent_words("a b c d", "a c d") == pytest.approx(25.0)
        assert percent_words("a b", "a x y b") == pytest.approx(100.0)

    def test_edit_distance_oracle(self):
        assert word_edit_distance("a b c".split(), "a b c".split()) == 0
        assert word_edit_distance("a b c".split(), "a z c".split()) == 1
        assert word_edit_distance("a b c".split(), "b c".split()) == 1
        assert word_edit_distance([], "a b".split()) == 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            percent_words("", "a")


class TestSemanticSimilarity:
    def test_identical_texts_give_one(self):
        encoder = HashingSentenceEncoder()
        assert semantic_similarity("a calm film", "a calm film",
                                   encoder) == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_hand_vectors(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_symmetric(self):
        encoder = HashingSentenceEncoder()
        a, b = "the movie was great", "the plot felt boring"
        assert semantic_similarity(a, b, encoder) == semantic_similarity(b, a, encoder)

    def test_range(self):
        encoder = HashingSentenceEncoder()
        rng = np.random.default_rng(0)
        vocab = ["w" + str(i) for i in range(30)]
        for _ in range(50):
            a = " ".join(rng.choice(vocab, size=6))
            b = " ".join(rng.choice(vocab, size=6))
            assert -1.0 - 1e-9 <= semantic_similarity(a, b, encoder) <= 1.0 + 1e-9


class TestTransferEvaluate:
    def _setup(self):
        task = get_task("sst2")
        examples = [
            Example(id="e0", text_a="orig zero", gold_label=1,
                    label_names=task.label_names),
            Example(id="e1", text_a="orig one", gold_label=0,
                    label_names=task.label_names),
            Example(id="e2", text_a="orig two", gold_label=1,
                    label_names=task.label_names),
        ]
        records = {
            "e0": AttackRecord(example_id="e0", status=SUCCESS,
                               adv_text="adv zero", adv_label=0,
                               flagged_msp=True, flagged_md=False),
            "e1": AttackRecord(example_id="e1", status=FAILED,
                               adv_text="adv one"),
            "e2": AttackRecord(example_id="e2", status=SKIPPED_ORIG_WRONG),
        }

        def client(prompt):
            # completion keyed on the input line of the prompt
            if "adv zero" in prompt:
                return "negative"   # flips e0 (gold positive)
            if "orig two" in prompt:
                return "negative"   # wrong on the original -> not attackable
            if "orig one" in prompt or "adv one" in prompt:
                return "negative"   # correct on e1, never flips
            return "positive"

        victim = BlackBoxVictim(client, templates_for_task(task), task.label_names)
        return examples, records, victim

    def test_per_template_and_mean(self):
        examples, records, victim = self._setup()
        per_template, mean = transfer_evaluate(victim, examples, records)
        assert len(per_template) == 5
        for summary in per_template:
            assert summary.acc_orig == pytest.approx(2 / 3)
            assert summary.asr == pytest.approx(1 / 2)
            # e0's flip was flagged by the msp detector, evading only md
            assert summary.nasr_msp == pytest.approx(0.0)
            assert summary.nasr_md == pytest.approx(1 / 2)
        assert mean.template_index is None
        assert mean.asr == pytest.approx(1 / 2)
        assert mean.acc_adv == pytest.approx(1 / 3)

    def test_unparseable_adv_completion_counts_as_no_flip(self):
        examples, records, _ = self._setup()

        def mute_on_adv(prompt):
            if "adv zero" in prompt:
                return "cannot say"      # unparseable on the adversarial text
            if "orig two" in prompt:
                return "negative"
            return "positive" if "orig zero" in prompt else "negative"

        task = get_task("sst2")
        victim = BlackBoxVictim(mute_on_adv, templates_for_task(task),
                                task.label_names)
        per_template, mean = transfer_evaluate(victim, examples, records)
        assert mean.asr == pytest.approx(0.0)
        assert mean.acc_adv == mean.acc_orig
