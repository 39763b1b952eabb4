"""Evaluation quantities for an attack campaign.

Rates are fractions in [0, 1]; renderers multiply by 100 for table-style
output. The attack success rate is computed over the originally-correct
subset (skipped examples never enter the denominator), which makes
``acc_adv = acc_orig * (1 - asr)`` an exact identity up to rounding.
Quantities with an empty denominator are reported as None, never as zero.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import AttackRecord, Example, FAILED, SKIPPED_ORIG_WRONG, SUCCESS
from .victim import BlackBoxVictim, PromptTemplate


@dataclass(frozen=True)
class CampaignSummary:
    """Aggregate metrics plus the raw counts they were derived from."""

    n_total: int
    n_skipped: int
    n_success: int
    n_failed: int
    n_detected_msp: int
    n_detected_md: int
    acc_orig: Optional[float]
    acc_adv: Optional[float]
    asr: Optional[float]
    nasr_msp: Optional[float]
    nasr_md: Optional[float]
    dr_msp: Optional[float]
    dr_md: Optional[float]
    pct_words_mean: Optional[float]
    ss_mean: Optional[float]
    ss_encoder: Optional[str] = None

    CSV_COLUMNS = ("acc_orig", "acc_adv", "asr", "nasr_msp", "nasr_md",
                   "dr_msp", "dr_md", "pct_words_mean", "ss_mean",
                   "n_total", "n_skipped", "n_success", "n_failed",
                   "n_detected_msp", "n_detected_md", "ss_encoder")

    def to_csv(self) -> str:
        def cell(name):
            value = getattr(self, name)
            if value is None:
                return ""
            if isinstance(value, float):
                return f"{value:.6f}"
            return str(value)
        header = ",".join(self.CSV_COLUMNS)
        return header + "\n" + ",".join(cell(c) for c in self.CSV_COLUMNS) + "\n"

    def render(self) -> str:
        """Aligned-column text in table order: ACC, ASR, NASR per detector,
        then perturbation size and similarity. Percent-style fields are
        scaled by 100; absent values render as a dash."""
        def pct(value):
            return "-" if value is None else f"{100 * value:.2f}"
        rows = [
            ("ACC_orig", pct(self.acc_orig)),
            ("ACC_adv", pct(self.acc_adv)),
            ("ASR", pct(self.asr)),
            ("NASR_MSP", pct(self.nasr_msp)),
            ("NASR_MD", pct(self.nasr_md)),
            ("DR_MSP", pct(self.dr_msp)),
            ("DR_MD", pct(self.dr_md)),
            ("%Words", "-" if self.pct_words_mean is None else f"{self.pct_words_mean:.2f}"),
            ("SS", pct(self.ss_mean) if self.ss_mean is not None else "-"),
        ]
        counts = (f"counts: total={self.n_total} skipped={self.n_skipped} "
                  f"success={self.n_success} failed={self.n_failed} "
                  f"detected_msp={self.n_detected_msp} detected_md={self.n_detected_md}")
        encoder = f"ss_encoder: {self.ss_encoder}" if self.ss_encoder else "ss_encoder: none"
        width = max(len(name) for name, _ in rows)
        lines = [f"{name:<{width}}  {value:>8}" for name, value in rows]
        return "\n".join(lines + [counts, encoder, "note: SS and %Words over successes only"]) + "\n"


def _split_counts(records: Sequence[AttackRecord]) -> tuple[int, int, int]:
    n_skipped = sum(1 for r in records if r.status == SKIPPED_ORIG_WRONG)
    n_success = sum(1 for r in records if r.status == SUCCESS)
    n_failed = sum(1 for r in records if r.status == FAILED)
    if n_skipped + n_success + n_failed != len(records):
        raise ValueError("records contain an unknown status")
    return n_skipped, n_success, n_failed


def compute_asr(records: Sequence[AttackRecord]) -> Optional[float]:
    """Successes over originally-correct examples; None when nothing was
    attackable."""
    _, n_success, n_failed = _split_counts(records)
    attackable = n_success + n_failed
    if attackable == 0:
        return None
    return n_success / attackable


def _detected(records: Sequence[AttackRecord], kind: str) -> int:
    flag = {"msp": "flagged_msp", "md": "flagged_md"}[kind]
    return sum(1 for r in records if r.status == SUCCESS and getattr(r, flag))


def compute_nasr(records: Sequence[AttackRecord], kind: str) -> Optional[float]:
    """Fraction of originally-correct examples that flip the victim and
    evade detector ``kind`` ('msp' or 'md')."""
    _, n_success, n_failed = _split_counts(records)
    attackable = n_success + n_failed
    if attackable == 0:
        return None
    return (n_success - _detected(records, kind)) / attackable


def compute_dr(records: Sequence[AttackRecord], kind: str) -> Optional[float]:
    """Detected successes over all successes; None without successes."""
    _, n_success, _ = _split_counts(records)
    if n_success == 0:
        return None
    return _detected(records, kind) / n_success


def word_edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Minimal word-level edit script length (insert/delete/substitute)."""
    prev = list(range(len(b) + 1))
    for i, wa in enumerate(a, start=1):
        cur = [i]
        for j, wb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (wa != wb)))
        prev = cur
    return prev[-1]


def percent_words(orig_text: str, adv_text: str) -> float:
    """Percentage of perturbed words, in [0, 100].

    Equal-length word sequences are compared position by position. Unequal
    lengths (imported insertion/deletion baselines) fall back to the minimal
    word-level edit script over the original length; that value is an
    approximation and is capped at 100.
    """
    orig_words = orig_text.split()
    adv_words = adv_text.split()
    if not orig_words or not adv_words:
        raise ValueError("percent_words needs non-empty texts")
    if len(orig_words) == len(adv_words):
        differing = sum(1 for a, b in zip(orig_words, adv_words) if a != b)
        return 100.0 * differing / len(orig_words)
    edits = word_edit_distance(orig_words, adv_words)
    return min(100.0, 100.0 * edits / len(orig_words))


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def semantic_similarity(orig_text: str, adv_text: str,
                        encoder: Callable[[str], np.ndarray]) -> float:
    """Cosine similarity of the two sentence embeddings, in [-1, 1]."""
    return cosine_similarity(np.asarray(encoder(orig_text), dtype=np.float64),
                             np.asarray(encoder(adv_text), dtype=np.float64))


class HashingSentenceEncoder:
    """Deterministic signed bag-of-words hashing encoder.

    A dependency-free stand-in for heavyweight sentence encoders: words hash
    to fixed buckets with a stable sign, the bucket counts form the sentence
    vector. Reports must name the encoder in use; this one identifies itself
    via ``name``.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.name = f"hashing-bow-{dim}"

    def _bucket(self, word: str) -> tuple[int, float]:
        digest = hashlib.md5(word.encode("utf-8")).digest()
        index = int.from_bytes(digest[:4], "little") % self.dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        return index, sign

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for word in text.split():
            index, sign = self._bucket(word)
            vec[index] += sign
        return vec


def summarize_records(records: Sequence[AttackRecord],
                      examples_by_id: Optional[dict[str, Example]] = None,
                      encoder: Optional[Callable[[str], np.ndarray]] = None,
                      encoder_name: Optional[str] = None) -> CampaignSummary:
    """Aggregate one campaign's records into a CampaignSummary.

    %Words and semantic similarity are averaged over success records and
    need the originating examples; they are reported absent otherwise.
    """
    n_skipped, n_success, n_failed = _split_counts(records)
    n_total = len(records)
    attackable = n_success + n_failed
    detected_msp = _detected(records, "msp")
    detected_md = _detected(records, "md")

    pct_values: list[float] = []
    ss_values: list[float] = []
    if examples_by_id is not None:
        for rec in records:
            if rec.status != SUCCESS or rec.adv_text is None:
                continue
            example = examples_by_id.get(rec.example_id)
            if example is None:
                continue
            orig_text = example.attack_text()
            pct_values.append(percent_words(orig_text, rec.adv_text))
            if encoder is not None:
                ss_values.append(semantic_similarity(orig_text, rec.adv_text, encoder))

    if encoder is not None and encoder_name is None:
        encoder_name = getattr(encoder, "name", type(encoder).__name__)

    return CampaignSummary(
        n_total=n_total,
        n_skipped=n_skipped,
        n_success=n_success,
        n_failed=n_failed,
        n_detected_msp=detected_msp,
        n_detected_md=detected_md,
        acc_orig=attackable / n_total if n_total else None,
        acc_adv=n_failed / n_total if n_total else None,
        asr=n_success / attackable if attackable else None,
        nasr_msp=(n_success - detected_msp) / attackable if attackable else None,
        nasr_md=(n_success - detected_md) / attackable if attackable else None,
        dr_msp=detected_msp / n_success if n_success else None,
        dr_md=detected_md / n_success if n_success else None,
        pct_words_mean=float(np.mean(pct_values)) if pct_values else None,
        ss_mean=float(np.mean(ss_values)) if ss_values else None,
        ss_encoder=encoder_name if encoder is not None else None,
    )


@dataclass(frozen=True)
class TransferSummary:
    """Black-box metrics for one prompt template (or the template mean)."""

    template_index: Optional[int]
    acc_orig: Optional[float]
    acc_adv: Optional[float]
    asr: Optional[float]
    nasr_msp: Optional[float]
    nasr_md: Optional[float]


def transfer_evaluate(victim: BlackBoxVictim,
                      examples: Sequence[Example],
                      records_by_id: dict[str, AttackRecord],
                      templates: Optional[Sequence[PromptTemplate]] = None
                      ) -> tuple[list[TransferSummary], TransferSummary]:
    """Evaluate an adversarial corpus against a label-only victim.

    Every example is queried with its original and adversarial text under
    each template (records without adversarial text fall back to the
    original). Unparseable completions count as wrong on originals and as
    no-flip on adversarials. Detector flags are read from the records, i.e.
    from the scoring model that produced them. Returns per-template
    summaries and their arithmetic mean.
    """
    templates = list(templates) if templates is not None else list(victim.templates)
    per_template: list[TransferSummary] = []
    for t_index, template in enumerate(templates):
        correct = 0
        flipped = 0
        evaded_msp = 0
        evaded_md = 0
        for example in examples:
            pred = victim.classify(template, example.attack_text())
            if pred != example.gold_label:
                continue
            correct += 1
            record = records_by_id.get(example.id)
            adv_text = record.adv_text if record and record.adv_text else example.attack_text()
            adv_pred = victim.classify(template, adv_text)
            if adv_pred is not None and adv_pred != example.gold_label:
                flipped += 1
                if not (record and record.flagged_msp):
                    evaded_msp += 1
                if not (record and record.flagged_md):
                    evaded_md += 1
        n = len(examples)
        per_template.append(TransferSummary(
            template_index=t_index,
            acc_orig=correct / n if n else None,
            acc_adv=(correct - flipped) / n if n else None,
            asr=flipped / correct if correct else None,
            nasr_msp=evaded_msp / correct if correct else None,
            nasr_md=evaded_md / correct if correct else None,
        ))

    def mean_of(field: str) -> Optional[float]:
        values = [getattr(s, field) for s in per_template if getattr(s, field) is not None]
        return float(np.mean(values)) if values else None

    mean = TransferSummary(
        template_index=None,
        acc_orig=mean_of("acc_orig"),
        acc_adv=mean_of("acc_adv"),
        asr=mean_of("asr"),
        nasr_msp=mean_of("nasr_msp"),
        nasr_md=mean_of("nasr_md"),
    )
    return per_template, mean
