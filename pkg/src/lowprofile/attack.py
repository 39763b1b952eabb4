"""Greedy word-substitution search against a victim classifier.

Words are ranked by how much masking each one drops the victim's confidence
in the original label. Candidates for a word come from a pluggable
generator (normally the adapter-tuned masked LM). The search walks the
ranking, takes the first substitution that flips the victim and otherwise
keeps the candidate that most reduces the original-label probability, and
gives up once a configured fraction of the words has been perturbed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np
import torch

from .core import AttackRecord, CampaignConfig, Example, FAILED, SKIPPED_ORIG_WRONG, SUCCESS
from .distribution import DetectorSuite
from .models import TextEncoderModel, adapters_enabled
from .tokenizer import MASK, SPLIT, WordTokenizer
from .victim import WhiteBoxVictim


@dataclass(frozen=True)
class RankedToken:
    """A word position with its masking-based importance score."""

    word_index: int
    importance: float


@dataclass(frozen=True)
class CandidateList:
    """Ordered substitution candidates for one word position.

    Candidates never include the original word, special tokens, the pair
    separator, or non-word vocabulary pieces; scores are non-increasing.
    """

    word_index: int
    candidates: tuple[tuple[str, float], ...]


class CandidateSource(Protocol):
    """Anything that can propose replacements for a word in context."""

    def candidates(self, words: Sequence[str], word_index: int, k: int) -> CandidateList:
        ...


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    ez = np.exp(z)
    return ez / ez.sum()


def rank_token_importance(example: Example, victim: WhiteBoxVictim,
                          orig_probs: Optional[np.ndarray] = None) -> list[RankedToken]:
    """Score each perturbable word by the drop in original-label probability
    when that word is replaced by the mask token; sort descending, ties
    broken toward the smaller word index."""
    words = example.attack_words()
    if orig_probs is None:
        orig_probs = _softmax(victim.predict_logits(example.attack_text()))
    p_orig = float(orig_probs[example.gold_label])
    indices = [i for i, w in enumerate(words) if w != SPLIT]
    masked_texts = []
    for i in indices:
        masked = list(words)
        masked[i] = MASK
        masked_texts.append(" ".join(masked))
    logits = victim.predict_logits(masked_texts)
    scores = [p_orig - float(_softmax(row)[example.gold_label]) for row in logits]
    ranked = sorted(
        (RankedToken(word_index=i, importance=s) for i, s in zip(indices, scores)),
        key=lambda rt: (-rt.importance, rt.word_index),
    )
    return ranked


class MaskedLMCandidateGenerator:
    """Candidate source backed by the adapter-tuned masked LM.

    Masks every subtoken of the chosen word in the current sentence, reads
    the vocabulary distribution at the first masked position with adapters
    enabled, and keeps the top-k single-token predictions that survive the
    candidate filters.
    """

    def __init__(self, model: TextEncoderModel, tokenizer: WordTokenizer,
                 temperature: float = 1.0):
        self.model = model
        self.tokenizer = tokenizer
        self.temperature = temperature

    def candidates(self, words: Sequence[str], word_index: int, k: int) -> CandidateList:
        if not (0 <= word_index < len(words)):
            raise IndexError(f"word index {word_index} out of range")
        if k < 1:
            raise ValueError("k must be >= 1")
        original = words[word_index]
        tok = self.tokenizer.encode_words(list(words))
        start, end = tok.word_to_subtoken_spans[word_index]
        ids = list(tok.subtokens)
        for pos in range(start, end):
            ids[pos] = self.tokenizer.mask_id
        input_ids = torch.tensor([ids], dtype=torch.long)
        self.model.eval()
        with torch.no_grad(), adapters_enabled(self.model, True):
            logits = self.model.mlm_logits(input_ids=input_ids)
        probs = torch.softmax(logits[0, start] / self.temperature, dim=-1)
        top = torch.topk(probs, k=min(k, probs.shape[0]))
        vocab = self.tokenizer.vocab
        out: list[tuple[str, float]] = []
        for piece_id, score in zip(top.indices.tolist(), top.values.tolist()):
            if not vocab.is_word_piece(piece_id):
                continue
            surface = vocab.surface(piece_id)
            if surface == original:
                continue
            out.append((surface, float(score)))
        return CandidateList(word_index=word_index, candidates=tuple(out))


def generate_candidates(example: Example, word_index: int,
                        generator: CandidateSource, k: int) -> CandidateList:
    """Candidate list for one word of an unmodified example."""
    return generator.candidates(example.attack_words(), word_index, k)


def perturbation_budget(words: Sequence[str], termination_fraction: float) -> int:
    """Maximum number of words the search may perturb."""
    n = sum(1 for w in words if w != SPLIT)
    return math.floor(termination_fraction * n)


def attack_example(example: Example, victim: WhiteBoxVictim,
                   generator: CandidateSource, config: CampaignConfig,
                   detectors: Optional[DetectorSuite] = None) -> AttackRecord:
    """Run the greedy search on one example and return its AttackRecord.

    Examples the victim already misclassifies are skipped. A substitution
    that flips the victim finalizes success; otherwise the best candidate is
    kept only when it strictly reduces the original-label probability. The
    search stops once the perturbation budget is exhausted. When a detector
    suite is given, success records carry detection scores and flags.

    Queries are counted locally (this search's own classification calls),
    so concurrent attacks sharing one victim stay correct.
    """
    queries = 1
    orig_logits = victim.predict_logits(example.attack_text())
    if int(np.argmax(orig_logits)) != example.gold_label:
        return AttackRecord(example_id=example.id, status=SKIPPED_ORIG_WRONG,
                            victim_queries=queries)
    orig_probs = _softmax(orig_logits)
    ranking = rank_token_importance(example, victim, orig_probs=orig_probs)
    queries += len(ranking)

    words = list(example.attack_words())
    budget = perturbation_budget(words, config.termination_fraction)
    current = list(words)
    current_p = float(orig_probs[example.gold_label])
    perturbed: set[int] = set()

    for ranked in ranking:
        if len(perturbed) >= budget:
            break
        i = ranked.word_index
        cand = generator.candidates(current, i, config.candidates_per_word)
        best_word: Optional[str] = None
        best_p = current_p
        for surface, _score in cand.candidates:
            trial = list(current)
            trial[i] = surface
            trial_text = " ".join(trial)
            logits = victim.predict_logits(trial_text)
            queries += 1
            pred = int(np.argmax(logits))
            if pred != example.gold_label:
                perturbed.add(i)
                return _finalize_success(example, trial_text, pred, logits,
                                         perturbed, queries, victim, detectors)
            p = float(_softmax(logits)[example.gold_label])
            if p < best_p:
                best_p, best_word = p, surface
        if best_word is not None:
            current[i] = best_word
            current_p = best_p
            perturbed.add(i)

    return AttackRecord(
        example_id=example.id,
        status=FAILED,
        adv_text=" ".join(current),
        perturbed_word_indices=frozenset(perturbed),
        victim_queries=queries,
    )


def _finalize_success(example: Example, adv_text: str, adv_label: int,
                      adv_logits: np.ndarray, perturbed: set[int], queries: int,
                      victim: WhiteBoxVictim,
                      detectors: Optional[DetectorSuite]) -> AttackRecord:
    msp_score = md_score = None
    flagged_msp = flagged_md = False
    if detectors is not None:
        embedding = victim.embed(adv_text)
        msp_score, md_score, flagged_msp, flagged_md = detectors.score_and_flag(
            adv_logits, embedding)
    return AttackRecord(
        example_id=example.id,
        status=SUCCESS,
        adv_text=adv_text,
        adv_label=adv_label,
        perturbed_word_indices=frozenset(perturbed),
        victim_queries=queries,
        msp_score_adv=msp_score,
        md_score_adv=md_score,
        flagged_msp=flagged_msp,
        flagged_md=flagged_md,
    )
