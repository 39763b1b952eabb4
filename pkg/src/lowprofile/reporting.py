"""Campaign orchestration, baseline import, and artifact emission.

A campaign runs five stages in order against one run directory: fit the
training-distribution stats, calibrate both detectors, fine-tune the
adapters, attack the evaluation split, and summarize. Every stage persists
its artifact and is skipped when that artifact already exists, so partial
runs resume where they stopped; the attack stage additionally resumes
record by record. Stage failures surface as :class:`StageError` naming the
stage, with partial artifacts left in place.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attack import MaskedLMCandidateGenerator, attack_example
from .core import (AttackRecord, CampaignConfig, Example, FAILED, SUCCESS,
                   SKIPPED_ORIG_WRONG, append_record, load_dataset,
                   load_records)
from .distribution import (DetectorSuite, GaussianStats, calibrate_threshold,
                           fit_gaussian, MD, NEG_MSP, msp as msp_of, md as md_of)
from .finetune import AdapterTrainState, finetune_dala, load_adapter_state
from .metrics import CampaignSummary, HashingSentenceEncoder, summarize_records
from .models import load_checkpoint
from .victim import WhiteBoxVictim

logger = logging.getLogger(__name__)

STAGES = ("stats", "calibrate", "finetune", "attack", "evaluate")


class StageError(RuntimeError):
    """A campaign stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class BaselineImport:
    """Externally produced adversarial texts keyed by example id."""

    source: str
    pairs: tuple[tuple[str, str], ...]

    @classmethod
    def parse(cls, path: str | Path, source: Optional[str] = None) -> "BaselineImport":
        path = Path(path)
        pairs = []
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                cols = line.split("\t")
                if len(cols) != 2:
                    raise ValueError(
                        f"{path}:{lineno}: expected 'id<TAB>adversarial text'")
                pairs.append((cols[0], cols[1]))
        return cls(source=source or path.stem, pairs=tuple(pairs))


class Campaign:
    """One configured run bound to a run directory."""

    def __init__(self, config: CampaignConfig, run_dir: str | Path):
        self.config = config
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        # Capture the exact config used into the run directory.
        config.save(self.run_dir / "config.json")
        self._victim: Optional[WhiteBoxVictim] = None
        self._generator: Optional[MaskedLMCandidateGenerator] = None

    # Artifact paths -------------------------------------------------------
    @property
    def scores_path(self) -> Path:
        return self.run_dir / "train_scores.json"

    @property
    def detectors_path(self) -> Path:
        return self.run_dir / "detectors.json"

    @property
    def adapters_path(self) -> Path:
        return self.run_dir / "adapters.pt"

    @property
    def records_path(self) -> Path:
        return self.run_dir / "records.jsonl"

    @property
    def summary_txt_path(self) -> Path:
        return self.run_dir / "summary.txt"

    @property
    def summary_csv_path(self) -> Path:
        return self.run_dir / "summary.csv"

    def completed_stages(self) -> list[str]:
        done = []
        if self.scores_path.exists():
            done.append("stats")
        if self.detectors_path.exists():
            done.append("calibrate")
        if self.adapters_path.exists():
            done.append("finetune")
        if self.records_path.exists():
            done.append("attack")
        if self.summary_csv_path.exists():
            done.append("evaluate")
        return done

    # Shared resources -----------------------------------------------------
    def _load_victim(self, fresh: bool = False) -> WhiteBoxVictim:
        if fresh or self._victim is None:
            model, tokenizer = load_checkpoint(self.config.victim_path)
            self._victim = WhiteBoxVictim(model, tokenizer,
                                          self.config.task_spec.label_names)
            self._generator = None
        return self._victim

    def train_examples(self) -> list[Example]:
        return load_dataset(self.config.train_path, self.config.task)

    def eval_examples(self) -> list[Example]:
        return load_dataset(self.config.eval_path, self.config.task)

    # Stages ---------------------------------------------------------------
    def stage_stats(self, force: bool = False) -> dict:
        """Embed and score the training split; fit the Gaussian stats."""
        if self.scores_path.exists() and not force:
            return json.loads(self.scores_path.read_text(encoding="utf-8"))
        victim = self._load_victim()
        examples = self.train_examples()
        if not examples:
            raise ValueError("empty training split")
        texts = [ex.attack_text() for ex in examples]
        logit_chunks, embedding_chunks = [], []
        for start in range(0, len(texts), 64):
            chunk = texts[start : start + 64]
            logit_chunks.append(victim.predict_logits(chunk))
            embedding_chunks.append(victim.embed(chunk))
        logits = np.concatenate(logit_chunks)
        embeddings = np.concatenate(embedding_chunks)
        stats = fit_gaussian(embeddings, ridge_epsilon=self.config.ridge_epsilon)
        payload = {
            "stats": stats.to_json_dict(),
            "msp": [msp_of(row) for row in logits],
            "md": [md_of(emb, stats) for emb in embeddings],
        }
        self.scores_path.write_text(json.dumps(payload) + "\n", encoding="utf-8")
        return payload

    def stage_calibrate(self, force: bool = False) -> DetectorSuite:
        if self.detectors_path.exists() and not force:
            return DetectorSuite.load(self.detectors_path)
        payload = self.stage_stats()
        stats = GaussianStats.from_json_dict(payload["stats"])
        rate = self.config.effective_detector_rate()
        suite = DetectorSuite(
            stats=stats,
            neg_msp_cal=calibrate_threshold([-m for m in payload["msp"]], rate, kind=NEG_MSP),
            md_cal=calibrate_threshold(payload["md"], rate, kind=MD),
        )
        suite.save(self.detectors_path)
        return suite

    def stage_finetune(self, force: bool = False) -> AdapterTrainState:
        if self.adapters_path.exists() and not force:
            return AdapterTrainState.load(self.adapters_path)
        suite = self.stage_calibrate()
        victim = self._load_victim(fresh=True)
        state = finetune_dala(self.train_examples(), victim, suite.stats, self.config)
        state.save(self.adapters_path)
        state.trace.export(self.run_dir / "loss_traces")
        return state

    def stage_attack(self, force: bool = False) -> list[AttackRecord]:
        """Attack the evaluation split, appending records incrementally.

        Resumable: examples whose ids already appear in the record store are
        not re-attacked.
        """
        if force and self.records_path.exists():
            self.records_path.unlink()
        state = self.stage_finetune()
        suite = self.stage_calibrate()
        victim = self._load_victim(fresh=True)
        load_adapter_state(victim.model, state)
        generator = MaskedLMCandidateGenerator(victim.model, victim.tokenizer,
                                               temperature=self.config.mlm_temperature)
        done_ids = set()
        if self.records_path.exists():
            done_ids = {rec.example_id for rec in load_records(self.records_path)}
        for example in self.eval_examples():
            if example.id in done_ids:
                continue
            record = attack_example(example, victim, generator, self.config,
                                    detectors=suite)
            append_record(record, self.records_path)
        return load_records(self.records_path)

    def stage_evaluate(self, force: bool = False) -> CampaignSummary:
        if self.summary_csv_path.exists() and not force:
            records = load_records(self.records_path)
        else:
            records = self.stage_attack()
        examples_by_id = {ex.id: ex for ex in self.eval_examples()}
        encoder = HashingSentenceEncoder()
        summary = summarize_records(records, examples_by_id, encoder=encoder)
        self.summary_txt_path.write_text(summary.render(), encoding="utf-8")
        self.summary_csv_path.write_text(summary.to_csv(), encoding="utf-8")
        return summary

    def export_score_histograms(self, bins: int = 30,
                                render_images: bool = False) -> list[Path]:
        """Overlaid original-vs-adversarial score distributions per detector.

        Originals are the calibration-split scores; adversarials come from
        success records.
        """
        payload = self.stage_stats()
        records = load_records(self.records_path)
        adv_msp = [r.msp_score_adv for r in records
                   if r.status == SUCCESS and r.msp_score_adv is not None]
        adv_md = [r.md_score_adv for r in records
                  if r.status == SUCCESS and r.md_score_adv is not None]
        out_dir = self.run_dir / "histograms"
        written = []
        if adv_msp:
            written.append(export_histograms(payload["msp"], adv_msp, "msp",
                                             out_dir / "msp.txt", bins=bins,
                                             render_image=render_images))
        if adv_md:
            written.append(export_histograms(payload["md"], adv_md, "md",
                                             out_dir / "md.txt", bins=bins,
                                             render_image=render_images))
        return written

    def run_all(self) -> CampaignSummary:
        """Execute every stage in order; failures name the stage."""
        stage_fns = [
            ("stats", self.stage_stats),
            ("calibrate", self.stage_calibrate),
            ("finetune", self.stage_finetune),
            ("attack", self.stage_attack),
            ("evaluate", self.stage_evaluate),
        ]
        result: Optional[CampaignSummary] = None
        for name, fn in stage_fns:
            try:
                result = fn()
            except Exception as exc:
                raise StageError(name, exc) from exc
            logger.info("stage %s complete", name)
        assert isinstance(result, CampaignSummary)
        return result


def run_campaign(config: CampaignConfig, run_dir: str | Path) -> CampaignSummary:
    """Run all stages of one campaign under ``run_dir``."""
    return Campaign(config, run_dir).run_all()


def import_baseline(imported: BaselineImport, examples: Sequence[Example],
                    victim: WhiteBoxVictim,
                    detectors: Optional[DetectorSuite] = None) -> list[AttackRecord]:
    """Evaluate externally produced adversarial pairs exactly as native
    attack outputs.

    Each pair's status comes from the victim's prediction on the imported
    text; detector scores and flags are populated for successes. Unknown
    example ids fail fast, listing every offender.
    """
    by_id = {ex.id: ex for ex in examples}
    unknown = sorted({pid for pid, _ in imported.pairs if pid not in by_id})
    if unknown:
        raise ValueError(f"imported ids not in dataset: {unknown}")
    records: list[AttackRecord] = []
    for example_id, adv_text in imported.pairs:
        example = by_id[example_id]
        queries = 1
        orig_logits = victim.predict_logits(example.attack_text())
        if int(np.argmax(orig_logits)) != example.gold_label:
            records.append(AttackRecord(example_id=example_id,
                                        status=SKIPPED_ORIG_WRONG,
                                        victim_queries=queries))
            continue
        adv_logits = victim.predict_logits(adv_text)
        queries += 1
        pred = int(np.argmax(adv_logits))
        perturbed = _diff_indices(example.attack_words(), adv_text.split())
        if pred != example.gold_label:
            msp_score = md_score = None
            flagged_msp = flagged_md = False
            if detectors is not None:
                embedding = victim.embed(adv_text)
                msp_score, md_score, flagged_msp, flagged_md = \
                    detectors.score_and_flag(adv_logits, embedding)
            records.append(AttackRecord(
                example_id=example_id, status=SUCCESS, adv_text=adv_text,
                adv_label=pred, perturbed_word_indices=frozenset(perturbed),
                victim_queries=queries, msp_score_adv=msp_score,
                md_score_adv=md_score, flagged_msp=flagged_msp,
                flagged_md=flagged_md))
        else:
            records.append(AttackRecord(
                example_id=example_id, status=FAILED, adv_text=adv_text,
                perturbed_word_indices=frozenset(perturbed),
                victim_queries=queries))
    return records


def _diff_indices(orig_words: list[str], adv_words: list[str]) -> set[int]:
    """Original-word positions that changed; positional for equal lengths,
    approximate (tail counted changed) when an import altered the length."""
    indices = {i for i, (a, b) in enumerate(zip(orig_words, adv_words)) if a != b}
    indices.update(range(len(adv_words), len(orig_words)))
    return indices


def export_histograms(orig_scores: Sequence[float], adv_scores: Sequence[float],
                      kind: str, path: str | Path, bins: int = 30,
                      render_image: bool = False) -> Path:
    """Write shared-bin counts of original vs adversarial scores.

    The output is a tab-separated text file with one row per bin:
    ``bin_left  bin_right  count_orig  count_adv``. Bin edges span the
    combined range so the two histograms overlay directly. With
    ``render_image`` a PNG is written next to the data file when matplotlib
    is importable; the data file remains the contract either way.
    """
    if not len(orig_scores) or not len(adv_scores):
        raise ValueError("both score lists must be non-empty")
    combined = np.concatenate([np.asarray(orig_scores, dtype=np.float64),
                               np.asarray(adv_scores, dtype=np.float64)])
    edges = np.histogram_bin_edges(combined, bins=bins)
    counts_orig, _ = np.histogram(orig_scores, bins=edges)
    counts_adv, _ = np.histogram(adv_scores, bins=edges)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"# detector: {kind}\n")
        fh.write("# bin_left\tbin_right\tcount_orig\tcount_adv\n")
        for i in range(len(edges) - 1):
            fh.write(f"{edges[i]!r}\t{edges[i + 1]!r}\t"
                     f"{int(counts_orig[i])}\t{int(counts_adv[i])}\n")
    if render_image:
        _render_histogram_image(edges, counts_orig, counts_adv, kind,
                                path.with_suffix(".png"))
    return path


def _render_histogram_image(edges, counts_orig, counts_adv, kind, image_path):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib unavailable; skipping histogram image")
        return
    width = np.diff(edges)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(edges[:-1], counts_orig, width=width, align="edge", alpha=0.6,
           label="original")
    ax.bar(edges[:-1], counts_adv, width=width, align="edge", alpha=0.6,
           label="adversarial")
    ax.set_xlabel(kind)
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(image_path, dpi=120)
    plt.close(fig)
