"""Domain types, dataset ingestion, and the persistent attack-record store.

An :class:`Example` is one labeled input; an :class:`AttackRecord` is the
full outcome of attacking it. Records persist as UTF-8 JSON lines, one
record per line, so stores are streamable and diff-friendly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Optional

from .tasks import TaskSpec, get_task, default_hyperparameters
from .tokenizer import SPLIT

SKIPPED_ORIG_WRONG = "skipped_orig_wrong"
FAILED = "failed"
SUCCESS = "success"
STATUSES = (SKIPPED_ORIG_WRONG, FAILED, SUCCESS)

LOSS_VARIANTS = ("dal", "dal_no_msp", "dal_no_md", "nce", "fce")


@dataclass(frozen=True)
class Example:
    """One labeled input sentence (or sentence pair)."""

    id: str
    text_a: str
    gold_label: int
    label_names: tuple[str, ...]
    text_b: Optional[str] = None

    def __post_init__(self):
        if not self.text_a.strip():
            raise ValueError(f"example {self.id!r}: text_a is empty")
        if not (0 <= self.gold_label < len(self.label_names)):
            raise ValueError(
                f"example {self.id!r}: gold_label {self.gold_label} out of range "
                f"for {len(self.label_names)} labels"
            )

    def attack_words(self) -> list[str]:
        """Word sequence the attack operates on; pairs joined by the inert
        separator marker, which is never a perturbation candidate."""
        words = self.text_a.split()
        if self.text_b is not None:
            words = words + [SPLIT] + self.text_b.split()
        return words

    def attack_text(self) -> str:
        return " ".join(self.attack_words())


@dataclass(frozen=True)
class AttackRecord:
    """Outcome of attacking one example.

    ``msp_score_adv`` holds the raw maximum softmax probability of the
    adversarial text under the scoring victim (the MSP detection score is
    its negation); ``md_score_adv`` holds the Mahalanobis distance. Both are
    populated for successful attacks and None otherwise. Flags are the
    calibrated detector verdicts.
    """

    example_id: str
    status: str
    adv_text: Optional[str] = None
    adv_label: Optional[int] = None
    perturbed_word_indices: frozenset[int] = frozenset()
    victim_queries: int = 0
    msp_score_adv: Optional[float] = None
    md_score_adv: Optional[float] = None
    flagged_msp: bool = False
    flagged_md: bool = False

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == SKIPPED_ORIG_WRONG and self.adv_text is not None:
            raise ValueError("skipped records must not carry adversarial text")
        if self.status == SUCCESS and self.adv_label is None:
            raise ValueError("success records must carry the flipped label")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["perturbed_word_indices"] = sorted(self.perturbed_word_indices)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "AttackRecord":
        d = dict(d)
        d["perturbed_word_indices"] = frozenset(d.get("perturbed_word_indices", []))
        return cls(**d)


@dataclass
class CampaignConfig:
    """Everything one reproducible attack campaign needs.

    ``detector_rate`` is the intended calibration-set flag rate (default 1%).
    Setting ``literal_fpr_reading`` flips the reading so that fraction
    ``1 - detector_rate`` of calibration scores sits above the threshold
    instead; it exists for comparison runs and is off by default.
    """

    task: str = "sst2"
    train_path: str = ""
    eval_path: str = ""
    victim_path: str = ""
    seed: int = 0

    loss_variant: str = "dal"
    reduction: str = "mean"

    # Low-rank adapter hyperparameters.
    adapter_rank: int = 8
    adapter_scaling: float = 32.0
    adapter_dropout: float = 0.1

    # Fine-tuning phase.
    epochs: int = 20
    batch_size: Optional[int] = None
    learning_rate: Optional[float] = None
    max_mask_fraction: float = 0.30
    mlm_temperature: float = 1.0

    # Greedy search phase.
    candidates_per_word: int = 48
    termination_fraction: float = 0.4

    # Detection.
    detector_rate: float = 0.01
    literal_fpr_reading: bool = False
    ridge_epsilon: float = 1e-5

    def __post_init__(self):
        if not (0 < self.termination_fraction <= 1):
            raise ValueError("termination_fraction must be in (0, 1]")
        if not (0 < self.max_mask_fraction <= 1):
            raise ValueError("max_mask_fraction must be in (0, 1]")
        if self.candidates_per_word < 1:
            raise ValueError("candidates_per_word must be >= 1")
        if self.loss_variant not in LOSS_VARIANTS:
            raise ValueError(
                f"unknown loss variant {self.loss_variant!r}; allowed: {LOSS_VARIANTS}"
            )
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        if not (0 < self.detector_rate < 1):
            raise ValueError("detector_rate must be in (0, 1)")

    @property
    def task_spec(self) -> TaskSpec:
        return get_task(self.task)

    def resolved_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return default_hyperparameters(self.task)[0]

    def resolved_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return default_hyperparameters(self.task)[1]

    def effective_detector_rate(self) -> float:
        return 1.0 - self.detector_rate if self.literal_fpr_reading else self.detector_rate

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CampaignConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "CampaignConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def load_dataset(path: str | Path, task: str) -> list[Example]:
    """Read a tab-separated dataset file into Examples.

    Single-sentence tasks expect ``text<TAB>label`` rows; pair tasks expect
    ``text_a<TAB>text_b<TAB>label``. Malformed rows and unknown labels raise
    with the offending 1-based row number.
    """
    spec = get_task(task)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    want = 3 if spec.is_pair else 2
    examples: list[Example] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != want:
                raise ValueError(
                    f"{path}:{lineno}: expected {want} tab-separated columns "
                    f"for task {task!r}, got {len(cols)}"
                )
            try:
                label = spec.label_id(cols[-1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            examples.append(
                Example(
                    id=f"{path.stem}-{lineno}",
                    text_a=cols[0],
                    text_b=cols[1] if spec.is_pair else None,
                    gold_label=label,
                    label_names=spec.label_names,
                )
            )
    return examples


def persist_records(records: Iterable[AttackRecord], path: str | Path) -> None:
    """Write records as JSON lines; an empty iterable yields an empty file."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict(), sort_keys=True) + "\n")


def append_record(record: AttackRecord, path: str | Path) -> None:
    with Path(path).open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record.to_json_dict(), sort_keys=True) + "\n")


def load_records(path: str | Path) -> list[AttackRecord]:
    """Read a JSON-lines record store; corrupt lines raise with their number."""
    path = Path(path)
    records: list[AttackRecord] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(AttackRecord.from_json_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: corrupt record line: {exc}") from None
    return records
