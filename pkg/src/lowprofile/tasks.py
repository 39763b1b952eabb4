"""Task registry: label schemas, dataset column layouts, and prompt data.

Every supported classification task is described by a :class:`TaskSpec`.
Datasets are plain UTF-8 tab-separated files with a fixed per-task column
order:

* single-sentence tasks: ``text<TAB>label``
* sentence-pair tasks:   ``text_a<TAB>text_b<TAB>label``

The label column accepts either the label name or its integer id; ids are
the index of the name in ``label_names``.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class TaskSpec:
    """Static description of one classification task."""

    name: str
    label_names: tuple[str, ...]
    is_pair: bool
    # Response-format sentence appended to every zero-shot prompt.
    response_format: str
    # Five instruction variants used for black-box prompting runs.
    instructions: tuple[str, ...] = field(default=())

    @property
    def num_labels(self) -> int:
        return len(self.label_names)

    def label_id(self, raw: str) -> int:
        """Map a raw label cell (name or integer id) to its id.

        Raises ValueError listing the allowed labels when the cell is
        neither a known name nor a valid id.
        """
        raw = raw.strip()
        if raw in self.label_names:
            return self.label_names.index(raw)
        if raw.isdigit() and int(raw) < len(self.label_names):
            return int(raw)
        raise ValueError(
            f"unknown label {raw!r} for task {self.name!r}; "
            f"allowed: {list(self.label_names)} or ids 0..{len(self.label_names) - 1}"
        )


def _fmt(a: str, b: str) -> str:
    return f"Respond with '{a}' or '{b}' in lowercase, only one word."


TASKS: dict[str, TaskSpec] = {
    spec.name: spec
    for spec in [
        TaskSpec(
            name="sst2",
            label_names=("negative", "positive"),
            is_pair=False,
            response_format=_fmt("positive", "negative"),
            instructions=(
                "Evaluate the sentiment of the given text.",
                "Please identify the emotional tone of this passage.",
                "Determine the overall sentiment of this sentence.",
                "After examining the following expression, label its emotion.",
                "Assess the mood of the following quote.",
            ),
        ),
        TaskSpec(
            name="cola",
            label_names=("unacceptable", "acceptable"),
            is_pair=False,
            response_format=_fmt("acceptable", "unacceptable"),
            instructions=(
                "Assess the grammatical structure of the given text.",
                "Assess the following sentence and determine if it is grammatically correct.",
                "Examine the given sentence and decide if it is grammatically sound.",
                "Check the grammar of the following sentence.",
                "Analyze the provided sentence and classify its grammatical correctness.",
            ),
        ),
        TaskSpec(
            name="rte",
            label_names=("entailment", "not_entailment"),
            is_pair=True,
            response_format=_fmt("entailment", "not_entailment"),
            instructions=(
                "Assess the relationship between sentence1 and sentence2.",
                "Review the sentence1 and sentence2 and categorize their relationship.",
                "Considering the sentence1 and sentence2, identify their relationship.",
                "Please classify the relationship between sentence1 and sentence2.",
                "Indicate the connection between sentence1 and sentence2.",
            ),
        ),
        TaskSpec(
            name="mrpc",
            label_names=("not_equivalent", "equivalent"),
            is_pair=True,
            response_format=_fmt("equivalent", "not_equivalent"),
            instructions=(
                "Assess whether sentence1 and sentence2 share the same semantic meaning.",
                "Compare sentence1 and sentence2 and determine if they share the same semantic meaning.",
                "Do sentence1 and sentence2 have the same underlying meaning?",
                "Do the meanings of sentence1 and sentence2 align?",
                "Please analyze sentence1 and sentence2 and indicate if their meanings are the same.",
            ),
        ),
    ]
}

# Per-task fine-tuning defaults (batch size, learning rate) keyed by backbone
# family; used when the campaign config leaves them unset.
DEFAULT_HYPERPARAMETERS: dict[str, dict[str, tuple[int, float]]] = {
    "bert": {
        "sst2": (128, 1e-4),
        "cola": (128, 5e-5),
        "rte": (32, 1e-5),
        "mrpc": (128, 1e-3),
    },
    "roberta": {
        "sst2": (128, 5e-5),
        "cola": (128, 1e-4),
        "rte": (32, 1e-5),
        "mrpc": (128, 1e-3),
    },
}


def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[name]
    except KeyError:
        raise KeyError(f"unknown task {name!r}; known tasks: {sorted(TASKS)}") from None


def default_hyperparameters(task: str, backbone: str = "bert") -> tuple[int, float]:
    """(batch_size, learning_rate) defaults for a known task, else (32, 1e-3)."""
    return DEFAULT_HYPERPARAMETERS.get(backbone, {}).get(task, (32, 1e-3))
