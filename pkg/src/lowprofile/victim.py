"""Uniform interfaces over attack targets.

White-box victims expose raw class scores and pooled embeddings and keep an
atomic count of classification queries. Black-box victims only return labels,
obtained by rendering zero-shot prompt templates against a pluggable
text-completion client and parsing the completion for label words.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeoutError
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .models import TextEncoderModel, adapters_enabled, load_checkpoint
from .tasks import TaskSpec
from .tokenizer import WordTokenizer


class WhiteBoxVictim:
    """A frozen sequence classifier with logit and embedding access.

    The query counter counts classification calls (one per scored text,
    batched or not); embedding extraction is not a query. If adapters are
    attached to the underlying model they are forced off here, so the victim
    always behaves as the frozen classifier.
    """

    def __init__(self, model: TextEncoderModel, tokenizer: WordTokenizer,
                 label_names: Sequence[str]):
        if model.cfg.num_labels != len(label_names):
            raise ValueError(
                f"model has {model.cfg.num_labels} outputs but "
                f"{len(label_names)} label names were given"
            )
        self.model = model
        self.tokenizer = tokenizer
        self.label_names = tuple(label_names)
        self._queries = 0
        self._lock = threading.Lock()

    @classmethod
    def from_checkpoint(cls, path, task: TaskSpec) -> "WhiteBoxVictim":
        model, tokenizer = load_checkpoint(path)
        return cls(model, tokenizer, task.label_names)

    @property
    def embedding_dim(self) -> int:
        return self.model.cfg.dim

    @property
    def query_count(self) -> int:
        """Lifetime classification-query count; monotonically non-decreasing."""
        with self._lock:
            return self._queries

    def _count(self, n: int) -> None:
        with self._lock:
            self._queries += n

    def _encode_batch(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        if not texts:
            raise ValueError("no texts given")
        encoded = []
        for text in texts:
            if not text.strip():
                raise ValueError("cannot score empty text")
            ids = list(self.tokenizer.encode(text).subtokens)
            encoded.append(ids[: self.model.cfg.max_positions])
        width = max(len(ids) for ids in encoded)
        input_ids = torch.full((len(encoded), width), self.tokenizer.pad_id, dtype=torch.long)
        mask = torch.zeros(len(encoded), width, dtype=torch.long)
        for i, ids in enumerate(encoded):
            input_ids[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            mask[i, : len(ids)] = 1
        return input_ids, mask

    def _forward(self, texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        input_ids, mask = self._encode_batch(texts)
        self.model.eval()
        with torch.no_grad(), adapters_enabled(self.model, False):
            logits, pooled = self.model.classify(input_ids=input_ids, attention_mask=mask)
        return logits.numpy().astype(np.float64), pooled.numpy().astype(np.float64)

    def predict_logits(self, texts: str | Sequence[str]) -> np.ndarray:
        """Raw class scores; [num_labels] for a single text, [n, num_labels]
        for a batch. Counts one query per scored text."""
        single = isinstance(texts, str)
        batch = [texts] if single else list(texts)
        logits, _ = self._forward(batch)
        self._count(len(batch))
        return logits[0] if single else logits

    def predict_label(self, text: str) -> int:
        return int(np.argmax(self.predict_logits(text)))

    def embed(self, texts: str | Sequence[str]) -> np.ndarray:
        """Pooled representation consumed by the classification head."""
        single = isinstance(texts, str)
        batch = [texts] if single else list(texts)
        _, pooled = self._forward(batch)
        return pooled[0] if single else pooled

    def predict_with_embedding(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """(logits, pooled) in one forward pass; counts one query."""
        logits, pooled = self._forward([text])
        self._count(1)
        return logits[0], pooled[0]


@dataclass(frozen=True)
class PromptTemplate:
    """Instruction + response-format + single input slot, rendered verbatim."""

    instruction: str
    response_format: str

    def render(self, text: str) -> str:
        return f"{self.instruction} {self.response_format}\nInput: {text}\nAnswer:"


def templates_for_task(task: TaskSpec) -> list[PromptTemplate]:
    return [PromptTemplate(instr, task.response_format) for instr in task.instructions]


def parse_label_completion(completion: str, label_names: Sequence[str]) -> Optional[int]:
    """Earliest case-insensitive label-word occurrence wins; longer labels
    beat shorter ones starting at the same position (so a negated form is
    not shadowed by its substring). Returns None when nothing matches."""
    haystack = completion.lower()
    best: Optional[tuple[int, int, int]] = None  # (start, -len, label_id)
    for label_id, name in enumerate(label_names):
        pos = haystack.find(name.lower())
        if pos < 0:
            continue
        key = (pos, -len(name), label_id)
        if best is None or key < best:
            best = key
    return best[2] if best is not None else None


class TransportError(RuntimeError):
    """Raised when the completion client keeps failing after retries."""


class BlackBoxVictim:
    """Label-only victim driven by prompt templates over a text client.

    ``client`` maps a rendered prompt to a completion string and may raise;
    failures (including per-request timeouts, when ``timeout`` is set) are
    retried up to ``max_retries`` times before surfacing as
    :class:`TransportError`. Unparseable completions are returned as None
    and must be treated as unsuccessful attacks by callers.
    """

    def __init__(self, client: Callable[[str], str],
                 templates: Sequence[PromptTemplate],
                 label_names: Sequence[str],
                 max_retries: int = 2,
                 retry_sleep: float = 0.0,
                 timeout: Optional[float] = None):
        if not templates:
            raise ValueError("need at least one prompt template")
        self.client = client
        self.templates = list(templates)
        self.label_names = tuple(label_names)
        self.max_retries = max_retries
        self.retry_sleep = retry_sleep
        self.timeout = timeout
        self._queries = 0
        self._lock = threading.Lock()

    @property
    def query_count(self) -> int:
        with self._lock:
            return self._queries

    def _complete(self, prompt: str) -> str:
        if self.timeout is None:
            return self.client(prompt)
        with ThreadPoolExecutor(max_workers=1) as pool:
            future = pool.submit(self.client, prompt)
            try:
                return future.result(timeout=self.timeout)
            except FutureTimeoutError:
                raise TimeoutError(
                    f"completion exceeded {self.timeout}s") from None

    def classify(self, template: PromptTemplate, text: str) -> Optional[int]:
        prompt = template.render(text)
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                completion = self._complete(prompt)
                break
            except Exception as exc:
                last_error = exc
                if attempt < self.max_retries and self.retry_sleep:
                    time.sleep(self.retry_sleep)
        else:
            raise TransportError(
                f"completion client failed after {self.max_retries + 1} attempts"
            ) from last_error
        with self._lock:
            self._queries += 1
        return parse_label_completion(completion, self.label_names)

    def classify_many(self, template: PromptTemplate, texts: Sequence[str],
                      max_concurrency: int = 4) -> list[Optional[int]]:
        """Classify a batch with bounded concurrent requests."""
        with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
            return list(pool.map(lambda t: self.classify(template, t), texts))
