"""Synthetic sentiment corpus and desk-scale victim training.

Provides everything a self-contained demonstration or end-to-end test needs:
a generator for a small binary sentiment dataset, a trainer for the compact
encoder on that data, and a scaffold that writes dataset files, a victim
checkpoint, and a campaign config into a directory.

Run ``python -m lowprofile.toydata OUTDIR`` to build a ready-to-attack
workspace.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .core import CampaignConfig, Example, load_dataset
from .models import EncoderConfig, TextEncoderModel, save_checkpoint
from .tasks import get_task
from .tokenizer import Vocabulary, WordTokenizer

POSITIVE_WORDS = (
    "great", "wonderful", "delightful", "charming", "superb",
    "uplifting", "brilliant", "lovely", "stirring", "joyful",
)
NEGATIVE_WORDS = (
    "awful", "dreadful", "boring", "tedious", "bland",
    "disappointing", "clumsy", "grim", "lifeless", "painful",
)
NEUTRAL_WORDS = (
    "the", "movie", "film", "plot", "acting", "story", "it", "was",
    "felt", "seemed", "ending", "scene", "script", "cast", "pacing",
    "overall", "rather", "quite", "truly", "honestly",
)


def generate_sentiment_rows(n: int, seed: int = 0) -> list[tuple[str, int]]:
    """n synthetic (sentence, label) rows; label 1 is positive sentiment.

    Sentences are 6 to 12 words with 2 to 4 polarity words matching the
    label, so a small encoder separates them cleanly.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        label = int(rng.integers(0, 2))
        polarity = POSITIVE_WORDS if label == 1 else NEGATIVE_WORDS
        length = int(rng.integers(6, 13))
        n_polar = int(rng.integers(2, 5))
        words = [str(rng.choice(NEUTRAL_WORDS)) for _ in range(length - n_polar)]
        words += [str(rng.choice(polarity)) for _ in range(n_polar)]
        rng.shuffle(words)
        rows.append((" ".join(words), label))
    return rows


def write_dataset(rows: list[tuple[str, int]], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for text, label in rows:
            fh.write(f"{text}\t{label}\n")


def toy_vocabulary() -> Vocabulary:
    return Vocabulary.build(list(POSITIVE_WORDS + NEGATIVE_WORDS + NEUTRAL_WORDS))


def train_victim(examples: list[Example], tokenizer: WordTokenizer,
                 cfg: EncoderConfig, seed: int = 0, epochs: int = 30,
                 learning_rate: float = 1e-3, batch_size: int = 32
                 ) -> TextEncoderModel:
    """Train the full encoder + classifier on labeled examples."""
    torch.manual_seed(seed)
    model = TextEncoderModel(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    tokenized = [list(tokenizer.encode_words(ex.attack_words()).subtokens)
                 for ex in examples]
    labels = torch.tensor([ex.gold_label for ex in examples], dtype=torch.long)
    rng = np.random.default_rng(seed)
    model.train()
    for _ in range(epochs):
        order = rng.permutation(len(examples))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            width = max(len(tokenized[i]) for i in idx)
            input_ids = torch.full((len(idx), width), tokenizer.pad_id, dtype=torch.long)
            mask = torch.zeros(len(idx), width, dtype=torch.long)
            for row, i in enumerate(idx):
                ids = tokenized[i]
                input_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
                mask[row, : len(ids)] = 1
            logits, _ = model.classify(input_ids=input_ids, attention_mask=mask)
            loss = F.cross_entropy(logits, labels[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    model.eval()
    return model


def build_toy_workspace(directory: str | Path, seed: int = 0,
                        n_train: int = 200, n_eval: int = 60,
                        epochs: int = 20) -> Path:
    """Write dataset files, a trained victim checkpoint, and a campaign
    config under ``directory``; returns the config path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train_path = directory / "train.tsv"
    eval_path = directory / "eval.tsv"
    write_dataset(generate_sentiment_rows(n_train, seed=seed), train_path)
    write_dataset(generate_sentiment_rows(n_eval, seed=seed + 1), eval_path)

    task = get_task("sst2")
    vocab = toy_vocabulary()
    tokenizer = WordTokenizer(vocab)
    cfg = EncoderConfig(vocab_size=len(vocab), num_labels=task.num_labels,
                        dim=32, num_layers=2, num_heads=2, ffn_dim=64)
    train_examples = load_dataset(train_path, "sst2")
    model = train_victim(train_examples, tokenizer, cfg, seed=seed)
    victim_path = directory / "victim.pt"
    save_checkpoint(model, vocab, victim_path)

    config = CampaignConfig(
        task="sst2",
        train_path=str(train_path),
        eval_path=str(eval_path),
        victim_path=str(victim_path),
        seed=seed,
        epochs=epochs,
        batch_size=32,
        learning_rate=5e-3,
        candidates_per_word=48,
    )
    config_path = directory / "config.json"
    config.save(config_path)
    return config_path


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m lowprofile.toydata OUTDIR", file=sys.stderr)
        return 2
    config_path = build_toy_workspace(argv[0])
    print(f"wrote toy workspace; config at {config_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
