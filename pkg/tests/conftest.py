"""Shared desk-scale fixtures: a synthetic corpus and a trained tiny victim."""

from __future__ import annotations

import pytest

from lowprofile.core import Example
from lowprofile.models import EncoderConfig, TextEncoderModel
from lowprofile.tasks import get_task
from lowprofile.tokenizer import Vocabulary, WordTokenizer
from lowprofile.toydata import (generate_sentiment_rows, toy_vocabulary,
                                train_victim)
from lowprofile.victim import WhiteBoxVictim


def make_examples(rows, label_names=("negative", "positive")):
    return [
        Example(id=f"ex-{i}", text_a=text, gold_label=label, label_names=label_names)
        for i, (text, label) in enumerate(rows)
    ]


@pytest.fixture(scope="session")
def toy_vocab() -> Vocabulary:
    return toy_vocabulary()


@pytest.fixture(scope="session")
def toy_tokenizer(toy_vocab) -> WordTokenizer:
    return WordTokenizer(toy_vocab)


@pytest.fixture(scope="session")
def train_rows():
    return generate_sentiment_rows(160, seed=11)


@pytest.fixture(scope="session")
def train_examples(train_rows):
    return make_examples(train_rows)


@pytest.fixture(scope="session")
def victim_model(toy_vocab, toy_tokenizer, train_examples) -> TextEncoderModel:
    cfg = EncoderConfig(vocab_size=len(toy_vocab), num_labels=2,
                        dim=32, num_layers=2, num_heads=2, ffn_dim=64)
    return train_victim(train_examples, toy_tokenizer, cfg, seed=3, epochs=25)


@pytest.fixture()
def victim(victim_model, toy_tokenizer) -> WhiteBoxVictim:
    return WhiteBoxVictim(victim_model, toy_tokenizer,
                          get_task("sst2").label_names)


@pytest.fixture()
def fresh_victim(toy_vocab, toy_tokenizer, train_examples):
    """A victim whose model is private to the test (safe to mutate)."""
    cfg = EncoderConfig(vocab_size=len(toy_vocab), num_labels=2,
                        dim=32, num_layers=2, num_heads=2, ffn_dim=64)
    model = train_victim(train_examples, toy_tokenizer, cfg, seed=3, epochs=25)
    return WhiteBoxVictim(model, toy_tokenizer, get_task("sst2").label_names)
