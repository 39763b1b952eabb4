from __future__ import annotations

import pytest

from lowprofile.tokenizer import (CLS, MASK, PAD, SEP, SPLIT, UNK,
                                  Vocabulary, WordTokenizer)

CORPUS = ["the movie was great", "the plot felt boring", "great acting overall"]


@pytest.fixture()
def tokenizer():
    words = [w for line in CORPUS for w in line.split()]
    return WordTokenizer(Vocabulary.build(words))


def test_known_words_are_single_subtokens(tokenizer):
    tok = tokenizer.encode("the movie was great")
    assert len(tok.subtokens) == 4 + 2  # CLS ... SEP
    assert all(end - start == 1 for start, end in tok.word_to_subtoken_spans)


def test_spans_cover_exactly_the_content_subtokens(tokenizer):
    tok = tokenizer.encode("the movie was greatfelt")
    covered = []
    previous_end = None
    for start, end in tok.word_to_subtoken_spans:
        assert start < end
        if previous_end is not None:
            assert start == previous_end  # ordered, disjoint, contiguous
        previous_end = end
        covered.extend(range(start, end))
    # structural tokens sit outside every span; word content tiles the rest
    assert tok.subtokens[0] == tokenizer.cls_id
    assert tok.subtokens[-1] == tokenizer.sep_id
    assert covered == list(range(1, len(tok.subtokens) - 1))


def test_detokenize_round_trips_modulo_whitespace(tokenizer):
    text = "  the   movie\twas great "
    tok = tokenizer.encode(text)
    assert tok.detokenize() == "the movie was great"
    assert tok.detokenize().split() == text.split()


def test_oov_word_falls_back_to_multi_piece_decomposition(tokenizer):
    tok = tokenizer.encode("thee")
    start, end = tok.word_to_subtoken_spans[0]
    assert end - start >= 2
    pieces = [tokenizer.vocab.surface(i) for i in tok.subtokens[start:end]]
    assert pieces[0] == "the" and all(p.startswith("##") for p in pieces[1:])


def test_unknown_character_maps_to_unk(tokenizer):
    tok = tokenizer.encode("éé")
    start, end = tok.word_to_subtoken_spans[0]
    assert [tokenizer.vocab.surface(i) for i in tok.subtokens[start:end]] == [UNK]


def test_split_marker_not_maskable(tokenizer):
    tok = tokenizer.encode_words(["the", SPLIT, "movie"])
    positions = tok.maskable_subtoken_positions(tokenizer.vocab)
    split_span = tok.word_to_subtoken_spans[1]
    assert split_span[0] not in positions
    assert len(positions) == 2
    assert tok.maskable_word_indices() == [0, 2]


def test_reserved_tokens_present(tokenizer):
    for surface in (PAD, UNK, CLS, SEP, MASK, SPLIT):
        assert surface in tokenizer.vocab.piece_to_id


def test_word_piece_predicate(tokenizer):
    vocab = tokenizer.vocab
    assert vocab.is_word_piece(vocab.id_of("great"))
    assert not vocab.is_word_piece(vocab.id_of(MASK))
    assert not vocab.is_word_piece(vocab.id_of(SPLIT))
    assert not vocab.is_word_piece(vocab.id_of("##t"))


def test_empty_sequence_rejected(tokenizer):
    with pytest.raises(ValueError):
        tokenizer.encode_words([])


def test_vocabulary_round_trip(tokenizer):
    rebuilt = Vocabulary.from_dict(tokenizer.vocab.to_dict())
    assert rebuilt.pieces == tokenizer.vocab.pieces
