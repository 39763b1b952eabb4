"""Whitespace word tokenizer with a corpus-built subtoken vocabulary.

Words are the unit of perturbation accounting; subtokens are the unit the
encoder consumes. In-vocabulary words map to a single subtoken. Out-of-
vocabulary words fall back to greedy longest-match decomposition into
character pieces (continuation pieces carry a ``##`` prefix), so a word may
span several subtokens. The surface word list is kept alongside the ids,
which makes detokenization exact up to whitespace normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
# Inert marker joining the two sentences of a pair task. It is rendered in
# adversarial text but never masked or substituted.
SPLIT = "<SPLIT>"

SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)


class Vocabulary:
    """Piece inventory: special tokens, whole words, and char fallback pieces."""

    def __init__(self, pieces: list[str]):
        self.pieces = list(pieces)
        self.piece_to_id = {p: i for i, p in enumerate(self.pieces)}
        if len(self.piece_to_id) != len(self.pieces):
            raise ValueError("duplicate pieces in vocabulary")
        for tok in SPECIAL_TOKENS + (SPLIT,):
            if tok not in self.piece_to_id:
                raise ValueError(f"vocabulary missing reserved token {tok!r}")

    @classmethod
    def build(cls, corpus_words: list[str]) -> "Vocabulary":
        """Collect unique corpus words plus character fallback pieces."""
        words = sorted({w for w in corpus_words if w and w != SPLIT})
        chars = sorted({c for w in words for c in w})
        pieces = list(SPECIAL_TOKENS) + [SPLIT] + words
        seen = set(pieces)
        for c in chars:
            for form in (c, "##" + c):
                if form not in seen:
                    pieces.append(form)
                    seen.add(form)
        return cls(pieces)

    def __len__(self) -> int:
        return len(self.pieces)

    def id_of(self, piece: str) -> int:
        return self.piece_to_id.get(piece, self.piece_to_id[UNK])

    def surface(self, piece_id: int) -> str:
        return self.pieces[piece_id]

    def is_special(self, piece_id: int) -> bool:
        return self.pieces[piece_id] in SPECIAL_TOKENS

    def is_word_piece(self, piece_id: int) -> bool:
        """True for pieces usable as standalone substitution candidates."""
        p = self.pieces[piece_id]
        return p not in SPECIAL_TOKENS and p != SPLIT and not p.startswith("##")

    def to_dict(self) -> dict:
        return {"pieces": self.pieces}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["pieces"])


@dataclass(frozen=True)
class TokenizedText:
    """Word-aligned subtoken encoding of one sentence (or joined pair).

    ``word_to_subtoken_spans[i]`` is the half-open ``(start, end)`` range of
    ``subtokens`` produced by ``words[i]``. Spans are disjoint, ordered, and
    together cover exactly the non-special subtokens ([CLS]/[SEP] sit outside
    every span).
    """

    words: tuple[str, ...]
    word_to_subtoken_spans: tuple[tuple[int, int], ...]
    subtokens: tuple[int, ...]

    def detokenize(self) -> str:
        return " ".join(self.words)

    def maskable_word_indices(self) -> list[int]:
        return [i for i, w in enumerate(self.words) if w != SPLIT]

    def maskable_subtoken_positions(self, vocab: Vocabulary) -> list[int]:
        """Subtoken positions eligible for masking: inside a span, not SPLIT."""
        out = []
        for w, (start, end) in zip(self.words, self.word_to_subtoken_spans):
            if w == SPLIT:
                continue
            out.extend(range(start, end))
        return out


class WordTokenizer:
    """Splits on whitespace and encodes words against a :class:`Vocabulary`."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.pad_id = vocab.id_of(PAD)
        self.unk_id = vocab.id_of(UNK)
        self.cls_id = vocab.id_of(CLS)
        self.sep_id = vocab.id_of(SEP)
        self.mask_id = vocab.id_of(MASK)
        self.split_id = vocab.id_of(SPLIT)

    @staticmethod
    def words_of(text: str) -> list[str]:
        return text.split()

    def encode_word(self, word: str) -> list[int]:
        if word in self.vocab.piece_to_id:
            return [self.vocab.piece_to_id[word]]
        # Greedy longest-match over pieces; continuation pieces use ##form.
        ids: list[int] = []
        pos = 0
        while pos < len(word):
            matched = None
            for end in range(len(word), pos, -1):
                piece = word[pos:end] if pos == 0 else "##" + word[pos:end]
                if piece in self.vocab.piece_to_id:
                    matched = (self.vocab.piece_to_id[piece], end)
                    break
            if matched is None:
                return [self.unk_id]
            ids.append(matched[0])
            pos = matched[1]
        return ids

    def encode_words(self, words: list[str]) -> TokenizedText:
        if not words:
            raise ValueError("cannot encode an empty word sequence")
        subtokens: list[int] = [self.cls_id]
        spans: list[tuple[int, int]] = []
        for w in words:
            piece_ids = self.encode_word(w)
            spans.append((len(subtokens), len(subtokens) + len(piece_ids)))
            subtokens.extend(piece_ids)
        subtokens.append(self.sep_id)
        return TokenizedText(
            words=tuple(words),
            word_to_subtoken_spans=tuple(spans),
            subtokens=tuple(subtokens),
        )

    def encode(self, text: str) -> TokenizedText:
        return self.encode_words(self.words_of(text))
