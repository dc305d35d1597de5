"""Word-level codec over the closed grammar, plus the structural tokens.

Specials (ids 0..8, fixed order) come first; corpus words follow in
lexicographic order, so the id assignment is stable across builds of the
same corpus — checkpoints depend on that.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import world

SPECIAL_TOKENS = (
    "<bos>", "<eos>", "<pad>",
    "<dream>", "<dream/>",
    "<IMG>", "<IMG/>",
    "<dslot>", "<islot>",
)


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    words: tuple  # full token list, specials first

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise CodecError("duplicate tokens in vocabulary")
        if self.words[:len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise CodecError("vocabulary must start with the special tokens")
        object.__setattr__(self, "_ids", {w: i for i, w in enumerate(self.words)})

    def __len__(self):
        return len(self.words)

    # special ids
    @property
    def bos(self):
        return 0

    @property
    def eos(self):
        return 1

    @property
    def pad(self):
        return 2

    @property
    def dream(self):
        return 3

    @property
    def dream_end(self):
        return 4

    @property
    def img(self):
        return 5

    @property
    def img_end(self):
        return 6

    @property
    def dslot(self):
        return 7

    @property
    def islot(self):
        return 8

    @property
    def n_specials(self):
        return len(SPECIAL_TOKENS)

    def word_ids(self):
        """Ids of plain words (everything after the specials)."""
        return list(range(self.n_specials, len(self.words)))

    def id_of(self, word):
        try:
            return self._ids[word]
        except KeyError:
            raise CodecError(f"word not in vocabulary: {word!r}") from None

    def encode(self, words):
        return [self.id_of(w) for w in words]

    def decode(self, ids):
        out = []
        for i in ids:
            i = int(i)
            if i < 0 or i >= len(self.words):
                raise CodecError(f"id out of range: {i}")
            if i in (self.dslot, self.islot, self.pad):
                raise CodecError(f"placeholder id in decode: {self.words[i]}")
            out.append(self.words[i])
        return out


def build_vocab(documents) -> Vocabulary:
    """Vocabulary over a corpus plus the question/answer and instruction words."""
    if not documents:
        raise CodecError("cannot build a vocabulary from an empty corpus")
    words = set(world.corpus_words(documents))
    words.update(world.grammar_words())
    return Vocabulary(SPECIAL_TOKENS + tuple(sorted(words)))


VOCAB_HEADER = "#dreamforge-vocab v1"


def save_vocab(path, vocab: Vocabulary):
    with open(path, "w", encoding="utf-8") as f:
        f.write(VOCAB_HEADER + "\n")
        for i, w in enumerate(vocab.words):
            f.write(f"{i}\t{w}\n")


def load_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != VOCAB_HEADER:
            raise CodecError(f"not a vocabulary file (header {header!r})")
        words = []
        for line in f:
            idx, word = line.rstrip("\n").split("\t")
            if int(idx) != len(words):
                raise CodecError(f"non-contiguous id {idx} in vocabulary file")
            words.append(word)
    return Vocabulary(tuple(words))
