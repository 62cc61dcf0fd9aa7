"""Monolingual corpora: tokenizing, vocabularies, encoding and mini-batches."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

UNK = "<unk>"
# sentence boundary markers live in the model, never in a vocabulary
BOS = "<s>"
EOS = "</s>"
RESERVED = frozenset({UNK, BOS, EOS})
PAD_ID = 0


class CorpusError(ValueError):
    pass


def tokenize_line(line: str) -> list[str]:
    """Lowercase and split on whitespace runs."""
    return line.lower().split()


def read_lines(path: str | os.PathLike) -> Iterator[list[str]]:
    """Yield the tokens of each line of a UTF-8 file.

    Undecodable bytes raise :class:`CorpusError` naming the 1-based line.
    """
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid UTF-8 ({exc.reason})") from exc
            yield tokenize_line(text)


@dataclass(frozen=True)
class Vocabulary:
    """Token/id bijection.  Ids follow descending frequency; UNK comes last."""

    lang: str
    tokens: tuple[str, ...]
    counts: tuple[int, ...]
    min_count: int = 1
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tokens) != len(self.counts):
            raise CorpusError("tokens and counts differ in length")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")
        if self.tokens.count(UNK) != 1:
            raise CorpusError("vocabulary must contain UNK exactly once")
        if BOS in index or EOS in index:
            raise CorpusError("BOS/EOS must not be vocabulary entries")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def unk_id(self) -> int:
        return self._index[UNK]

    def id_of(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def count_of(self, idx: int) -> int:
        return self.counts[idx]


def build_vocab(token_stream: Iterable[Iterable[str]], min_count: int = 1, lang: str = "") -> Vocabulary:
    """Keep tokens seen at least ``min_count`` times, plus UNK.

    ``token_stream`` yields token lists (one per sentence).  Ties in frequency
    are broken by token order so ids are fully deterministic.  UNK's count is
    the number of dropped occurrences.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counter: Counter[str] = Counter()
    for toks in token_stream:
        counter.update(toks)
    if not counter:
        raise CorpusError("empty corpus")
    kept = sorted(
        ((tok, c) for tok, c in counter.items() if c >= min_count and tok not in RESERVED),
        key=lambda kv: (-kv[1], kv[0]),
    )
    unk_count = sum(counter.values()) - sum(c for _, c in kept)
    tokens = tuple(t for t, _ in kept) + (UNK,)
    counts = tuple(c for _, c in kept) + (unk_count,)
    return Vocabulary(lang=lang, tokens=tokens, counts=counts, min_count=min_count)


@dataclass(frozen=True)
class Sentence:
    lang: str
    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


def encode_sentence(vocab: Vocabulary, tokens: Sequence[str]) -> Sentence | None:
    """Map tokens to ids, unknown ones to UNK.  Returns None for empty input."""
    if not tokens:
        return None
    return Sentence(vocab.lang, tuple(vocab.id_of(t) for t in tokens))


@dataclass
class Corpus:
    lang: str
    sentences: list[Sentence]
    vocab: Vocabulary

    def __post_init__(self):
        for s in self.sentences:
            if s.lang != self.lang:
                raise CorpusError(f"sentence of language {s.lang!r} in {self.lang!r} corpus")

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    @classmethod
    def from_token_lists(
        cls,
        lang: str,
        lines: Iterable[Sequence[str]],
        min_count: int = 1,
        vocab: Vocabulary | None = None,
        max_len: int | None = None,
    ) -> "Corpus":
        """Build (or reuse) a vocabulary and encode every nonblank line.

        ``max_len`` truncates longer sentences; None keeps them whole.
        """
        lines = [list(t) for t in lines if t]
        if max_len is not None:
            lines = [t[:max_len] for t in lines]
        if vocab is None:
            vocab = build_vocab(lines, min_count=min_count, lang=lang)
        sents = [encode_sentence(vocab, t) for t in lines]
        return cls(lang, [Sentence(lang, s.ids) for s in sents if s is not None], vocab)

    @classmethod
    def from_file(
        cls,
        lang: str,
        path: str | os.PathLike,
        min_count: int = 1,
        vocab: Vocabulary | None = None,
        max_len: int | None = None,
    ) -> "Corpus":
        return cls.from_token_lists(lang, read_lines(path), min_count=min_count, vocab=vocab, max_len=max_len)


@dataclass(frozen=True)
class Batch:
    lang: str
    ids: np.ndarray  # (B, T) int64, padded with PAD_ID
    lengths: np.ndarray  # (B,)

    @property
    def mask(self) -> np.ndarray:
        t = self.ids.shape[1]
        return np.arange(t)[None, :] < self.lengths[:, None]

    @property
    def size(self) -> int:
        return int(self.ids.shape[0])

    @classmethod
    def from_sentences(cls, sentences: Sequence[Sentence], pad_to: int | None = None) -> "Batch":
        if not sentences:
            raise CorpusError("cannot batch zero sentences")
        lengths = np.array([len(s) for s in sentences], dtype=np.int64)
        width = int(lengths.max()) if pad_to is None else max(pad_to, int(lengths.max()))
        ids = np.full((len(sentences), width), PAD_ID, dtype=np.int64)
        for row, s in enumerate(sentences):
            ids[row, : len(s)] = s.ids
        return cls(sentences[0].lang, ids, lengths)


def make_batches(corpus: Corpus, batch_size: int, rng_seed) -> list[Batch]:
    """Shuffle by seed, then cut into consecutive padded batches."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not corpus.sentences:
        raise CorpusError(f"corpus {corpus.lang!r} is empty")
    order = np.random.default_rng(rng_seed).permutation(len(corpus.sentences))
    return [
        Batch.from_sentences([corpus.sentences[i] for i in order[lo : lo + batch_size]])
        for lo in range(0, len(order), batch_size)
    ]


def interleave(
    streams: Sequence[Sequence[Batch]],
    refill: Callable[[int, int], Sequence[Batch]] | None = None,
) -> Iterator[Batch]:
    """Round-robin over per-language batch lists.

    Shorter streams are restarted until the longest one is used up; the
    ``c``-th restart of stream ``i`` uses ``refill(i, c)`` (or the original
    list again when ``refill`` is None).
    """
    if len(streams) < 2:
        raise CorpusError("interleave needs at least two streams")
    if any(len(s) == 0 for s in streams):
        raise CorpusError("interleave got an empty stream")
    rounds = max(len(s) for s in streams)
    current = [list(s) for s in streams]
    cycle = [0] * len(streams)
    pos = [0] * len(streams)
    for _ in range(rounds):
        for i in range(len(streams)):
            if pos[i] == len(current[i]):
                cycle[i] += 1
                nxt = refill(i, cycle[i]) if refill is not None else streams[i]
                if len(nxt) == 0:
                    raise CorpusError(f"refill produced an empty stream for index {i}")
                current[i] = list(nxt)
                pos[i] = 0
            yield current[i][pos[i]]
            pos[i] += 1
