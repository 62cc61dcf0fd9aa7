"""Synthetic "cipher" corpora with a known word-level translation.

A small stochastic template grammar generates sentences over a fixed word
list.  Each further language is the same sentence multiset rewritten through
a random vocabulary bijection and shuffled independently, so no sentence
pairing survives.  The bijection is the gold dictionary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# (class name, number of words); sizes sum to the default vocabulary of 150
WORD_CLASSES: tuple[tuple[str, int], ...] = (
    ("det", 6),
    ("pron", 6),
    ("adj", 22),
    ("noun", 48),
    ("verb", 38),
    ("prep", 10),
    ("adv", 12),
    ("conj", 5),
    ("punct", 3),
)

TEMPLATES: tuple[tuple[str, ...], ...] = (
    ("det", "noun", "verb", "det", "noun", "punct"),
    ("det", "adj", "noun", "verb", "det", "noun", "punct"),
    ("pron", "verb", "det", "adj", "noun", "prep", "det", "noun", "punct"),
    ("det", "noun", "verb", "adv", "punct"),
    ("pron", "adv", "verb", "det", "noun", "punct"),
    ("det", "noun", "prep", "det", "noun", "verb", "adv", "punct"),
    ("det", "noun", "verb", "det", "noun", "conj", "pron", "verb", "det", "adj", "noun", "punct"),
    ("prep", "det", "noun", "pron", "verb", "det", "noun", "punct"),
)


@dataclass
class Grammar:
    words: list[str]
    word_class: list[str]
    members: dict[str, np.ndarray]
    base: dict[str, np.ndarray]  # Zipf-like prior over each class's members
    latent: np.ndarray  # (V, r) word features driving bigram preferences
    sharpness: float

    def next_probs(self, prev: int | None, cls: str) -> np.ndarray:
        p = self.base[cls]
        if prev is not None:
            aff = self.sharpness * (self.latent[self.members[cls]] @ self.latent[prev])
            p = p * np.exp(aff - aff.max())
        return p / p.sum()


def make_grammar(vocab_size: int = 150, seed: int = 0, rank: int = 6, sharpness: float = 4.0, zipf: float = 1.3) -> Grammar:
    sizes = dict(WORD_CLASSES)
    total = sum(sizes.values())
    if vocab_size != total:
        # stretch content classes to hit the requested size
        scale = (vocab_size - sizes["det"] - sizes["punct"]) / (total - sizes["det"] - sizes["punct"])
        for k in sizes:
            if k not in ("det", "punct"):
                sizes[k] = max(2, int(round(sizes[k] * scale)))
        sizes["noun"] += vocab_size - sum(sizes.values())
    rng = np.random.default_rng(seed)
    words, word_class, members = [], [], {}
    for cls, n in sizes.items():
        ids = np.arange(len(words), len(words) + n)
        members[cls] = ids
        words += [f"{cls}{j}" for j in range(n)]
        word_class += [cls] * n
    base = {}
    for cls, ids in members.items():
        w = 1.0 / np.arange(1, len(ids) + 1) ** zipf
        base[cls] = w / w.sum()
    latent = rng.standard_normal((len(words), rank)) / np.sqrt(rank)
    return Grammar(words, word_class, members, base, latent, sharpness)


def generate(grammar: Grammar, n_sentences: int, seed: int = 0) -> list[list[str]]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_sentences):
        template = TEMPLATES[rng.integers(len(TEMPLATES))]
        prev = None
        sent = []
        for cls in template:
            ids = grammar.members[cls]
            prev = int(ids[rng.choice(len(ids), p=grammar.next_probs(prev, cls))])
            sent.append(grammar.words[prev])
        out.append(sent)
    return out


@dataclass
class CipherCorpora:
    sentences: dict[str, list[list[str]]]  # language -> token lists
    bijections: dict[str, dict[str, str]]  # language -> {base word: cipher word}
    base_lang: str

    def gold(self, src: str, tgt: str) -> dict[str, str]:
        """Word translation table from ``src`` to ``tgt``."""
        to_base = {v: k for k, v in self.bijections[src].items()}
        return {w: self.bijections[tgt][b] for w, b in to_base.items()}


def cipher_corpora(
    languages: tuple[str, ...] = ("a", "b"),
    n_sentences: int = 2000,
    vocab_size: int = 150,
    seed: int = 0,
) -> CipherCorpora:
    """Generate one base corpus and rewrite it once per language.

    The first language keeps the grammar's word forms (its bijection is the
    identity).  Every language's sentence order is shuffled independently.
    """
    grammar = make_grammar(vocab_size, seed)
    base = generate(grammar, n_sentences, seed + 1)
    rng = np.random.default_rng(seed + 2)
    sentences, bijections = {}, {}
    for n, lang in enumerate(languages):
        if n == 0:
            mapping = {w: w for w in grammar.words}
        else:
            perm = rng.permutation(len(grammar.words))
            mapping = {w: f"{lang}{perm[j]}" for j, w in enumerate(grammar.words)}
        order = rng.permutation(len(base))
        sentences[lang] = [[mapping[w] for w in base[i]] for i in order]
        bijections[lang] = mapping
    return CipherCorpora(sentences, bijections, languages[0])
