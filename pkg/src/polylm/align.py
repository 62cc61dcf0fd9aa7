"""CSLS retrieval and precision@k bilingual lexicon induction.

CSLS(x, y) = 2 cos(x, y) - rT(x) - rS(y), where rT(x) is the mean cosine of
source vector x to its K nearest target vectors and rS(y) the mean cosine of
target vector y to its K nearest source vectors.  rT(x) is constant along a
source row, so rankings of targets per source word do not depend on it;
retrieval drops it by default.

All rankings break ties towards the lower index.
"""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Container, Iterable, Sequence

import numpy as np

from .corpus import UNK

# rows of the cosine matrix are computed in blocks of this many sources
_CHUNK = 2048


class AlignError(ValueError):
    pass


@dataclass
class EmbeddingSpace:
    lang: str
    tokens: list[str]
    matrix: np.ndarray
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.tokens = list(self.tokens)
        self.matrix = np.asarray(self.matrix)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.tokens):
            raise AlignError(f"{len(self.tokens)} tokens but matrix of shape {self.matrix.shape}")
        self._index = {}
        for i, tok in enumerate(self.tokens):
            if tok in self._index:
                raise AlignError(f"duplicate token {tok!r} in {self.lang!r} space")
            self._index[tok] = i

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"{token!r} not in {self.lang!r} space") from None

    def vector(self, token: str) -> np.ndarray:
        return self.matrix[self.index(token)]

    def select(self, rows: Sequence[int]) -> "EmbeddingSpace":
        rows = list(rows)
        return EmbeddingSpace(self.lang, [self.tokens[i] for i in rows], self.matrix[rows])

    def without(self, drop: Container[str] = (UNK,)) -> "EmbeddingSpace":
        return self.select([i for i, t in enumerate(self.tokens) if t not in drop])

    def normalized(self) -> np.ndarray:
        """Unit-length rows in float64; zero rows are an error."""
        m = np.asarray(self.matrix, dtype=np.float64)
        norms = np.linalg.norm(m, axis=1)
        bad = np.flatnonzero(norms == 0)
        if bad.size:
            raise AlignError(f"zero-norm embedding for {self.tokens[bad[0]]!r} in {self.lang!r} space")
        return m / norms[:, None]


@dataclass(frozen=True)
class CslsConfig:
    k: int = 10
    omit_rt: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"CSLS K must be positive, got {self.k}")


def cosine(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise AlignError("cosine of a zero-norm vector")
    return float(np.dot(x, y) / (nx * ny))


def _topk_mean(sims: np.ndarray, k: int) -> np.ndarray:
    """Row-wise mean of the ``k`` largest entries, summed largest first."""
    n = sims.shape[1]
    if k > n:
        raise AlignError(f"K={k} exceeds the {n} available neighbours")
    top = -np.partition(-sims, k - 1, axis=1)[:, :k] if k < n else sims.copy()
    top = -np.sort(-top, axis=1)
    return np.cumsum(top, axis=1)[:, -1] / k


def knn_mean_sim(x, opposing: EmbeddingSpace | np.ndarray, k: int) -> float:
    """Mean cosine of ``x`` to its ``k`` most similar rows of ``opposing``."""
    m = opposing if isinstance(opposing, np.ndarray) else opposing.matrix
    space = EmbeddingSpace("", [str(i) for i in range(len(m))], m)
    xn = np.asarray(x, dtype=np.float64).ravel()
    norm = np.linalg.norm(xn)
    if norm == 0:
        raise AlignError("knn_mean_sim of a zero-norm vector")
    sims = space.normalized() @ (xn / norm)
    return float(_topk_mean(sims[None, :], k)[0])


def _mean_topk_cos(queries: np.ndarray, keys: np.ndarray, k: int) -> np.ndarray:
    """For each unit-norm query row, the mean cosine to its k nearest keys."""
    if k > len(keys):
        raise AlignError(f"K={k} exceeds the {len(keys)} available neighbours")
    out = np.empty(len(queries))
    for lo in range(0, len(queries), _CHUNK):
        out[lo : lo + _CHUNK] = _topk_mean(queries[lo : lo + _CHUNK] @ keys.T, k)
    return out


def csls_terms(src: EmbeddingSpace, tgt: EmbeddingSpace, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(rT over source rows, rS over target rows)."""
    xs, ys = src.normalized(), tgt.normalized()
    return _mean_topk_cos(xs, ys, k), _mean_topk_cos(ys, xs, k)


def csls_matrix(src: EmbeddingSpace, tgt: EmbeddingSpace, cfg: CslsConfig = CslsConfig(omit_rt=False)) -> np.ndarray:
    """Full ``S x T`` CSLS score matrix."""
    if not len(src) or not len(tgt):
        raise AlignError("csls_matrix on an empty space")
    xs, ys = src.normalized(), tgt.normalized()
    r_s = _mean_topk_cos(ys, xs, cfg.k)
    scores = 2.0 * (xs @ ys.T) - r_s[None, :]
    if not cfg.omit_rt:
        scores -= _mean_topk_cos(xs, ys, cfg.k)[:, None]
    return scores


def topk_targets(row, k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores, best first, lower index on ties."""
    row = np.asarray(row)
    if k > row.shape[-1]:
        raise AlignError(f"k={k} exceeds the {row.shape[-1]} candidates")
    return np.argsort(-row, axis=-1, kind="stable")[..., :k]


def retrieval_scores(
    src: EmbeddingSpace,
    tgt: EmbeddingSpace,
    queries: Sequence[int],
    cfg: CslsConfig = CslsConfig(),
) -> np.ndarray:
    """CSLS rows for the source indices in ``queries`` against all of ``tgt``.

    Neighbourhood terms use the full spaces; only the returned rows are
    restricted, which keeps memory at ``len(queries) x T``.
    """
    xs, ys = src.normalized(), tgt.normalized()
    q = xs[list(queries)]
    scores = 2.0 * (q @ ys.T) - _mean_topk_cos(ys, xs, cfg.k)[None, :]
    if not cfg.omit_rt:
        scores -= _mean_topk_cos(q, ys, cfg.k)[:, None]
    return scores


@dataclass
class AlignmentTask:
    """Gold dictionary restricted to words both spaces know."""

    pairs: dict[str, set[str]]
    n_retained: int = 0
    n_dropped: int = 0

    def __post_init__(self):
        for src, golds in self.pairs.items():
            if not golds:
                raise AlignError(f"source word {src!r} has no gold targets")
        if not self.n_retained:
            self.n_retained = sum(len(g) for g in self.pairs.values())

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "AlignmentTask":
        merged: dict[str, set[str]] = defaultdict(set)
        for s, t in pairs:
            merged[s].add(t)
        return cls(dict(merged))


def load_dictionary(
    path: str | os.PathLike,
    src_vocab: Container[str],
    tgt_vocab: Container[str],
    max_pairs: int | None = None,
) -> AlignmentTask:
    """Read ``source target`` lines (space or tab separated).

    Pairs with an unknown word on either side are dropped and counted.
    ``max_pairs`` keeps only the first that many distinct in-vocabulary
    pairs.
    """
    merged: dict[str, set[str]] = {}
    seen: set[tuple[str, str]] = set()
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise AlignError(f"{path}:{lineno}: expected 'source target', got {line.rstrip()!r}")
            s, t = fields
            if s not in src_vocab or t not in tgt_vocab or s == UNK or t == UNK:
                dropped += 1
                continue
            if (s, t) in seen:
                continue
            if max_pairs is not None and len(seen) >= max_pairs:
                break
            seen.add((s, t))
            merged.setdefault(s, set()).add(t)
    return AlignmentTask(merged, n_retained=len(seen), n_dropped=dropped)


def _candidates(src: EmbeddingSpace, tgt: EmbeddingSpace) -> tuple[EmbeddingSpace, EmbeddingSpace]:
    return src.without((UNK,)), tgt.without((UNK,))


def precision_at_k(
    task: AlignmentTask,
    src: EmbeddingSpace,
    tgt: EmbeddingSpace,
    cfg: CslsConfig = CslsConfig(),
    ks: int | Sequence[int] = (1, 5),
) -> float | dict[int, float]:
    """Fraction of task source words whose top-k CSLS targets hit the gold set.

    UNK is removed from both spaces before retrieval.  Passing a single
    ``k`` returns a float; a sequence returns ``{k: precision}``.
    """
    if not len(task):
        raise AlignError("empty alignment task")
    single = isinstance(ks, int)
    klist = [ks] if single else list(ks)
    src_c, tgt_c = _candidates(src, tgt)
    words = list(task.pairs)
    scores = retrieval_scores(src_c, tgt_c, [src_c.index(w) for w in words], cfg)
    ranked = topk_targets(scores, max(klist))
    gold_idx = [{tgt_c.index(t) for t in task.pairs[w]} for w in words]
    out = {}
    for k in klist:
        hits = sum(1 for row, gold in zip(ranked, gold_idx) if gold.intersection(row[:k].tolist()))
        out[k] = hits / len(words)
    return out[klist[0]] if single else out


def validation_score(src: EmbeddingSpace, tgt: EmbeddingSpace, n_words: int = 3000, k: int = 10) -> float:
    """Mean rT-free CSLS score of each frequent source word's best target.

    Uses the first ``n_words`` rows of ``src`` (vocabulary order is frequency
    order), capped at the space size.  Needs no dictionary.
    """
    src_c, tgt_c = _candidates(src, tgt)
    n = min(n_words, len(src_c))
    scores = retrieval_scores(src_c, tgt_c, range(n), CslsConfig(k=k, omit_rt=True))
    return float(scores.max(axis=1).mean())


def nearest(
    space: EmbeddingSpace,
    query: str,
    k: int = 10,
    other: EmbeddingSpace | None = None,
    csls_k: int = 10,
) -> list[tuple[str, float]]:
    """Neighbours of ``query``: by cosine within ``space``, or by CSLS in ``other``."""
    qi = space.index(query)
    if other is None:
        xs = space.normalized()
        sims = xs @ xs[qi]
        sims[qi] = -np.inf
        order = topk_targets(sims, min(k, len(space) - 1))
        return [(space.tokens[j], float(sims[j])) for j in order]
    src_c, tgt_c = _candidates(space, other)
    row = retrieval_scores(src_c, tgt_c, [src_c.index(query)], CslsConfig(k=csls_k))[0]
    order = topk_targets(row, min(k, len(tgt_c)))
    return [(tgt_c.tokens[j], float(row[j])) for j in order]
