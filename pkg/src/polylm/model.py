"""Multilingual bidirectional LSTM language model.

One forward LSTM, one backward LSTM, the BOS input embedding and the EOS
output row are single objects shared by every language.  Each language owns
an input embedding table and an output projection.  The output layer for a
language is ``[w_eos; proj[lang]] @ h`` so class 0 is EOS and word id ``w``
is class ``w + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .align import EmbeddingSpace
from .autograd import ShapeError, Tape, Tensor
from .corpus import Batch, Sentence, Vocabulary

EOS_CLASS = 0


@dataclass(frozen=True)
class ModelConfig:
    languages: tuple[str, ...]
    d_emb: int = 300
    d_hidden: int = 300
    dropout: float = 0.3
    init_range: float = 0.1
    eos_loss: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "languages", tuple(self.languages))
        if self.d_emb != self.d_hidden:
            raise ValueError(f"d_emb ({self.d_emb}) must equal d_hidden ({self.d_hidden})")
        if self.d_emb < 1:
            raise ValueError("dimension must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if len(set(self.languages)) != len(self.languages) or not self.languages:
            raise ValueError(f"languages must be nonempty and distinct: {self.languages}")
        np.dtype(self.dtype)

    @property
    def dim(self) -> int:
        return self.d_hidden


@dataclass
class LstmCell:
    """Gate rows are ordered input, forget, candidate, output."""

    w_ih: Tensor  # (4d, d)
    w_hh: Tensor  # (4d, d)
    b: Tensor  # (1, 4d)

    @property
    def dim(self) -> int:
        return self.w_hh.shape[1]

    def tensors(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.w_ih, self.w_hh, self.b


@dataclass
class ModelParams:
    config: ModelConfig
    vocabs: dict[str, Vocabulary]
    fwd: LstmCell
    bwd: LstmCell
    e_bos: Tensor  # (1, d)
    w_eos: Tensor  # (1, d)
    emb: dict[str, Tensor] = field(default_factory=dict)  # (V, d)
    proj: dict[str, Tensor] = field(default_factory=dict)  # (V, d)

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        """All trainable tensors in a fixed order (shared first, then per language)."""
        for direction, cell in (("fwd", self.fwd), ("bwd", self.bwd)):
            yield f"{direction}.w_ih", cell.w_ih
            yield f"{direction}.w_hh", cell.w_hh
            yield f"{direction}.b", cell.b
        yield "e_bos", self.e_bos
        yield "w_eos", self.w_eos
        for lang in self.config.languages:
            yield f"emb.{lang}", self.emb[lang]
            yield f"proj.{lang}", self.proj[lang]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def check_lang(self, lang: str) -> None:
        if lang not in self.emb:
            raise KeyError(f"unknown language {lang!r}; model has {list(self.config.languages)}")

    def copy(self) -> "ModelParams":
        def cp(t: Tensor) -> Tensor:
            return Tensor(t.data.copy(), requires_grad=t.requires_grad, name=t.name)

        def cp_cell(c: LstmCell) -> LstmCell:
            return LstmCell(cp(c.w_ih), cp(c.w_hh), cp(c.b))

        return ModelParams(
            self.config,
            dict(self.vocabs),
            cp_cell(self.fwd),
            cp_cell(self.bwd),
            cp(self.e_bos),
            cp(self.w_eos),
            {k: cp(v) for k, v in self.emb.items()},
            {k: cp(v) for k, v in self.proj.items()},
        )


def param_shapes(config: ModelConfig, vocab_sizes: Mapping[str, int]) -> list[tuple[str, tuple[int, int]]]:
    d = config.dim
    shapes = []
    for direction in ("fwd", "bwd"):
        shapes += [(f"{direction}.w_ih", (4 * d, d)), (f"{direction}.w_hh", (4 * d, d)), (f"{direction}.b", (1, 4 * d))]
    shapes += [("e_bos", (1, d)), ("w_eos", (1, d))]
    for lang in config.languages:
        shapes += [(f"emb.{lang}", (vocab_sizes[lang], d)), (f"proj.{lang}", (vocab_sizes[lang], d))]
    return shapes


def assemble_params(config: ModelConfig, vocabs: Mapping[str, Vocabulary], arrays: Mapping[str, np.ndarray]) -> ModelParams:
    """Wrap named arrays into a :class:`ModelParams` (used by init and checkpoint loading)."""
    missing = set(config.languages) - set(vocabs)
    if missing:
        raise KeyError(f"no vocabulary for {sorted(missing)}")
    expected = param_shapes(config, {k: len(v) for k, v in vocabs.items()})
    t = {}
    for name, shape in expected:
        if name not in arrays:
            raise KeyError(f"missing tensor {name}")
        arr = np.array(arrays[name], dtype=config.dtype)
        if arr.shape != shape:
            raise ShapeError(f"tensor {name}: expected {shape}, got {arr.shape}")
        t[name] = Tensor(arr, requires_grad=True, name=name)
    return ModelParams(
        config=config,
        vocabs={lang: vocabs[lang] for lang in config.languages},
        fwd=LstmCell(t["fwd.w_ih"], t["fwd.w_hh"], t["fwd.b"]),
        bwd=LstmCell(t["bwd.w_ih"], t["bwd.w_hh"], t["bwd.b"]),
        e_bos=t["e_bos"],
        w_eos=t["w_eos"],
        emb={lang: t[f"emb.{lang}"] for lang in config.languages},
        proj={lang: t[f"proj.{lang}"] for lang in config.languages},
    )


def init_params(config: ModelConfig, vocabs: Mapping[str, Vocabulary], rng_seed) -> ModelParams:
    """Every value i.i.d. uniform on ``[-init_range, init_range]``."""
    for lang in config.languages:
        if len(vocabs[lang]) < 1:
            raise ValueError(f"empty vocabulary for {lang!r}")
    rng = np.random.default_rng(rng_seed)
    r = config.init_range
    arrays = {
        name: rng.uniform(-r, r, size=shape)
        for name, shape in param_shapes(config, {k: len(v) for k, v in vocabs.items()})
    }
    return assemble_params(config, vocabs, arrays)


def lstm_step(tape: Tape, cell: LstmCell, h_prev: Tensor, c_prev: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM transition for a batch of rows."""
    d = cell.dim
    for label, t in (("h_prev", h_prev), ("c_prev", c_prev), ("x", x)):
        if t.shape[1] != d:
            raise ShapeError(f"lstm_step: {label} has width {t.shape[1]}, cell expects {d}")
    pre = tape.add(tape.matmul(x, cell.w_ih, transpose_b=True), tape.matmul(h_prev, cell.w_hh, transpose_b=True))
    return _gates(tape, tape.add_bias(pre, cell.b), c_prev, d)


def _gates(tape: Tape, pre: Tensor, c_prev: Tensor | None, d: int) -> tuple[Tensor, Tensor]:
    i = tape.sigmoid(tape.slice(pre, cols=slice(0, d)))
    g = tape.tanh(tape.slice(pre, cols=slice(2 * d, 3 * d)))
    o = tape.sigmoid(tape.slice(pre, cols=slice(3 * d, 4 * d)))
    c = tape.mul(i, g)
    if c_prev is not None:
        f = tape.sigmoid(tape.slice(pre, cols=slice(d, 2 * d)))
        c = tape.add(tape.mul(f, c_prev), c)
    h = tape.mul(o, tape.tanh(c))
    return h, c


def output_logits(tape: Tape, params: ModelParams, lang: str, h: Tensor) -> Tensor:
    """Scores over ``[EOS] + vocabulary`` for each row of ``h``."""
    params.check_lang(lang)
    w_out = tape.concat_rows([params.w_eos, params.proj[lang]])
    return tape.matmul(h, w_out, transpose_b=True)


def _run_direction(tape: Tape, params: ModelParams, cell: LstmCell, lang: str, ids: np.ndarray, lengths: np.ndarray) -> tuple[Tensor, int]:
    """Summed NLL of one left-to-right pass over right-padded ``ids``.

    Step ``k`` reads input ``k`` (BOS, then the words) and predicts word
    ``k + 1``, or EOS once the sentence is exhausted.
    """
    b, t = ids.shape
    d = cell.dim
    bos_rows = tape.embedding(params.e_bos, np.zeros(b, dtype=np.int64))
    parts = [bos_rows]
    if t:
        parts.append(tape.embedding(params.emb[lang], ids.T.reshape(-1)))
    x_all = tape.concat_rows(parts)
    xw = tape.add_bias(tape.matmul(x_all, cell.w_ih, transpose_b=True), cell.b)

    hs = []
    h = c = None
    for k in range(t + 1):
        pre = tape.slice(xw, rows=slice(k * b, (k + 1) * b))
        if h is not None:
            pre = tape.add(pre, tape.matmul(h, cell.w_hh, transpose_b=True))
        h, c = _gates(tape, pre, c, d)
        hs.append(h)

    h_all = tape.dropout(tape.concat_rows(hs), params.config.dropout)
    logits = output_logits(tape, params, lang, h_all)

    # time-major targets: word k+1 while k < length, then EOS at k == length
    steps = np.arange(t + 1)[:, None]
    padded = np.concatenate([ids.T, np.zeros((1, b), dtype=ids.dtype)], axis=0)
    targets = np.where(steps < lengths[None, :], padded + 1, EOS_CLASS)
    if params.config.eos_loss:
        mask = steps <= lengths[None, :]
    else:
        mask = steps < lengths[None, :]
    loss = tape.softmax_xent(logits, targets.reshape(-1), mask.reshape(-1))
    return loss, int(mask.sum())


def reverse_padded(ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Reverse each row within its own length, leaving padding in place."""
    out = ids.copy()
    for row, n in enumerate(lengths):
        out[row, :n] = ids[row, :n][::-1]
    return out


def batch_losses(tape: Tape, params: ModelParams, batch: Batch) -> tuple[Tensor, Tensor, int]:
    """Summed forward NLL, summed backward NLL, and number of predictions."""
    params.check_lang(batch.lang)
    fwd, n_fwd = _run_direction(tape, params, params.fwd, batch.lang, batch.ids, batch.lengths)
    rev = reverse_padded(batch.ids, batch.lengths)
    bwd, n_bwd = _run_direction(tape, params, params.bwd, batch.lang, rev, batch.lengths)
    return fwd, bwd, n_fwd + n_bwd


def batch_nll(tape: Tape, params: ModelParams, batch: Batch) -> Tensor:
    """Mean negative log-likelihood per prediction, both directions pooled.

    Train/eval behaviour (dropout) follows ``tape.train``.
    """
    fwd, bwd, count = batch_losses(tape, params, batch)
    return tape.scale(tape.add(fwd, bwd), 1.0 / count)


def sentence_nll(params: ModelParams, sentence: Sentence, train: bool = False, rng: np.random.Generator | None = None) -> tuple[float, int]:
    """Total NLL of one sentence over both directions and its prediction count."""
    if len(sentence) == 0:
        raise ValueError("sentence_nll: empty sentence")
    tape = Tape(train=train, rng=rng, record=False)
    fwd, bwd, count = batch_losses(tape, params, Batch.from_sentences([sentence]))
    return fwd.item() + bwd.item(), count


def extract_embeddings(params: ModelParams, lang: str) -> EmbeddingSpace:
    params.check_lang(lang)
    vocab = params.vocabs[lang]
    return EmbeddingSpace(lang, list(vocab.tokens), params.emb[lang].data.copy())


def extract_all(params: ModelParams, langs: Sequence[str] | None = None) -> dict[str, EmbeddingSpace]:
    return {lang: extract_embeddings(params, lang) for lang in (langs or params.config.languages)}
