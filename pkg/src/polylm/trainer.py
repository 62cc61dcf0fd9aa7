"""Training loop: alternating language batches, clipping, SGD, checkpoints."""

from __future__ import annotations

import itertools
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import align
from .autograd import Tape, clip_global_norm, sgd_step, zero_grads
from .corpus import Batch, Corpus, interleave, make_batches
from .model import ModelConfig, ModelParams, batch_losses, extract_embeddings, init_params
from .serialization import Checkpoint, save_checkpoint

log = logging.getLogger(__name__)

# stream keys mixed into the per-epoch seed
_BATCH_STREAM = 1
_DROPOUT_STREAM = 2


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1.0
    clip: float = 5.0
    dropout: float = 0.3
    dim: int = 300
    init_range: float = 0.1
    seed: int = 0
    eos_loss: bool = True
    dtype: str = "float32"
    checkpoint_dir: str | None = None
    eval_every: int = 0  # extra validation logging every N steps; 0 = per epoch only
    val_words: int = 3000
    csls_k: int = 10
    eval_perplexity: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "clip", "dim", "val_words", "csls_k"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    def model_config(self, languages: Sequence[str]) -> ModelConfig:
        return ModelConfig(
            languages=tuple(languages),
            d_emb=self.dim,
            d_hidden=self.dim,
            dropout=self.dropout,
            init_range=self.init_range,
            eos_loss=self.eos_loss,
            dtype=self.dtype,
        )


@dataclass
class EpochRecord:
    epoch: int
    steps: int
    train_loss: dict[str, float]
    perplexity: dict[str, float]
    validation: dict[tuple[str, str], float]
    seconds: float = 0.0

    @property
    def mean_validation(self) -> float:
        return float(np.mean(list(self.validation.values()))) if self.validation else float("nan")


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> EpochRecord:
        return self.records[i]

    def lines(self, with_time: bool = False) -> list[str]:
        """Tab-separated ``epoch metric key value`` lines.

        Wall time is left out unless asked for, so logs of identical runs
        compare equal.
        """
        out = []
        for r in self.records:
            out.append(f"{r.epoch}\tsteps\t-\t{r.steps}")
            out += [f"{r.epoch}\ttrain_loss\t{k}\t{v:.10g}" for k, v in r.train_loss.items()]
            out += [f"{r.epoch}\tperplexity\t{k}\t{v:.10g}" for k, v in r.perplexity.items()]
            out += [f"{r.epoch}\tvalidation\t{s}-{t}\t{v:.10g}" for (s, t), v in r.validation.items()]
            if with_time:
                out.append(f"{r.epoch}\tseconds\t-\t{r.seconds:.3f}")
        return out

    def write(self, path: str | os.PathLike, with_time: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch\tmetric\tkey\tvalue\n")
            for line in self.lines(with_time):
                fh.write(line + "\n")


def _rng(seed: int, epoch: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed + epoch, *keys])


def epoch_schedule(corpora: Sequence[Corpus], batch_size: int, seed: int, epoch: int) -> list[Batch]:
    """The interleaved batch order for one epoch."""
    def shuffled(i: int, cycle: int) -> list[Batch]:
        return make_batches(corpora[i], batch_size, [seed + epoch, _BATCH_STREAM, i, cycle])

    streams = [shuffled(i, 0) for i in range(len(corpora))]
    return list(interleave(streams, refill=shuffled))


def perplexity(params: ModelParams, corpus: Corpus, batch_size: int = 64) -> float:
    """exp of the mean per-prediction NLL, both directions, eval mode."""
    total, count = 0.0, 0
    for lo in range(0, len(corpus.sentences), batch_size):
        batch = Batch.from_sentences(corpus.sentences[lo : lo + batch_size])
        tape = Tape(train=False, record=False)
        fwd, bwd, n = batch_losses(tape, params, batch)
        total += fwd.item() + bwd.item()
        count += n
    return math.exp(total / count)


def validation_score(params: ModelParams, src_lang: str, tgt_lang: str, n_words: int = 3000, k: int = 10) -> float:
    return align.validation_score(extract_embeddings(params, src_lang), extract_embeddings(params, tgt_lang), n_words, k)


def train_step(params: ModelParams, batch: Batch, lr: float, clip: float, rng: np.random.Generator) -> tuple[float, int, float]:
    """One SGD update; returns (mean loss, predictions, gradient norm before clipping)."""
    plist = params.parameters()
    zero_grads(plist)
    tape = Tape(train=True, rng=rng)
    fwd, bwd, count = batch_losses(tape, params, batch)
    loss = tape.scale(tape.add(fwd, bwd), 1.0 / count)
    value = loss.item()
    if not math.isfinite(value):
        return value, count, float("nan")
    tape.backward(loss)
    grads, norm = clip_global_norm([p.grad for p in plist], clip)
    sgd_step(plist, grads, lr)
    return value, count, norm


def _check_vocabs(params: ModelParams, corpora: Sequence[Corpus]) -> None:
    for c in corpora:
        if params.vocabs[c.lang] != c.vocab:
            raise TrainingError(f"vocabulary of corpus {c.lang!r} does not match the checkpoint")


def train(
    config: TrainConfig,
    corpora: Sequence[Corpus],
    resume: Checkpoint | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Train one shared model on all ``corpora`` (one per language, in order).

    With ``resume``, training continues after the checkpoint's epoch; the
    per-epoch seeding makes this reproduce an uninterrupted run.
    """
    if len(corpora) < 2:
        raise TrainingError("training needs at least two languages")
    langs = [c.lang for c in corpora]
    if len(set(langs)) != len(langs):
        raise TrainingError(f"duplicate languages: {langs}")

    if resume is None:
        params = init_params(config.model_config(langs), {c.lang: c.vocab for c in corpora}, config.seed)
        start = 1
    else:
        params = resume.params
        if list(params.config.languages) != langs:
            raise TrainingError(f"checkpoint languages {params.config.languages} != {langs}")
        _check_vocabs(params, corpora)
        start = resume.epoch + 1

    ckdir = config.checkpoint_dir
    if ckdir:
        os.makedirs(ckdir, exist_ok=True)
        if resume is None:
            save_checkpoint(Checkpoint(params, 0, config.seed), os.path.join(ckdir, "last.ckpt"))

    history = TrainHistory()
    best = -math.inf
    if resume is not None:
        best = float(resume.extra.get("best_validation", -math.inf))
    pairs = list(itertools.permutations(langs, 2))
    for epoch in range(start, config.epochs + 1):
        t0 = time.perf_counter()
        schedule = epoch_schedule(corpora, config.batch_size, config.seed, epoch)
        drop_rng = _rng(config.seed, epoch, _DROPOUT_STREAM)
        loss_sum = dict.fromkeys(langs, 0.0)
        loss_n = dict.fromkeys(langs, 0)
        for step, batch in enumerate(schedule, start=1):
            value, count, _ = train_step(params, batch, config.lr, config.clip, drop_rng)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {step} ({batch.lang})")
            loss_sum[batch.lang] += value * count
            loss_n[batch.lang] += count
            if config.eval_every and step % config.eval_every == 0:
                scores = [validation_score(params, s, t, config.val_words, config.csls_k) for s, t in pairs]
                log.info("epoch %d step %d validation %.4f", epoch, step, float(np.mean(scores)))

        record = EpochRecord(
            epoch=epoch,
            steps=len(schedule),
            train_loss={lang: loss_sum[lang] / loss_n[lang] for lang in langs},
            perplexity={c.lang: perplexity(params, c, config.batch_size) for c in corpora} if config.eval_perplexity else {},
            validation={(s, t): validation_score(params, s, t, config.val_words, config.csls_k) for s, t in pairs},
        )
        record.seconds = time.perf_counter() - t0
        history.records.append(record)
        log.info(
            "epoch %d: loss %s validation %.4f (%.1fs)",
            epoch,
            " ".join(f"{k}={v:.4f}" for k, v in record.train_loss.items()),
            record.mean_validation,
            record.seconds,
        )
        if ckdir:
            improved = record.mean_validation > best
            if improved:
                best = record.mean_validation
            extra = {"validation": record.mean_validation, "best_validation": best}
            ckpt = Checkpoint(params, epoch, config.seed, extra)
            save_checkpoint(ckpt, os.path.join(ckdir, "last.ckpt"))
            if improved:
                save_checkpoint(ckpt, os.path.join(ckdir, "best.ckpt"))
            history.write(os.path.join(ckdir, "history.tsv"))
        if on_epoch is not None:
            on_epoch(record)
    return params, history
