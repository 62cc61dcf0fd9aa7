import math

import numpy as np
import pytest

from polylm.corpus import Corpus
from polylm.serialization import Checkpoint, load_checkpoint
from polylm.trainer import TrainConfig, TrainingError, epoch_schedule, perplexity, train, train_step

from builders import arrays, make_params


def small(**kw):
    base = dict(epochs=2, batch_size=2, dim=6, val_words=10, csls_k=2, lr=0.5)
    return TrainConfig(**(base | kw))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"epochs": -1}, {"batch_size": 0}, {"lr": -1.0}, {"dropout": 1.0}, {"clip": 0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestSchedule:
    def test_alternates_and_covers(self, tiny_corpora):
        sched = epoch_schedule(tiny_corpora, 1, seed=0, epoch=1)
        assert [b.lang for b in sched] == ["a", "b"] * 4
        a_sents = sorted(tuple(b.ids[0, : b.lengths[0]].tolist()) for b in sched if b.lang == "a")
        assert a_sents == sorted(tuple(s.ids) for s in tiny_corpora[0].sentences)

    def test_epochs_differ(self, tiny_corpora):
        one = [b.ids.tobytes() for b in epoch_schedule(tiny_corpora, 1, 0, 1)]
        two = [b.ids.tobytes() for b in epoch_schedule(tiny_corpora, 1, 0, 2)]
        assert one != two


def test_uniform_perplexity_is_ten():
    params = make_params(d=4, sizes=(9, 9))
    for t in params.parameters():
        t.data[:] = 0.0
    corpus = Corpus.from_token_lists("a", [["a0", "a1", "a2"], ["a3"]], vocab=params.vocabs["a"])
    assert abs(perplexity(params, corpus) - 10.0) < 1e-9


def test_zero_lr_changes_nothing(tiny_corpora):
    params, _ = train(small(lr=0.0, epochs=0), tiny_corpora)
    before = {k: v.copy() for k, v in arrays(params).items()}
    resume = Checkpoint(params, epoch=0)
    after, _ = train(small(lr=0.0), tiny_corpora, resume=resume)
    for name, v in arrays(after).items():
        assert np.array_equal(v, before[name]), name


def test_loss_decreases(tiny_corpora):
    _, hist = train(small(epochs=15, dropout=0.0), tiny_corpora)
    first, last = hist[0].train_loss, hist[-1].train_loss
    assert all(last[l] < first[l] for l in first)


def test_deterministic(tiny_corpora):
    p1, h1 = train(small(seed=5), tiny_corpora)
    p2, h2 = train(small(seed=5), tiny_corpora)
    assert h1.lines() == h2.lines()
    for name, v in arrays(p1).items():
        assert v.tobytes() == arrays(p2)[name].tobytes()
    p3, _ = train(small(seed=6), tiny_corpora)
    assert arrays(p3)["fwd.w_ih"].tobytes() != arrays(p1)["fwd.w_ih"].tobytes()


def test_checkpoint_files_and_resume(tiny_corpora, tmp_path):
    full_dir, half_dir = tmp_path / "full", tmp_path / "half"
    full, hist = train(small(epochs=3, checkpoint_dir=str(full_dir)), tiny_corpora)
    assert sorted(p.name for p in full_dir.iterdir()) == ["best.ckpt", "history.tsv", "last.ckpt"]
    tsv = (full_dir / "history.tsv").read_text().splitlines()
    assert tsv[0] == "epoch\tmetric\tkey\tvalue"
    assert tsv[1:] == hist.lines()
    assert load_checkpoint(full_dir / "last.ckpt").epoch == 3

    train(small(epochs=2, checkpoint_dir=str(half_dir)), tiny_corpora)
    resume = load_checkpoint(half_dir / "last.ckpt")
    resumed, rhist = train(small(epochs=3, checkpoint_dir=str(half_dir)), tiny_corpora, resume=resume)
    assert [r.epoch for r in rhist.records] == [3]
    assert rhist.lines() == hist.lines()[-len(rhist.lines()) :]
    for name, v in arrays(full).items():
        assert np.array_equal(v, arrays(resumed)[name]), name


def test_resume_rejects_other_languages(tiny_corpora):
    params, _ = train(small(epochs=0), tiny_corpora)
    with pytest.raises(TrainingError):
        train(small(), tiny_corpora[::-1], resume=Checkpoint(params))


def test_non_finite_loss_aborts(tiny_corpora):
    params, _ = train(small(epochs=0), tiny_corpora)
    params.fwd.w_hh.data[0, 0] = np.nan
    with pytest.raises(TrainingError, match="epoch 1, batch 1"):
        train(small(), tiny_corpora, resume=Checkpoint(params))


def test_train_step_reports_clip_norm(tiny_corpora):
    params = make_params(d=4, sizes=(len(tiny_corpora[0].vocab), len(tiny_corpora[1].vocab)))
    params.vocabs.update({c.lang: c.vocab for c in tiny_corpora})
    batch = epoch_schedule(tiny_corpora, 4, 0, 1)[0]
    loss, count, norm = train_step(params, batch, lr=0.1, clip=1e-3, rng=np.random.default_rng(0))
    assert math.isfinite(loss) and count > 0 and norm > 1e-3


def test_needs_two_languages(tiny_corpora):
    with pytest.raises(TrainingError):
        train(small(), tiny_corpora[:1])
