import math

import numpy as np
import pytest

from polylm.autograd import Tape, Tensor, ShapeError, sgd_step, zero_grads
from polylm.corpus import Batch, Corpus, Sentence, build_vocab
from polylm.model import (
    LstmCell,
    ModelConfig,
    batch_losses,
    batch_nll,
    extract_embeddings,
    init_params,
    lstm_step,
    output_logits,
    reverse_padded,
    sentence_nll,
)

import oracle
from builders import arrays, make_params, vocab_of


def zero_params(v=9, d=4):
    p = make_params(d=d, sizes=(v, v))
    for t in p.parameters():
        t.data[:] = 0.0
    return p


class TestConfig:
    def test_dims_must_match(self):
        with pytest.raises(ValueError):
            ModelConfig(("a",), d_emb=4, d_hidden=5)

    def test_dropout_range(self):
        with pytest.raises(ValueError):
            ModelConfig(("a",), dropout=1.0)


class TestInit:
    def test_range(self):
        p = make_params(d=16, sizes=(30, 40))
        for t in p.parameters():
            assert t.data.min() >= -0.1 and t.data.max() <= 0.1

    def test_deterministic(self):
        a, b = make_params(seed=3), make_params(seed=3)
        for x, y in zip(a.parameters(), b.parameters()):
            assert np.array_equal(x.data, y.data)

    def test_shared_objects(self):
        p = make_params(sizes=(5, 6, 7))
        assert len({id(t) for t in p.parameters()}) == len(p.parameters())
        names = [n for n, _ in p.named_parameters()]
        assert sum(n.startswith("fwd.") for n in names) == 3
        assert names.count("e_bos") == 1 and names.count("w_eos") == 1
        assert p.emb["a"].shape == (5, 6) and p.proj["c"].shape == (7, 6)


class TestLstmStep:
    def cell(self, d, value=0.0):
        return LstmCell(
            Tensor(np.full((4 * d, d), value)), Tensor(np.full((4 * d, d), value)), Tensor(np.full((1, 4 * d), value))
        )

    def test_zero_fixed_point(self):
        h, c = lstm_step(Tape(), self.cell(3), Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))), Tensor(np.ones((1, 3))))
        assert not h.data.any() and not c.data.any()

    def test_zero_weights_carry_half_cell(self):
        v = np.array([[1.0, -2.0, 0.5]])
        h, c = lstm_step(Tape(), self.cell(3), Tensor(np.zeros((1, 3))), Tensor(v), Tensor(np.ones((1, 3))))
        np.testing.assert_allclose(c.data, 0.5 * v, atol=1e-15)
        np.testing.assert_allclose(h.data, 0.5 * np.tanh(0.5 * v), atol=1e-15)

    def test_matches_oracle(self, rng):
        d = 5
        cell = LstmCell(
            Tensor(rng.standard_normal((4 * d, d))), Tensor(rng.standard_normal((4 * d, d))), Tensor(rng.standard_normal((1, 4 * d)))
        )
        h0, c0, x = rng.standard_normal((3, d))
        h, c = lstm_step(Tape(), cell, Tensor(h0), Tensor(c0), Tensor(x))
        eh, ec = oracle.step(cell.w_ih.data, cell.w_hh.data, cell.b.data[0], h0, c0, x)
        np.testing.assert_allclose(h.data[0], eh, atol=1e-12)
        np.testing.assert_allclose(c.data[0], ec, atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            lstm_step(Tape(), self.cell(3), Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))))


class TestOutputLogits:
    def test_zero_hidden(self):
        p = make_params()
        out = output_logits(Tape(), p, "a", Tensor(np.zeros((1, 6))))
        assert out.shape == (1, 8) and not out.data.any()

    def test_eos_block(self, rng):
        p = make_params()
        h = Tensor(rng.standard_normal((1, 6)))
        before = output_logits(Tape(), p, "b", h).data.copy()
        p.w_eos.data += 1.0
        after = output_logits(Tape(), p, "b", h).data
        assert after[0, 0] != before[0, 0]
        np.testing.assert_array_equal(after[0, 1:], before[0, 1:])

    def test_unknown_language(self):
        with pytest.raises(KeyError):
            output_logits(Tape(), make_params(), "zz", Tensor(np.zeros((1, 6))))


class TestSentenceNll:
    def test_uniform_model(self):
        p = zero_params(v=9)
        loss, n = sentence_nll(p, Sentence("a", (3,)))
        assert n == 4
        assert loss == pytest.approx(4 * math.log(10), abs=1e-9)

    def test_eval_deterministic(self):
        p = make_params(dropout=0.5)
        s = Sentence("a", (1, 2, 3))
        assert sentence_nll(p, s) == sentence_nll(p, s)

    def test_empty_sentence(self):
        with pytest.raises(ValueError):
            sentence_nll(make_params(), Sentence("a", ()))

    @pytest.mark.parametrize("ids", [(0,), (2, 5), (1, 1, 4, 0, 6, 2)])
    @pytest.mark.parametrize("eos", [True, False])
    def test_matches_product_oracle(self, ids, eos):
        p = make_params(seed=11, eos_loss=eos)
        for t in p.parameters():
            t.data *= 8.0  # move away from the near-uniform init
        fwd = oracle.direction_probs(arrays(p), "a", ids, "fwd", eos)
        bwd = oracle.direction_probs(arrays(p), "a", ids, "bwd", eos)
        loss, n = sentence_nll(p, Sentence("a", ids))
        assert n == len(fwd) + len(bwd) == 2 * (len(ids) + eos)
        assert loss == pytest.approx(-np.log(fwd).sum() - np.log(bwd).sum(), abs=1e-10)

    def test_forward_component_is_product_of_probabilities(self):
        p = make_params(seed=5)
        ids = (3, 1, 4, 1, 5)
        tape = Tape(record=False)
        fwd, _, _ = batch_losses(tape, p, Batch.from_sentences([Sentence("b", ids)]))
        probs = oracle.direction_probs(arrays(p), "b", ids, "fwd")
        assert math.exp(-fwd.item()) == pytest.approx(np.prod(probs), rel=1e-10)


class TestBatchNll:
    def sentences(self, rng, lang="a", n=5, vmax=6):
        return [Sentence(lang, tuple(rng.integers(vmax, size=rng.integers(1, 7)))) for _ in range(n)]

    def value(self, p, batch):
        return batch_nll(Tape(record=False), p, batch).item()

    def test_singleton(self, rng):
        p = make_params()
        s = self.sentences(rng, n=1)[0]
        loss, n = sentence_nll(p, s)
        assert self.value(p, Batch.from_sentences([s])) == pytest.approx(loss / n, abs=1e-12)

    def test_weighted_mean_of_sentences(self, rng):
        p = make_params()
        sents = self.sentences(rng)
        parts = [sentence_nll(p, s) for s in sents]
        expected = sum(l for l, _ in parts) / sum(n for _, n in parts)
        assert self.value(p, Batch.from_sentences(sents)) == pytest.approx(expected, abs=1e-12)

    def test_duplication_invariant(self, rng):
        p = make_params()
        sents = self.sentences(rng)
        assert self.value(p, Batch.from_sentences(sents + sents)) == pytest.approx(self.value(p, Batch.from_sentences(sents)), abs=1e-12)

    def test_extra_padding_invariant(self, rng):
        p = make_params()
        sents = self.sentences(rng)
        a = self.value(p, Batch.from_sentences(sents))
        b = self.value(p, Batch.from_sentences(sents, pad_to=15))
        assert a == pytest.approx(b, abs=1e-12)

    def test_reverse_padded(self):
        ids = np.array([[1, 2, 3, 0], [4, 5, 0, 0]])
        np.testing.assert_array_equal(reverse_padded(ids, np.array([3, 2])), [[3, 2, 1, 0], [5, 4, 0, 0]])

    def test_direction_independence(self, rng):
        p = make_params()
        batch = Batch.from_sentences(self.sentences(rng))
        fwd, _, _ = batch_losses(Tape(record=False), p, batch)
        for t in p.bwd.tensors():
            t.data[:] = 0.0
        fwd2, bwd2, _ = batch_losses(Tape(record=False), p, batch)
        assert fwd.item() == fwd2.item()

    def test_gradient_check(self, rng):
        from conftest import numeric_grad, rel_err

        p = make_params(d=5, sizes=(7, 8), seed=2, init_range=0.5)
        batch = Batch.from_sentences(self.sentences(rng, lang="b", vmax=8))
        params = p.parameters()
        zero_grads(params)
        tape = Tape()
        tape.backward(batch_nll(tape, p, batch))

        def f():
            return self.value(p, batch)

        worst = 0.0
        for name, t in p.named_parameters():
            if name.endswith(".a"):
                assert not t.grad.any()
                continue
            for _ in range(8):
                idx = tuple(rng.integers(s) for s in t.shape)
                num = numeric_grad(f, t.data, idx)
                worst = max(worst, rel_err(t.grad[idx], num))
        assert worst < 1e-5


class TestSharing:
    def test_step_leaves_other_language(self, rng):
        p = make_params(sizes=(7, 8, 6), dtype="float32")
        before = {n: t.data.copy() for n, t in p.named_parameters()}
        batch = Batch.from_sentences([Sentence("a", (1, 2, 3)), Sentence("a", (4, 0))])
        zero_grads(p.parameters())
        tape = Tape(train=True, rng=rng)
        tape.backward(batch_nll(tape, p, batch))
        sgd_step(p.parameters(), [t.grad for t in p.parameters()], 1.0)
        after = dict(p.named_parameters())
        for lang in ("b", "c"):
            for kind in ("emb", "proj"):
                assert np.array_equal(after[f"{kind}.{lang}"].data, before[f"{kind}.{lang}"])
        for name in ("fwd.w_ih", "bwd.w_hh", "e_bos", "w_eos", "emb.a", "proj.a"):
            assert not np.array_equal(after[name].data, before[name])


class TestExtract:
    def test_rows_and_tokens(self):
        p = make_params(sizes=(7, 9))
        space = extract_embeddings(p, "b")
        assert len(space) == 9 and space.tokens == list(p.vocabs["b"].tokens)
        np.testing.assert_array_equal(space.matrix, p.emb["b"].data)
        assert space.matrix is not p.emb["b"].data

    def test_unknown(self):
        with pytest.raises(KeyError):
            extract_embeddings(make_params(), "q")
