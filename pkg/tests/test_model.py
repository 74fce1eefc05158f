import numpy as np
import pytest

from egcnn import tensor as T
from egcnn.errors import ShapeError
from egcnn.experiments import small_model, uniform_aspects
from egcnn.model import (ModelConfig, char_emb, compose_word_rep, encode, gate, init_encoder,
                         inspect_gates, load_word_vectors, predict)
from egcnn.text import PAD, build_vocab


def make(rng, m=10, V=30, Vc=12, **kw):
    mc = small_model(m=m, **kw)
    enc = init_encoder(mc, V, Vc, uniform_aspects(V, mc.n_aspects), rng)
    words = rng.integers(2, V, size=(4, m))
    chars = rng.integers(1, Vc, size=(4, m, mc.max_chars))
    return mc, enc, words, chars


def test_default_dims():
    mc = ModelConfig()
    assert mc.stacked_dim == 250 and mc.hidden == 512


def test_char_emb_of_pad_word_is_relu_bias(rng):
    mc, enc, _, _ = make(rng)
    enc.char_bias.data[...] = np.linspace(-1, 1, mc.char_features)
    out = char_emb(np.zeros(mc.max_chars, dtype=int), enc).data
    np.testing.assert_array_equal(out, np.maximum(0.0, enc.char_bias.data))


def test_pad_word_representation(rng):
    mc, enc, _, _ = make(rng)
    e = compose_word_rep(np.array([PAD]), np.zeros((1, mc.max_chars), int), enc).data[0]
    assert (e[:mc.dim] == 0).all()
    np.testing.assert_allclose(e[mc.dim + mc.char_features:], 1.0 / mc.n_aspects)
    np.testing.assert_array_equal(e[mc.dim:mc.dim + mc.char_features],
                                  char_emb(np.zeros(mc.max_chars, int), enc).data)


def test_stacked_length(rng):
    mc, enc, w, c = make(rng)
    assert compose_word_rep(w, c, enc).shape == (4, mc.m, mc.stacked_dim)


class TestGate:
    def test_untrained_is_half(self, rng):
        mc, enc, w, c = make(rng)
        assert np.all(gate(compose_word_rep(w, c, enc), enc).data == 0.5)

    def test_saturation(self, rng):
        mc, enc, w, c = make(rng)
        enc.gate_b.data[...] = 100.0
        assert np.all(gate(compose_word_rep(w, c, enc), enc).data > 0.999)

    def test_hand_value(self):
        class G:
            gate_w = T.Parameter([1.0, 2.0])
            gate_b = T.Parameter(0.1)
        g = gate(T.Tensor([0.1, 0.2]), G)
        assert abs(float(g.data) - 0.6456563062257954) < 1e-9


def test_encoding_shape_and_ascending_widths(rng):
    mc, enc, w, c = make(rng, widths=(3, 2))
    assert mc.widths == (2, 3)
    h = encode(w, c, enc)
    assert h.shape == (4, mc.hidden)
    single = encode(w[0], c[0], enc)
    np.testing.assert_allclose(single.data, h.data[0], atol=1e-12)


def test_clamped_gates_equal_ungated(rng):
    mc, enc, w, c = make(rng)
    a = encode(w, c, enc, gating="clamp").data
    b = encode(w, c, enc, gating="off").data
    assert np.abs(a - b).max() <= 1e-12


def test_wrong_length(rng):
    mc, enc, w, c = make(rng)
    with pytest.raises(ShapeError):
        encode(w[:, :5], c[:, :5], enc)


def test_pad_rows_do_not_change_under_training(rng):
    mc, enc, w, c = make(rng)
    with T.Tape() as tape:
        h = encode(w, c, enc)
        loss = T.sum_squares(h)
    tape.backward(loss)
    T.adagrad_step(enc.parameters())
    assert (enc.word_emb.data[PAD] == 0).all() and (enc.char_emb.data[PAD] == 0).all()


class TestPredict:
    def test_zero_heads(self):
        assert float(predict(T.Tensor([1.0, 2.0]), T.Tensor([0.0, 0.0]), T.Tensor([0.0, 0.0])).data) == 0

    def test_shared_only(self):
        out = predict(T.Tensor([1.0, 2.0]), T.Tensor([0.5, 1.0]), T.Tensor([0.0, 0.0]))
        assert float(out.data) == 2.5

    def test_hand_value(self):
        out = predict(T.Tensor([1.0, 2.0]), T.Tensor([0.5, 0.0]), T.Tensor([0.0, 0.5]))
        assert float(out.data) == 1.5


def test_inspect_gates_skips_pad(rng):
    mc, enc, w, c = make(rng)
    vocab = build_vocab([[f"w{i}" for i in range(28)]], 1)
    w = w[0].copy()
    w[6:] = PAD
    pairs = inspect_gates(w, c[0], enc, vocab)
    assert len(pairs) == 6 and all(g == 0.5 for _, g in pairs)


def test_load_word_vectors(tmp_path):
    vocab = build_vocab([["good", "bad"]], 1)
    p = tmp_path / "vec.txt"
    p.write_text("good 1 2 3\nunknown 4 5 6\n")
    found = load_word_vectors(p, vocab, 3)
    assert list(found) == [vocab.id("good")] and found[vocab.id("good")].tolist() == [1, 2, 3]
    with pytest.raises(ShapeError):
        load_word_vectors(p, vocab, 4)


def test_pretrained_vectors_used(rng):
    mc = small_model(m=6)
    enc = init_encoder(mc, 5, 4, uniform_aspects(5, mc.n_aspects), rng, pretrained={3: np.ones(mc.dim)})
    assert (enc.word_emb.data[3] == 1).all()
