"""The embedding-gated CNN encoder.

Each word is represented by its word embedding, a character-CNN feature
vector and its aspect distribution, stacked in that order. A scalar gate
per word, ``sigmoid(w_g . e' + b_g)``, scales the stacked vector before a
bank of full-width convolutions with ReLU and max-over-time pooling.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .text import PAD


@dataclass(frozen=True)
class ModelConfig:
    m: int = 100
    dim: int = 100
    char_dim: int = 16
    char_width: int = 3
    char_features: int = 50
    n_aspects: int = 100
    widths: tuple = (2, 3, 4, 5)
    channels: int = 128
    max_chars: int = 16

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(sorted(int(w) for w in self.widths)))
        extents = (self.m, self.dim, self.char_dim, self.char_width, self.char_features,
                   self.n_aspects, self.channels, self.max_chars)
        if min(extents) < 1 or not self.widths:
            raise ContractError(f"all model extents must be >= 1: {self}")
        if self.widths[0] < 1 or self.widths[-1] > self.m:
            raise ContractError(f"filter widths {self.widths} must lie in [1, m={self.m}]")
        if self.char_width > self.max_chars:
            raise ContractError(f"char_width {self.char_width} exceeds max_chars {self.max_chars}")

    @property
    def stacked_dim(self):
        return self.dim + self.char_features + self.n_aspects

    @property
    def hidden(self):
        return len(self.widths) * self.channels

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass
class EncoderParams:
    """Trainable encoder tensors plus the frozen aspect lookup table."""

    config: ModelConfig
    word_emb: T.Parameter
    char_emb: T.Parameter
    char_filters: T.Parameter
    char_bias: T.Parameter
    gate_w: T.Parameter
    gate_b: T.Parameter
    conv_filters: list
    conv_bias: list
    aspects: T.Tensor = field(repr=False)

    def parameters(self):
        out = [self.word_emb, self.char_emb, self.char_filters, self.char_bias,
               self.gate_w, self.gate_b]
        for w, b in zip(self.conv_filters, self.conv_bias):
            out += [w, b]
        return out


def load_word_vectors(path, vocab, dim):
    """Read ``token v1 ... vD`` lines; returns {vocab id: vector} for known tokens."""
    found = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != dim:
                raise ShapeError(f"{path}:{lineno}: vector has {len(parts) - 1} values, expected {dim}")
            if parts[0] in vocab:
                found[vocab.id(parts[0])] = np.array(parts[1:], dtype=np.float64)
    return found


def init_encoder(config, vocab_size, char_vocab_size, aspect_table, rng, pretrained=None):
    """Random encoder parameters; gate weights start at zero (all gates 0.5)."""
    aspect_table = np.asarray(aspect_table, dtype=np.float64)
    if aspect_table.shape != (vocab_size, config.n_aspects):
        raise ShapeError(f"aspect table {aspect_table.shape} != ({vocab_size}, {config.n_aspects})")

    def uniform(shape, bound):
        return rng.uniform(-bound, bound, size=shape)

    E = uniform((vocab_size, config.dim), 0.05)
    for i, vec in (pretrained or {}).items():
        E[i] = vec
    E[PAD] = 0.0
    Ec = uniform((char_vocab_size, config.char_dim), 0.05)
    Ec[PAD] = 0.0
    fan = config.char_width * config.char_dim
    conv_w, conv_b = [], []
    Dt = config.stacked_dim
    for f in config.widths:
        conv_w.append(T.Parameter(uniform((f, Dt, config.channels), 1.0 / np.sqrt(f * Dt)), f"conv{f}.w"))
        conv_b.append(T.Parameter(np.zeros(config.channels), f"conv{f}.b"))
    return EncoderParams(
        config=config,
        word_emb=T.Parameter(E, "word_emb", frozen_rows=(PAD,)),
        char_emb=T.Parameter(Ec, "char_emb", frozen_rows=(PAD,)),
        char_filters=T.Parameter(uniform((config.char_width, config.char_dim, config.char_features),
                                         1.0 / np.sqrt(fan)), "char.w"),
        char_bias=T.Parameter(np.zeros(config.char_features), "char.b"),
        gate_w=T.Parameter(np.zeros(Dt), "gate.w"),
        gate_b=T.Parameter(np.zeros(()), "gate.b"),
        conv_filters=conv_w,
        conv_bias=conv_b,
        aspects=T.Tensor(aspect_table),
    )


def char_emb(char_ids, params):
    """Character-CNN feature vector per word: (..., L_c) -> (..., d_c)."""
    x = T.embedding_lookup(params.char_emb, char_ids)
    return T.max_pool_over_time(T.relu(T.text_conv(x, params.char_filters, params.char_bias)))


def compose_word_rep(word_ids, char_ids, params):
    """Stacked word ⊕ char ⊕ aspect representation: (...) -> (..., D_total)."""
    return T.concat([
        T.embedding_lookup(params.word_emb, word_ids),
        char_emb(char_ids, params),
        T.embedding_lookup(params.aspects, word_ids),
    ])


def gate(e_prime, params):
    """Scalar gate in (0, 1) per stacked word vector."""
    return T.sigmoid(T.dense(e_prime, params.gate_w, params.gate_b))


def encode(word_ids, char_ids, params, gating="learned", return_gates=False):
    """Hidden representation h_X of one review (m,) or a batch (B, m).

    ``gating`` is ``"learned"`` (EG-CNN), ``"clamp"`` (every gate forced
    to 1) or ``"off"`` (no gate layer; the ungated CNN_ca encoder).
    """
    word_ids = np.asarray(word_ids)
    if word_ids.shape[-1] != params.config.m:
        raise ShapeError(f"review length {word_ids.shape[-1]} != model m={params.config.m}")
    e = compose_word_rep(word_ids, char_ids, params)
    gates = None
    if gating == "learned":
        gates = gate(e, params)
        e = T.scale_rows(e, gates)
    elif gating == "clamp":
        gates = T.Tensor(np.ones(word_ids.shape))
        e = T.scale_rows(e, gates)
    elif gating != "off":
        raise ValueError(f"unknown gating mode {gating!r}")
    pooled = [
        T.max_pool_over_time(T.relu(T.text_conv(e, w, b)))
        for w, b in zip(params.conv_filters, params.conv_bias)
    ]
    h = T.concat(pooled)
    return (h, gates) if return_gates else h


def predict(h, shared, domain_head):
    """``(shared + domain_head) . h``; no output nonlinearity."""
    return T.rowdot(h, T.add(shared, domain_head))


def inspect_gates(word_ids, char_ids, params, vocab):
    """(token, gate) for every non-PAD position of one review."""
    word_ids = np.asarray(word_ids)
    e = compose_word_rep(word_ids, char_ids, params)
    g = gate(e, params).data
    return [(vocab.token(int(w)), float(gi)) for w, gi in zip(word_ids, g) if w != PAD]
