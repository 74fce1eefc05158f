"""Aspect-word distributions from collapsed Gibbs LDA.

The fitted ``phi`` (A, V) gives each aspect a distribution over the word
vocabulary; ``word_aspect_rep`` turns it into per-word aspect distributions
(V, A) that the encoder stacks next to word and character features.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError
from .text import PAD, UNK


@dataclass(frozen=True)
class LdaConfig:
    n_aspects: int = 100
    alpha: float = None  # defaults to 50 / n_aspects
    beta: float = 0.01
    iterations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_aspects < 1:
            raise ContractError(f"need at least one aspect, got {self.n_aspects}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 50.0 / self.n_aspects)
        if self.iterations < 1 or self.alpha <= 0 or self.beta <= 0:
            raise ContractError(f"invalid LDA configuration {self}")


@dataclass
class LdaState:
    z: np.ndarray
    n_dt: np.ndarray
    n_tw: np.ndarray
    n_t: np.ndarray


def _flatten(corpus):
    words, docs = [], []
    for d, doc in enumerate(corpus):
        ids = np.asarray(doc, dtype=np.int64).ravel()
        ids = ids[(ids != PAD) & (ids != UNK)]
        words.append(ids)
        docs.append(np.full(ids.size, d, dtype=np.int64))
    if not words:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(words), np.concatenate(docs)


def gibbs_lda(corpus, vocab_size, config, backend=None):
    """Run collapsed Gibbs sampling and return the final count tables."""
    sweep = kernels.gibbs_sweep if backend is None else kernels.get_backend(backend).gibbs_sweep
    words, docs = _flatten(corpus)
    if words.size == 0:
        raise ContractError("aspect model needs a non-empty corpus (after removing PAD/UNK)")
    if words.max() >= vocab_size:
        raise ContractError(f"word id {int(words.max())} outside vocabulary of size {vocab_size}")
    A = config.n_aspects
    rng = np.random.default_rng(config.seed)
    z = rng.integers(0, A, size=words.size).astype(np.int64)
    n_dt = np.zeros((len(corpus), A), dtype=np.int64)
    n_tw = np.zeros((A, vocab_size), dtype=np.int64)
    np.add.at(n_dt, (docs, z), 1)
    np.add.at(n_tw, (z, words), 1)
    n_t = n_tw.sum(axis=1)
    for _ in range(config.iterations):
        u = rng.random(words.size)
        sweep(words, docs, z, n_dt, n_tw, n_t, float(config.alpha), float(config.beta), u)
    return LdaState(z, n_dt, n_tw, n_t)


def fit_aspects(corpus, vocab_size, config=LdaConfig(), backend=None):
    """Aspect-word distribution phi (A, V), smoothed by ``beta``.

    ``corpus`` is a sequence of word-id arrays; PAD and UNK ids are ignored.
    """
    state = gibbs_lda(corpus, vocab_size, config, backend)
    return phi_from_counts(state.n_tw, config.beta)


def phi_from_counts(n_tw, beta):
    V = n_tw.shape[1]
    return (n_tw + beta) / (n_tw.sum(axis=1, keepdims=True) + V * beta)


def word_aspect_rep(phi):
    """Row-normalised transpose of ``phi``: one aspect distribution per word.

    A word whose column of ``phi`` is all zero gets the uniform row.
    """
    phi = np.asarray(phi, dtype=np.float64)
    pt = phi.T.copy()
    s = pt.sum(axis=1, keepdims=True)
    zero = s[:, 0] == 0
    pt[zero] = 1.0
    s[zero] = pt.shape[1]
    return pt / s


def aspect_table(phi_prime):
    """Copy of ``phi_prime`` with PAD and UNK rows set to uniform."""
    table = np.array(phi_prime, dtype=np.float64)
    A = table.shape[1]
    table[[PAD, UNK]] = 1.0 / A
    return table


def lookup_aspect(phi_prime, word_id):
    V, A = phi_prime.shape
    if not 0 <= word_id < V:
        raise IndexError(f"word id {word_id} outside [0, {V})")
    if word_id in (PAD, UNK):
        return np.full(A, 1.0 / A)
    return np.array(phi_prime[word_id])
