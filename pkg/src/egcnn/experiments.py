"""Desk-scale experiments on synthetic data with known ground truth.

These back the ``grad-check`` command and the acceptance suite: each
function runs one seeded trial and returns plain numbers.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .aspects import aspect_table
from .evalkit import pearson
from .model import ModelConfig, compose_word_rep, gate, init_encoder
from .multidomain import (DomainHeads, LossConfig, TrainConfig, loss_full, omega_update,
                          predict_split, train)
from .synthetic import SyntheticSpec, generate
from .text import PAD, build_dataset, dataset_from_parts

SMALL_MODEL = dict(dim=16, char_dim=8, char_width=3, char_features=8, n_aspects=4,
                   widths=(2, 3), channels=16, max_chars=8)


def small_model(m=24, **overrides):
    cfg = dict(SMALL_MODEL, m=m)
    cfg.update(overrides)
    return ModelConfig(**cfg)


def uniform_aspects(vocab_size, n_aspects):
    return aspect_table(np.full((vocab_size, n_aspects), 1.0 / n_aspects))


# --- gradient check ----------------------------------------------------------


@dataclass(frozen=True)
class GradCheckSizes:
    m: int = 12
    dim: int = 8
    char_features: int = 4
    n_aspects: int = 6
    channels: int = 8
    n_domains: int = 3
    char_dim: int = 4
    char_width: int = 3
    max_chars: int = 6
    vocab_size: int = 20
    char_vocab_size: int = 10
    reviews: int = 4


def gradcheck_instance(seed, sizes=GradCheckSizes()):
    """Random full-objective instance: encoder, both heads, Omega, penalties.

    Returns ``(loss_fn, params)`` for :func:`egcnn.tensor.grad_check`.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(m=sizes.m, dim=sizes.dim, char_dim=sizes.char_dim, char_width=sizes.char_width,
                      char_features=sizes.char_features, n_aspects=sizes.n_aspects,
                      widths=(2, 3, 4, 5), channels=sizes.channels, max_chars=sizes.max_chars)
    phi_prime = rng.random((sizes.vocab_size, sizes.n_aspects))
    phi_prime /= phi_prime.sum(axis=1, keepdims=True)
    enc = init_encoder(cfg, sizes.vocab_size, sizes.char_vocab_size, aspect_table(phi_prime), rng)
    # move every tensor off its special initial value so all paths carry gradient
    for p in enc.parameters():
        p.data[...] = rng.uniform(-0.5, 0.5, p.data.shape)
        for r in p.frozen_rows:
            p.data[r] = 0.0
    K, H = sizes.n_domains, cfg.hidden
    heads = DomainHeads(T.Parameter(rng.uniform(-1, 1, H), "U"),
                        T.Parameter(rng.uniform(-1, 1, (H, K)), "W"))
    omega = omega_update(rng.standard_normal((5, K)), 1e-6)
    n = sizes.reviews
    lengths = rng.integers(2, sizes.m + 1, size=n)
    word_ids = np.zeros((n, sizes.m), dtype=np.int64)
    char_ids = np.zeros((n, sizes.m, sizes.max_chars), dtype=np.int64)
    for i, L in enumerate(lengths):
        word_ids[i, :L] = rng.integers(1, sizes.vocab_size, size=L)
        for j in range(L):
            nc = rng.integers(1, sizes.max_chars + 1)
            char_ids[i, j, :nc] = rng.integers(1, sizes.char_vocab_size, size=nc)
    batch = {
        "word_ids": word_ids,
        "char_ids": char_ids,
        "domain": rng.integers(0, K, size=n),
        "target": rng.random(n),
    }
    lc = LossConfig(lambda1=0.1, lambda2=0.01, ridge_eps=1e-6)

    def loss_fn():
        return loss_full(batch, enc, heads, omega, lc)[0]

    return loss_fn, enc.parameters() + heads.parameters()


def run_grad_check(instances=5, seed=0, eps=1e-5, margin=1e-6, sizes=GradCheckSizes()):
    """Gradient-check reports for ``instances`` random problems."""
    reports = []
    for i in range(instances):
        loss_fn, params = gradcheck_instance(seed + i, sizes)
        reports.append(T.grad_check_report(loss_fn, params, eps=eps, margin=margin))
    return reports


# --- synthetic training experiments ------------------------------------------


def overfit_run(seed=0, n_reviews=64, epochs=200, lr=0.08):
    """Target-only training on ``n_reviews`` synthetic reviews; returns training-split Pearson."""
    spec = SyntheticSpec(n_domains=1, related=((True,),), docs_per_domain=(n_reviews,),
                         vocab_size=60, seed=seed)
    data = generate(spec)
    parts = [np.arange(n_reviews)]
    mc = small_model()
    ds = dataset_from_parts(data.tokens, data.domain_ids, data.targets, data.domains, parts,
                            m=mc.m, max_chars=mc.max_chars, min_count=1)
    cfg = TrainConfig(mode="target_only", target_domain=0, epochs=epochs, lr=lr, seed=seed)
    model = train(ds, mc, cfg, uniform_aspects(len(ds.vocab), mc.n_aspects))
    tr = ds.split("train")
    return pearson(predict_split(model, tr), tr["target"]), model


def omega_recovery_run(seed=0, epochs=50, docs=600, noise=0.05):
    """3 domains, 1 and 2 related, 3 orthogonal. Returns the trained model.

    ``model.state.omega_history`` holds Omega after every update. With
    much less data per domain the heads memorise filler words and Omega
    stops reflecting the generating structure.
    """
    spec = SyntheticSpec(docs_per_domain=docs, seed=seed, noise=noise)
    data = generate(spec)
    mc = small_model()
    ds = build_dataset(data.tokens, data.domain_ids, data.targets, data.domains, seed=seed,
                       m=mc.m, max_chars=mc.max_chars, min_count=1)
    cfg = TrainConfig(mode="full", epochs=epochs, seed=seed)
    return train(ds, mc, cfg, uniform_aspects(len(ds.vocab), mc.n_aspects))


def gate_interpretability_run(seed=0, epochs=15, docs=400):
    """Noise-free single-domain task; returns (mean signal gate, mean filler gate)."""
    spec = SyntheticSpec(n_domains=1, related=((True,),), docs_per_domain=(docs,), seed=seed,
                         noise=0.0, min_len=24, max_len=40)
    data = generate(spec)
    mc = small_model(m=48)
    ds = build_dataset(data.tokens, data.domain_ids, data.targets, data.domains, seed=seed,
                       m=mc.m, max_chars=mc.max_chars, min_count=1)
    cfg = TrainConfig(mode="target_only", target_domain=0, epochs=epochs, seed=seed)
    model = train(ds, mc, cfg, uniform_aspects(len(ds.vocab), mc.n_aspects))
    tr = ds.split("train")
    g = gate(compose_word_rep(tr["word_ids"], tr["char_ids"], model.encoder), model.encoder).data
    signal_ids = [ds.vocab.id(t) for t in data.signal_vocab]
    is_signal = np.isin(tr["word_ids"], signal_ids)
    is_filler = (tr["word_ids"] != PAD) & ~is_signal
    return float(g[is_signal].mean()), float(g[is_filler].mean())


def _best_dev_test(ds, mc, cfg, table, k):
    dev, test = ds.split("dev"), ds.split("test")
    best = {"dev": -np.inf, "test": None, "epoch": 0}

    def on_epoch(record, model):
        pd = predict_split(model, dev)
        r = pearson(pd, dev["target"]) if np.ptp(pd) > 0 else -1.0
        if r > best["dev"]:
            pt = predict_split(model, test)
            best.update(dev=r, test=pearson(pt, test["target"]), epoch=record["epoch"])

    train(ds, mc, cfg, table, callback=on_epoch)
    return best


def cross_domain_run(seed=0, target_train=100, source_train=2000, dev=200, test=500,
                     noise=0.1, epochs=10, baseline_epochs=40):
    """Full-mode vs target-only test Pearson on the target domain.

    Domain 1 is the target with ``target_train`` training reviews; domains
    2 and 3 are related sources. Each arm keeps the epoch with the best
    target-domain dev Pearson.
    """
    related = ((True,) * 3,) * 3
    spec = SyntheticSpec(n_domains=3, related=related,
                         docs_per_domain=(target_train + dev + test, source_train, source_train),
                         seed=seed, noise=noise)
    data = generate(spec)
    dom = data.domain_ids
    t_rows = np.flatnonzero(dom == 0)
    parts = [
        np.concatenate([t_rows[:target_train], np.flatnonzero(dom > 0)]),
        t_rows[target_train:target_train + dev],
        t_rows[target_train + dev:],
    ]
    mc = small_model()
    ds = dataset_from_parts(data.tokens, dom, data.targets, data.domains, parts,
                            m=mc.m, max_chars=mc.max_chars, min_count=1)
    table = uniform_aspects(len(ds.vocab), mc.n_aspects)
    full = _best_dev_test(ds, mc, TrainConfig(mode="full", epochs=epochs, seed=seed), table, 0)
    base = _best_dev_test(ds, mc, TrainConfig(mode="target_only", target_domain=0,
                                              epochs=baseline_epochs, seed=seed), table, 0)
    return full["test"], base["test"]
