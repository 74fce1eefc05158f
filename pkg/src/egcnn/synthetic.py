"""Synthetic multi-domain review generator with known ground truth.

Reviews are filler tokens with a subset of shared "signal" tokens mixed in.
Each domain k scores a review as ``sigmoid(scale * h_k . (c - rate))``
where ``c`` marks which signal tokens occur. Domains that ``related``
joins have nearly parallel heads; heads of unrelated domains are
orthogonal. The generating heads are returned so tests can compare what
a model learns against them.
"""
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError

_ALPHABET = np.array(list("abcdefghijklmnopqrstuvwxyz"))


@dataclass(frozen=True)
class SyntheticSpec:
    n_domains: int = 3
    vocab_size: int = 200  # filler + signal tokens
    docs_per_domain: tuple = (200, 200, 200)
    signal_tokens: int = 8
    related: tuple = ((True, True, False), (True, True, False), (False, False, True))
    noise: float = 0.0
    seed: int = 0
    min_len: int = 8
    max_len: int = 16
    signal_rate: float = 0.5
    scale: float = 3.0
    perturb: float = 0.15

    def __post_init__(self):
        docs = self.docs_per_domain
        if isinstance(docs, int):
            docs = (docs,) * self.n_domains
        object.__setattr__(self, "docs_per_domain", tuple(int(d) for d in docs))
        object.__setattr__(self, "related", tuple(tuple(bool(v) for v in row) for row in self.related))
        R = np.array(self.related, dtype=bool)
        if self.n_domains < 1 or len(self.docs_per_domain) != self.n_domains:
            raise ContractError("docs_per_domain must give one count per domain")
        if R.shape != (self.n_domains, self.n_domains) or not np.array_equal(R, R.T):
            raise ContractError("related must be a symmetric K x K boolean matrix")
        if self.signal_tokens < 1:
            raise ContractError("at least one signal token is required")
        if self.signal_tokens >= self.vocab_size:
            raise ContractError(
                f"{self.signal_tokens} signal tokens do not fit a vocabulary of {self.vocab_size}"
            )
        if not 0 < self.signal_rate < 1 or self.noise < 0 or self.min_len < 1 or self.max_len < self.min_len:
            raise ContractError(f"invalid synthetic spec {self}")

    def to_dict(self):
        return asdict(self)


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    tokens: list  # token list per review
    domain_ids: np.ndarray
    targets: np.ndarray
    signal_counts: np.ndarray  # (N, S)
    heads: np.ndarray  # (K, S) generating heads
    signal_vocab: list
    filler_vocab: list
    domains: list = field(default_factory=list)


def _groups(R):
    K = R.shape[0]
    label = -np.ones(K, dtype=int)
    g = 0
    for k in range(K):
        if label[k] >= 0:
            continue
        stack = [k]
        while stack:
            i = stack.pop()
            if label[i] >= 0:
                continue
            label[i] = g
            stack.extend(np.flatnonzero(R[i] & (label < 0)).tolist())
        g += 1
    return label, g


def _words(rng, n, length=6):
    seen, out = set(), []
    while len(out) < n:
        w = "".join(rng.choice(_ALPHABET, size=length))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def generating_heads(spec, rng):
    """Unit-norm heads (K, S): related domains share a base direction, groups are orthogonal."""
    S, K = spec.signal_tokens, spec.n_domains
    label, G = _groups(np.array(spec.related))
    if G > S:
        raise ContractError(f"{G} unrelated domain groups need at least {G} signal tokens")
    Q, _ = np.linalg.qr(rng.standard_normal((S, S)))
    heads = np.zeros((K, S))
    for k in range(K):
        h = Q[:, label[k]].copy()
        if S >= G + K:
            h += spec.perturb * Q[:, G + k]
        heads[k] = h / np.linalg.norm(h)
    return heads


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def check_heads(heads, related):
    """Related heads have cosine >= 0.95; unrelated ones |cosine| <= 0.05."""
    R = np.array(related)
    K = heads.shape[0]
    for i in range(K):
        for j in range(i + 1, K):
            c = _cos(heads[i], heads[j])
            if R[i, j] and c < 0.95:
                raise ContractError(f"related heads {i},{j} have cosine {c:.3f} < 0.95")
            if not R[i, j] and abs(c) > 0.05:
                raise ContractError(f"unrelated heads {i},{j} have |cosine| {abs(c):.3f} > 0.05")


def generate(spec):
    rng = np.random.default_rng(spec.seed)
    S = spec.signal_tokens
    heads = generating_heads(spec, rng)
    check_heads(heads, spec.related)
    words = _words(rng, spec.vocab_size)
    signal, filler = words[:S], words[S:]
    tokens, doms, targets, counts = [], [], [], []
    for k, n_docs in enumerate(spec.docs_per_domain):
        for _ in range(n_docs):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            doc = [filler[i] for i in rng.integers(0, len(filler), size=length)]
            c = (rng.random(S) < spec.signal_rate).astype(np.float64)
            for j in np.flatnonzero(c):
                doc.insert(int(rng.integers(0, len(doc) + 1)), signal[j])
            y = 1.0 / (1.0 + np.exp(-spec.scale * heads[k] @ (c - spec.signal_rate)))
            if spec.noise:
                y = float(np.clip(y + spec.noise * rng.standard_normal(), 0.0, 1.0))
            tokens.append(doc)
            doms.append(k)
            targets.append(y)
            counts.append(c)
    return SyntheticData(
        spec=spec,
        tokens=tokens,
        domain_ids=np.array(doms, dtype=np.int64),
        targets=np.array(targets),
        signal_counts=np.array(counts).reshape(-1, S),
        heads=heads,
        signal_vocab=signal,
        filler_vocab=filler,
        domains=[f"domain{k + 1}" for k in range(spec.n_domains)],
    )


def oracle_targets(data):
    """Noise-free targets recomputed from the stored signal indicators."""
    spec = data.spec
    z = spec.scale * np.einsum("ns,ns->n", data.signal_counts - spec.signal_rate, data.heads[data.domain_ids])
    return 1.0 / (1.0 + np.exp(-z))
