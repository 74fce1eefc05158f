"""Tokenization, vocabularies, fixed-length encoding and review ingestion."""
import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, LabelError

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
SPLITS = ("train", "dev", "test")

_NON_ALNUM = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class ReviewRecord:
    text: str
    helpful_yes: int
    helpful_total: int
    domain: str

    def __post_init__(self):
        if self.helpful_yes < 0 or self.helpful_total < 0:
            raise LabelError(f"negative vote counts ({self.helpful_yes}, {self.helpful_total})")
        if self.helpful_yes > self.helpful_total:
            raise LabelError(f"helpful_yes {self.helpful_yes} exceeds helpful_total {self.helpful_total}")

    @property
    def target(self):
        if self.helpful_total == 0:
            raise LabelError("helpful_total is 0; helpfulness score is undefined")
        return self.helpful_yes / self.helpful_total


def tokenize(text):
    """Lowercase and split on runs of non-alphanumeric characters.

    >>> tokenize("Wi-Fi 5GHz")
    ['wi', 'fi', '5ghz']
    """
    return [t for t in _NON_ALNUM.split(text.lower()) if t]


class Vocab:
    """Token <-> id bijection with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens):
        self.itos = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("vocabulary tokens must be unique")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token):
        return self.stoi.get(token, UNK)

    def token(self, i):
        return self.itos[i]

    def digest(self):
        return hashlib.sha256(json.dumps(self.itos).encode()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos


class CharVocab(Vocab):
    """Character vocabulary; every observed character is kept."""

    @classmethod
    def from_tokens(cls, corpus):
        chars = sorted({c for doc in corpus for tok in doc for c in tok})
        return cls(chars)


def build_vocab(corpus, min_count=2):
    """Vocabulary of tokens seen at least ``min_count`` times.

    Ids follow (frequency descending, token ascending) so that rebuilding
    from the same corpus always gives the same ids.
    """
    if min_count < 1:
        raise ContractError(f"min_count must be >= 1, got {min_count}")
    counts = Counter(tok for doc in corpus for tok in doc)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(kept)


@dataclass
class EncodedReview:
    word_ids: np.ndarray  # (m,)
    char_ids: np.ndarray  # (m, L_c)
    domain_id: int
    target: float


def encode_tokens(tokens, vocab, charvocab, m, max_chars):
    """Word ids (m,) and char ids (m, max_chars) for a token list."""
    if m < 1 or max_chars < 1:
        raise ContractError(f"m and L_c must be >= 1, got {m}, {max_chars}")
    word_ids = np.zeros(m, dtype=np.int64)
    char_ids = np.zeros((m, max_chars), dtype=np.int64)
    for i, tok in enumerate(tokens[:m]):
        word_ids[i] = vocab.id(tok)
        for j, ch in enumerate(tok[:max_chars]):
            char_ids[i, j] = charvocab.id(ch)
    return word_ids, char_ids


def encode_review(record, vocab, charvocab, m=100, max_chars=16, domain_id=0):
    """Encode one review; the target is the helpful fraction a/b."""
    target = record.target
    word_ids, char_ids = encode_tokens(tokenize(record.text), vocab, charvocab, m, max_chars)
    return EncodedReview(word_ids, char_ids, domain_id, target)


def ingest_reviews(path, domain, min_votes=5):
    """Read newline-delimited review objects, keeping those with more than ``min_votes`` votes.

    Returns ``(records, stats)`` where ``stats`` counts total, kept and
    skipped lines.
    """
    records = []
    stats = Counter()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            stats["total"] += 1
            try:
                obj = json.loads(line)
                text = obj["reviewText"]
                a, b = obj["helpful"]
                a, b = int(a), int(b)
                if not isinstance(text, str):
                    raise TypeError("reviewText is not a string")
            except (ValueError, KeyError, TypeError) as exc:
                stats["skipped"] += 1
                log.warning("%s:%d: skipped malformed record (%s)", path, lineno, exc)
                continue
            if a > b or a < 0:
                stats["skipped"] += 1
                log.warning("%s:%d: skipped record with helpful=[%d, %d]", path, lineno, a, b)
                continue
            if b <= min_votes:
                stats["filtered"] += 1
                continue
            records.append(ReviewRecord(text, a, b, domain))
    stats["kept"] = len(records)
    return records, dict(stats)


@dataclass
class Dataset:
    """Encoded reviews stored as stacked arrays, one block per split.

    Each split maps to a dict with ``word_ids`` (N, m), ``char_ids``
    (N, m, L_c), ``domain`` (N,) and ``target`` (N,).
    """

    domains: list
    vocab: Vocab
    charvocab: CharVocab
    m: int
    max_chars: int
    splits: dict = field(default_factory=dict)

    def split(self, name):
        return self.splits[name]

    def size(self, name):
        return int(self.splits[name]["target"].shape[0])

    def domain_indices(self, name, k):
        return np.flatnonzero(self.splits[name]["domain"] == k)

    def subset(self, name, idx):
        s = self.splits[name]
        return {key: val[idx] for key, val in s.items()}


def stack_encoded(encoded, m, max_chars):
    n = len(encoded)
    out = {
        "word_ids": np.zeros((n, m), dtype=np.int64),
        "char_ids": np.zeros((n, m, max_chars), dtype=np.int64),
        "domain": np.zeros(n, dtype=np.int64),
        "target": np.zeros(n, dtype=np.float64),
    }
    for i, e in enumerate(encoded):
        out["word_ids"][i] = e.word_ids
        out["char_ids"][i] = e.char_ids
        out["domain"][i] = e.domain_id
        out["target"][i] = e.target
    return out


def _split_counts(n, ratios):
    counts = [int(np.floor(n * r)) for r in ratios]
    # remainder from flooring goes to train
    counts[0] += n - sum(counts)
    return counts


def split_indices(domain_ids, ratios=(0.8, 0.1, 0.1), seed=0):
    """Per-domain seeded shuffle then contiguous slicing into len(ratios) parts."""
    ratios = tuple(float(r) for r in ratios)
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"split ratios must be positive and sum to 1, got {ratios}")
    domain_ids = np.asarray(domain_ids)
    rng = np.random.default_rng(seed)
    parts = [[] for _ in ratios]
    for k in np.unique(domain_ids):
        idx = np.flatnonzero(domain_ids == k)
        idx = idx[rng.permutation(idx.size)]
        if idx.size < len(ratios):
            log.warning("domain %s has %d records (< %d split parts); all assigned to train",
                        k, idx.size, len(ratios))
            parts[0].extend(idx.tolist())
            continue
        start = 0
        for p, c in zip(parts, _split_counts(idx.size, ratios)):
            p.extend(idx[start:start + c].tolist())
            start += c
    return [np.array(sorted(p), dtype=np.int64) for p in parts]


def build_dataset(token_lists, domain_ids, targets, domains, ratios=(0.8, 0.1, 0.1), seed=0,
                  m=100, max_chars=16, min_count=2, vocab=None, charvocab=None):
    """Encode tokenised reviews and split them per domain into train/dev/test."""
    parts = split_indices(domain_ids, ratios, seed)
    return dataset_from_parts(token_lists, domain_ids, targets, domains, parts,
                              m, max_chars, min_count, vocab, charvocab)


def dataset_from_parts(token_lists, domain_ids, targets, domains, parts, m=100, max_chars=16,
                       min_count=2, vocab=None, charvocab=None):
    """Encode reviews into splits given explicit row indices per split.

    ``parts`` lists index arrays for train, dev and test (missing trailing
    splits are empty). Vocabularies are built from the training rows only
    unless given.
    """
    domain_ids = np.asarray(domain_ids, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size and (targets.min() < 0 or targets.max() > 1):
        raise LabelError("targets must lie in [0, 1]")
    train_tokens = [token_lists[i] for i in parts[0]]
    if vocab is None:
        vocab = build_vocab(train_tokens, min_count)
    if charvocab is None:
        charvocab = CharVocab.from_tokens(train_tokens)
    ds = Dataset(list(domains), vocab, charvocab, m, max_chars)
    for name, idx in zip(SPLITS, parts):
        enc = []
        for i in idx:
            w, c = encode_tokens(token_lists[i], vocab, charvocab, m, max_chars)
            enc.append(EncodedReview(w, c, int(domain_ids[i]), float(targets[i])))
        ds.splits[name] = stack_encoded(enc, m, max_chars)
    for name in SPLITS[len(parts):]:
        ds.splits[name] = stack_encoded([], m, max_chars)
    return ds


def split_dataset(records, ratios=(0.8, 0.1, 0.1), seed=0, m=100, max_chars=16,
                  min_count=2, vocab=None, charvocab=None, domains=None):
    """Build vocabularies, encode and split review records.

    Records with no votes are dropped before encoding.
    """
    records = [r for r in records if r.helpful_total > 0]
    if domains is None:
        domains = sorted({r.domain for r in records})
    dom_index = {d: i for i, d in enumerate(domains)}
    return build_dataset(
        [tokenize(r.text) for r in records],
        [dom_index[r.domain] for r in records],
        [r.target for r in records],
        domains, ratios, seed, m, max_chars, min_count, vocab, charvocab,
    )
