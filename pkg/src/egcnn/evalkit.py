"""Correlation metrics and per-domain evaluation reports."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError
from .multidomain import predict_split


class UndefinedCorrelation(ContractError):
    """Correlation requested for a constant sequence."""


def pearson(pred, truth):
    """Pearson r with population normalisation, clamped to [-1, 1]."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ContractError(f"pearson needs two 1-D sequences of equal length, got {p.shape}, {y.shape}")
    if p.size < 2:
        raise ContractError("pearson needs at least 2 points")
    dp = p - p.mean()
    dy = y - y.mean()
    sp = np.sqrt(np.dot(dp, dp) / p.size)
    sy = np.sqrt(np.dot(dy, dy) / y.size)
    if sp == 0 or sy == 0:
        raise UndefinedCorrelation("correlation is undefined for a constant sequence")
    r = (np.dot(dp, dy) / p.size) / (sp * sy)
    return float(min(1.0, max(-1.0, r)))


def _ranks(x):
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    ranks[order] = np.arange(x.size, dtype=np.float64)
    xs = x[order]
    # average ranks over ties
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = (i + j) / 2.0
        i = j + 1
    return ranks


def spearman(pred, truth):
    return pearson(_ranks(np.asarray(pred, float)), _ranks(np.asarray(truth, float)))


METRICS = {"pearson": pearson, "spearman": spearman}


@dataclass
class DomainResult:
    domain: str
    n: int
    pearson: float  # metric value; None when undefined
    mode: str


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    config_digest: str = ""
    checkpoint_digest: str = ""
    metric: str = "pearson"

    def records(self):
        return [asdict(r) for r in self.rows]

    def to_json(self):
        return json.dumps({
            "metric": self.metric,
            "config_digest": self.config_digest,
            "checkpoint_digest": self.checkpoint_digest,
            "rows": self.records(),
        }, indent=2, sort_keys=True)

    def to_table(self):
        lines = [f"{'domain':<20} {'n':>7} {self.metric:>9}  mode"]
        for r in self.rows:
            val = "n/a" if r.pearson is None else f"{r.pearson:.4f}"
            lines.append(f"{r.domain:<20} {r.n:>7} {val:>9}  {r.mode}")
        return "\n".join(lines) + "\n"


def evaluate(model, dataset, split="test", metric="pearson", config_digest="", checkpoint_digest=""):
    """Per-domain correlation between predictions and helpfulness targets."""
    fn = METRICS[metric]
    data = dataset.split(split)
    pred = predict_split(model, data)
    report = EvalReport(config_digest=config_digest, checkpoint_digest=checkpoint_digest, metric=metric)
    mode = model.config.mode
    for k, name in enumerate(dataset.domains):
        if mode == "target_only" and k != model.config.target_domain:
            continue
        idx = np.flatnonzero(data["domain"] == k)
        if idx.size == 0:
            continue
        try:
            r = fn(pred[idx], data["target"][idx])
        except ContractError:
            r = None
        report.rows.append(DomainResult(name, int(idx.size), r, mode))
    return report
