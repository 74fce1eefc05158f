"""Cross-domain objective with a learned domain-correlation matrix.

Predictions for domain k use ``(U + W_k) . h``. The per-domain heads are
coupled through ``tr(W Omega^-1 W^T)``; Omega is updated in closed form
between epochs, ``Omega = sqrt(W^T W) / tr(sqrt(W^T W))``, which is the
minimiser of the trace over symmetric PSD matrices with unit trace.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, TrainingError
from .model import encode, init_encoder

log = logging.getLogger(__name__)

MODES = ("full", "fully_shared", "target_only")


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.01
    lambda2: float = 1e-4
    ridge_eps: float = 1e-6

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.ridge_eps) < 0:
            raise ContractError(f"loss weights must be non-negative: {self}")


@dataclass
class DomainHeads:
    shared: object  # Parameter (H,), or a constant Tensor when frozen at zero
    domain: T.Parameter = None  # (H, K); None when there are no per-domain heads

    @property
    def n_domains(self):
        return 0 if self.domain is None else self.domain.data.shape[1]

    def parameters(self):
        out = [self.shared] if isinstance(self.shared, T.Parameter) else []
        if self.domain is not None:
            out.append(self.domain)
        return out

    def head(self, k):
        u = self.shared.data
        return u + self.domain.data[:, k] if self.domain is not None else u.copy()


# --- linear algebra for Omega ------------------------------------------------


def _check_symmetric(M, tol):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    asym = float(np.abs(M - M.T).max(initial=0.0))
    if asym > tol * scale:
        raise ContractError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return 0.5 * (M + M.T)


def _eigh_psd(M, tol):
    vals, vecs = np.linalg.eigh(_check_symmetric(M, tol))
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.size and vals.min() < -tol * scale:
        raise ContractError(f"matrix is not PSD (min eigenvalue {vals.min():.3e})")
    return np.clip(vals, 0.0, None), vecs


def matrix_sqrt_psd(M, tol=1e-10):
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues down to ``-tol`` (relative to the spectral scale) are
    treated as zero.
    """
    vals, vecs = _eigh_psd(M, tol)
    S = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (S + S.T)


def inv_psd(M, tol=1e-10):
    vals, vecs = _eigh_psd(M, tol)
    if vals.min() <= 0:
        raise ContractError("matrix is singular; add a ridge before inverting")
    Minv = (vecs / vals) @ vecs.T
    return 0.5 * (Minv + Minv.T)


def omega_update(W, ridge_eps=1e-6):
    """Closed-form domain correlation for fixed heads ``W`` (H, K)."""
    W = np.asarray(W, dtype=np.float64)
    if not np.all(np.isfinite(W)):
        raise ContractError("omega_update needs finite W")
    K = W.shape[1]
    S = matrix_sqrt_psd(W.T @ W + ridge_eps * np.eye(K))
    tr = np.trace(S)
    if tr <= 0:
        raise ContractError(f"degenerate trace {tr} in omega_update; use ridge_eps > 0")
    omega = S / tr
    return 0.5 * (omega + omega.T)


def trace_penalty(W, omega, ridge_eps=0.0):
    """``tr(W (Omega + ridge I)^-1 W^T)`` as a float."""
    W = np.asarray(W, dtype=np.float64)
    Minv = inv_psd(np.asarray(omega) + ridge_eps * np.eye(W.shape[1]))
    return float(np.einsum("hk,hk->", W @ Minv, W))


def trace_gradient(W, omega, ridge_eps=0.0):
    """Gradient of :func:`trace_penalty` with respect to ``W``: ``2 W (Omega + ridge I)^-1``."""
    W = np.asarray(W, dtype=np.float64)
    return 2.0 * W @ inv_psd(np.asarray(omega) + ridge_eps * np.eye(W.shape[1]))


def omega_is_valid(omega, tol=1e-10):
    omega = np.asarray(omega)
    sym = np.abs(omega - omega.T).max() <= tol
    psd = np.linalg.eigvalsh(0.5 * (omega + omega.T)).min() >= -tol
    unit = abs(np.trace(omega) - 1.0) <= tol
    return bool(sym and psd and unit)


# --- objective ---------------------------------------------------------------


def regularizer(params):
    """Sum of squared parameter entries, skipping each parameter's frozen (PAD) rows."""
    return T.total(*[T.sum_squares(p, p.frozen_rows) for p in params])


def loss_full(batch, encoder, heads, omega, config=LossConfig(), penalty_scale=1.0,
              gating="learned"):
    """Squared error of ``batch`` plus the weighted trace and L2 penalties.

    ``penalty_scale`` multiplies both penalties, so that the minibatch
    losses of one epoch add up to the full objective. Returns the total
    loss tensor and a dict with the raw ``mse``, ``trace`` and ``reg``
    tensors.
    """
    h = encode(batch["word_ids"], batch["char_ids"], encoder, gating=gating)
    n = h.data.shape[0]
    head_rows = T.broadcast_rows(heads.shared, n)
    if heads.domain is not None:
        head_rows = T.add(head_rows, T.take_columns(heads.domain, batch["domain"]))
    pred = T.rowdot(h, head_rows)
    sse = T.mse(pred, batch["target"])
    terms = [sse]
    comps = {"mse": sse, "trace": None, "reg": None}
    if heads.domain is not None:
        K = heads.n_domains
        Minv = inv_psd(np.asarray(omega) + config.ridge_eps * np.eye(K))
        tr = T.trace_quadratic(heads.domain, Minv)
        comps["trace"] = tr
        if config.lambda1:
            terms.append(T.scale(tr, penalty_scale * config.lambda1))
    reg = regularizer(encoder.parameters() + heads.parameters())
    comps["reg"] = reg
    if config.lambda2:
        terms.append(T.scale(reg, penalty_scale * config.lambda2))
    loss = T.total(*terms)
    if not np.isfinite(loss.data):
        raise TrainingError(
            "non-finite loss: " + ", ".join(
                f"{k}={float(v.data) if v is not None else 0.0:.6g}" for k, v in comps.items()
            )
        )
    return loss, comps


# --- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "full"
    target_domain: int = None
    shared_variant: str = "pooled"  # "pooled" or "identity" (U = 0, Omega = I/K, per-domain heads)
    lr: float = 0.08
    eps: float = 1e-8
    batch: int = 32
    epochs: int = 10
    seed: int = 0
    omega_every: int = 1
    freeze_omega: bool = False
    gating: str = "learned"
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "target_only" and self.target_domain is None:
            raise ContractError("target_only mode needs a target domain")
        if self.shared_variant not in ("pooled", "identity"):
            raise ContractError(f"unknown fully-shared variant {self.shared_variant!r}")
        if self.batch < 1 or self.epochs < 0 or self.omega_every < 1 or self.lr <= 0:
            raise ContractError(f"invalid training configuration {self}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    epoch: int = 0
    seed: int = 0
    history: list = field(default_factory=list)  # one dict per epoch
    omega_history: list = field(default_factory=list)


@dataclass
class TrainedModel:
    encoder: object
    heads: DomainHeads
    omega: np.ndarray
    config: TrainConfig
    state: TrainState

    def parameters(self):
        return self.encoder.parameters() + self.heads.parameters()

    def head_for(self, k):
        return self.heads.head(k)


def _uses_domain_heads(cfg):
    return cfg.mode == "full" or (cfg.mode == "fully_shared" and cfg.shared_variant == "identity")


def init_heads(cfg, hidden, n_domains, rng):
    if _uses_domain_heads(cfg):
        if cfg.mode == "fully_shared":
            shared = T.Tensor(np.zeros(hidden))
        else:
            shared = T.Parameter(rng.uniform(-0.05, 0.05, hidden), "U")
        return DomainHeads(shared, T.Parameter(np.zeros((hidden, n_domains)), "W"))
    return DomainHeads(T.Parameter(rng.uniform(-0.05, 0.05, hidden), "U"))


def training_rows(dataset, cfg):
    split = dataset.split("train")
    if cfg.mode == "target_only":
        return np.flatnonzero(split["domain"] == cfg.target_domain)
    return np.arange(split["target"].shape[0])


def _batch(split, idx):
    return {k: v[idx] for k, v in split.items()}


def train(dataset, model_config, cfg, aspect_table, pretrained=None, callback=None):
    """Alternating optimisation of network weights (AdaGrad) and Omega (closed form).

    ``aspect_table`` is the frozen (V, A) word-aspect lookup.
    ``callback(record, model)`` runs after every epoch. Deterministic for a
    given ``cfg.seed``.
    """
    if len(dataset.domains) < 1:
        raise ContractError("dataset has no domains")
    split = dataset.split("train")
    rows = training_rows(dataset, cfg)
    if rows.size == 0:
        raise ContractError("training split is empty for the requested mode")
    rng = np.random.default_rng(cfg.seed)
    encoder = init_encoder(model_config, len(dataset.vocab), len(dataset.charvocab),
                           aspect_table, rng, pretrained)
    K = len(dataset.domains)
    heads = init_heads(cfg, model_config.hidden, K, rng)
    omega = np.eye(K) / K
    params = encoder.parameters() + heads.parameters()
    state = TrainState(seed=cfg.seed)
    lc = cfg.loss
    n = rows.size
    learn_omega = cfg.mode == "full" and not cfg.freeze_omega

    for epoch in range(cfg.epochs):
        order = rows[rng.permutation(n)]
        sse = 0.0
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            with T.Tape() as tape:
                loss, comps = loss_full(_batch(split, idx), encoder, heads, omega, lc,
                                        penalty_scale=idx.size / n, gating=cfg.gating)
            tape.backward(loss)
            T.adagrad_step(params, cfg.lr, cfg.eps)
            sse += float(comps["mse"].data)
        if learn_omega and (epoch + 1) % cfg.omega_every == 0:
            omega = omega_update(heads.domain.data, lc.ridge_eps)
            state.omega_history.append(omega.copy())
        trace = trace_penalty(heads.domain.data, omega, lc.ridge_eps) if heads.domain is not None else 0.0
        reg = float(sum(np.sum(p.data ** 2) - sum(np.sum(p.data[r] ** 2) for r in p.frozen_rows)
                        for p in params))
        record = {
            "epoch": epoch + 1,
            "mse": sse,
            "trace": trace,
            "reg": reg,
            "total": sse + lc.lambda1 * trace + lc.lambda2 * reg,
            "omega": omega.tolist(),
        }
        if not np.isfinite(record["total"]):
            raise TrainingError(f"non-finite loss at epoch {epoch + 1}: {record}")
        state.history.append(record)
        state.epoch = epoch + 1
        log.debug("epoch %d mse %.6g trace %.6g reg %.6g", epoch + 1, sse, trace, reg)
        if callback is not None:
            callback(record, TrainedModel(encoder, heads, omega, cfg, state))
    return TrainedModel(encoder, heads, omega, cfg, state)


def predict_split(model, split, batch=256):
    """Predictions for every row of ``split`` using each row's domain head."""
    n = split["target"].shape[0]
    out = np.zeros(n)
    for start in range(0, n, batch):
        b = _batch(split, slice(start, start + batch))
        h = encode(b["word_ids"], b["char_ids"], model.encoder, gating=model.config.gating).data
        u = model.heads.shared.data
        if model.heads.domain is not None:
            heads = u[None, :] + model.heads.domain.data[:, b["domain"]].T
        else:
            heads = np.broadcast_to(u, h.shape)
        out[start:start + h.shape[0]] = np.einsum("bh,bh->b", h, heads)
    return out
