"""On-disk containers: dataset cache, aspect file, checkpoint, training log.

Every container is an uncompressed ``.npz`` archive with a JSON header
stored under ``__header__``. Headers carry a format name and version plus
the hashes needed to refuse mismatched combinations. Nothing
time-dependent is written, so identical inputs give identical bytes.
"""
import hashlib
import io
import json
import os
import zipfile

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ContractError
from .model import EncoderParams, ModelConfig
from .multidomain import DomainHeads, LossConfig, TrainConfig, TrainedModel, TrainState
from .text import SPLITS, CharVocab, Dataset, Vocab

FORMAT_VERSION = 1
_SPLIT_KEYS = ("word_ids", "char_ids", "domain", "target")


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def array_digest(a):
    a = np.ascontiguousarray(a)
    return hashlib.sha256(str(a.dtype).encode() + str(a.shape).encode() + a.tobytes()).hexdigest()


def check_writable(path, force=False):
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def _write_npz(path, header, arrays, force=False):
    check_writable(path, force)
    # fixed entry order and zip timestamps keep the bytes reproducible
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        items = [("__header__", np.array(json.dumps(header, sort_keys=True)))]
        items += sorted(arrays.items())
        for name, arr in items:
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def _read_npz(path, expected_format):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path} does not exist")
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    header = json.loads(str(arrays.pop("__header__")))
    if header.get("format") != expected_format:
        raise ContractError(f"{path} is a {header.get('format')!r} file, expected {expected_format!r}")
    if header.get("version") != FORMAT_VERSION:
        raise ContractError(f"{path} has format version {header.get('version')}, expected {FORMAT_VERSION}")
    return header, arrays


def _expect(header, path, **expected):
    for key, want in expected.items():
        if want is not None and header.get(key) != want:
            raise ContractError(f"{path}: {key} is {header.get(key)!r}, expected {want!r}")


# --- dataset cache -----------------------------------------------------------


def save_dataset(path, ds, run_config=None, extra=None, extra_arrays=None, force=False):
    header = {
        "format": "egcnn-dataset",
        "version": FORMAT_VERSION,
        "m": ds.m,
        "max_chars": ds.max_chars,
        "vocab_hash": ds.vocab.digest(),
        "charvocab_hash": ds.charvocab.digest(),
        "domains": list(ds.domains),
        "counts": {s: ds.size(s) for s in SPLITS},
        "run_config": run_config or {},
        "extra": extra or {},
    }
    arrays = {
        "vocab": np.array(json.dumps(ds.vocab.itos)),
        "charvocab": np.array(json.dumps(ds.charvocab.itos)),
    }
    for s in SPLITS:
        for key in _SPLIT_KEYS:
            arrays[f"{s}.{key}"] = ds.splits[s][key]
    for key, arr in (extra_arrays or {}).items():
        arrays[f"extra.{key}"] = arr
    _write_npz(path, header, arrays, force)


def load_dataset(path, m=None, max_chars=None, vocab_hash=None):
    """Load a dataset cache, refusing it when the given header fields differ."""
    header, arrays = _read_npz(path, "egcnn-dataset")
    _expect(header, path, m=m, max_chars=max_chars, vocab_hash=vocab_hash)
    vocab = Vocab(json.loads(str(arrays["vocab"]))[2:])
    charvocab = CharVocab(json.loads(str(arrays["charvocab"]))[2:])
    if vocab.digest() != header["vocab_hash"] or charvocab.digest() != header["charvocab_hash"]:
        raise ContractError(f"{path}: stored vocabulary does not match its header hash")
    ds = Dataset(header["domains"], vocab, charvocab, header["m"], header["max_chars"])
    for s in SPLITS:
        ds.splits[s] = {key: arrays[f"{s}.{key}"] for key in _SPLIT_KEYS}
    extra_arrays = {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}
    return ds, header, extra_arrays


# --- aspect file -------------------------------------------------------------


def save_aspects(path, phi, phi_prime, vocab_hash, run_config=None, force=False):
    header = {
        "format": "egcnn-aspects",
        "version": FORMAT_VERSION,
        "n_aspects": int(phi.shape[0]),
        "vocab_size": int(phi.shape[1]),
        "vocab_hash": vocab_hash,
        "run_config": run_config or {},
    }
    _write_npz(path, header, {"phi": phi, "phi_prime": phi_prime}, force)


def load_aspects(path, vocab_hash=None):
    header, arrays = _read_npz(path, "egcnn-aspects")
    _expect(header, path, vocab_hash=vocab_hash)
    return arrays["phi"], arrays["phi_prime"], header


# --- checkpoint --------------------------------------------------------------


def save_checkpoint(path, model, dataset, run_config=None, force=False):
    enc = model.encoder
    params = model.parameters()
    header = {
        "format": "egcnn-checkpoint",
        "version": FORMAT_VERSION,
        "model_config": enc.config.to_dict(),
        "train_config": model.config.to_dict(),
        "vocab_hash": dataset.vocab.digest(),
        "charvocab_hash": dataset.charvocab.digest(),
        "aspect_hash": array_digest(enc.aspects.data),
        "domains": list(dataset.domains),
        "vocab_size": len(dataset.vocab),
        "charvocab_size": len(dataset.charvocab),
        "params": [p.name for p in params],
        "shared_frozen": not isinstance(model.heads.shared, T.Parameter),
        "has_domain_heads": model.heads.domain is not None,
        "epoch": model.state.epoch,
        "seed": model.state.seed,
        "kernel_backend": kernels.BACKEND,
        "run_config": run_config or {},
    }
    arrays = {"aspects": enc.aspects.data, "omega": np.asarray(model.omega)}
    if model.state.omega_history:
        arrays["omega_history"] = np.array(model.state.omega_history)
    for p in params:
        arrays[f"param.{p.name}"] = p.data
        arrays[f"accum.{p.name}"] = p.accum
    if header["shared_frozen"]:
        arrays["shared_const"] = model.heads.shared.data
    _write_npz(path, header, arrays, force)


def load_checkpoint(path, dataset=None):
    """Rebuild a :class:`TrainedModel`; with ``dataset``, verify its vocab hashes."""
    header, arrays = _read_npz(path, "egcnn-checkpoint")
    if dataset is not None:
        if dataset.vocab.digest() != header["vocab_hash"] or dataset.charvocab.digest() != header["charvocab_hash"]:
            raise ContractError(f"{path}: checkpoint vocabulary hash does not match the dataset")
    aspects = arrays["aspects"]
    if array_digest(aspects) != header["aspect_hash"]:
        raise ContractError(f"{path}: aspect table does not match its header hash")
    mc = dict(header["model_config"])
    mc["widths"] = tuple(mc["widths"])
    config = ModelConfig(**mc)
    tc = dict(header["train_config"])
    tc["loss"] = LossConfig(**tc["loss"])
    tcfg = TrainConfig(**tc)

    def param(name, frozen_rows=()):
        p = T.Parameter(arrays[f"param.{name}"], name, frozen_rows)
        p.accum = arrays[f"accum.{name}"].copy()
        return p

    names = set(header["params"])
    encoder = EncoderParams(
        config=config,
        word_emb=param("word_emb", (0,)),
        char_emb=param("char_emb", (0,)),
        char_filters=param("char.w"),
        char_bias=param("char.b"),
        gate_w=param("gate.w"),
        gate_b=param("gate.b"),
        conv_filters=[param(f"conv{f}.w") for f in config.widths],
        conv_bias=[param(f"conv{f}.b") for f in config.widths],
        aspects=T.Tensor(aspects),
    )
    shared = T.Tensor(arrays["shared_const"]) if header["shared_frozen"] else param("U")
    heads = DomainHeads(shared, param("W") if "W" in names else None)
    state = TrainState(epoch=header["epoch"], seed=header["seed"],
                       omega_history=list(arrays.get("omega_history", [])))
    model = TrainedModel(encoder, heads, arrays["omega"], tcfg, state)
    return model, header


# --- training log ------------------------------------------------------------


def write_log(path, records, run_config=None, force=False):
    """One JSON object per line: a config line, then one line per epoch."""
    check_writable(path, force)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"run_config": run_config or {}}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_log(path):
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    return lines[0].get("run_config", {}), lines[1:]
