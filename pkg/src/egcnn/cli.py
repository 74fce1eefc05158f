"""Command-line entry point: ``egcnn <command> [flags]``.

Exit status is 0 on success, 3 for contract errors (bad inputs, hash
mismatches, missing files, refusing to overwrite) and 4 when a
verification check fails.
"""
import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import artifacts, kernels
from . import tensor as T
from .aspects import LdaConfig, aspect_table, fit_aspects, word_aspect_rep
from .errors import ContractError, TrainingError, VerificationError
from .evalkit import evaluate
from .experiments import GradCheckSizes, run_grad_check
from .model import ModelConfig, inspect_gates, load_word_vectors
from .multidomain import LossConfig, TrainConfig, predict_split, train
from .synthetic import SyntheticSpec, generate
from .text import (EncodedReview, build_dataset, encode_tokens, ingest_reviews, split_dataset,
                   stack_encoded, tokenize)

log = logging.getLogger("egcnn")

EXIT_CONTRACT = 3
EXIT_VERIFY = 4


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _resolved(args):
    # output locations stay out of the stored config so reruns elsewhere match byte for byte
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out", "log", "force", "verbose")}
    return json.loads(json.dumps(cfg, default=list))


def config_digest(run_config):
    return hashlib.sha256(json.dumps(run_config, sort_keys=True).encode()).hexdigest()


def _open_out(path, force):
    if path in (None, "-"):
        return None
    artifacts.check_writable(path, force)
    return open(path, "w", encoding="utf-8")


def _encode_texts(texts, ds, domain_id):
    enc = []
    for text in texts:
        w, c = encode_tokens(tokenize(text), ds.vocab, ds.charvocab, ds.m, ds.max_chars)
        enc.append(EncodedReview(w, c, domain_id, 0.0))
    return stack_encoded(enc, ds.m, ds.max_chars)


# --- commands ----------------------------------------------------------------


def cmd_ingest(args):
    paths = args.data
    names = args.domains.split(",") if args.domains else [
        os.path.splitext(os.path.basename(p))[0] for p in paths
    ]
    if len(names) != len(paths):
        raise ContractError(f"{len(paths)} --data files but {len(names)} --domains names")
    artifacts.check_writable(args.out, args.force)
    records = []
    for path, name in zip(paths, names):
        recs, stats = ingest_reviews(path, name, args.min_votes)
        if stats.get("total", 0) == 0:
            log.warning("%s: no records found", path)
        print(f"{name}: kept {stats.get('kept', 0):,} / {stats.get('total', 0):,}"
              f" (skipped {stats.get('skipped', 0)})")
        records.extend(recs)
    ds = split_dataset(records, _floats(args.split), args.seed, args.m, args.max_chars,
                       args.min_count, domains=names)
    artifacts.save_dataset(args.out, ds, _resolved(args), force=args.force)
    print(f"wrote {args.out} (train/dev/test = {ds.size('train')}/{ds.size('dev')}/{ds.size('test')})")


def _related_matrix(k, pairs):
    R = np.eye(k, dtype=bool)
    for pair in pairs:
        i, j = (int(v) - 1 for v in pair.split("-"))
        R[i, j] = R[j, i] = True
    return tuple(tuple(bool(v) for v in row) for row in R)


def cmd_gen_synthetic(args):
    artifacts.check_writable(args.out, args.force)
    docs = _ints(args.docs)
    if len(docs) == 1:
        docs = docs * args.n_domains
    pairs = [p for p in args.related.split(",") if p] if args.related else []
    spec = SyntheticSpec(n_domains=args.n_domains, vocab_size=args.vocab_size, docs_per_domain=docs,
                         signal_tokens=args.signal_tokens,
                         related=_related_matrix(args.n_domains, pairs), noise=args.noise,
                         seed=args.seed, min_len=args.min_len, max_len=args.max_len)
    data = generate(spec)
    ds = build_dataset(data.tokens, data.domain_ids, data.targets, data.domains,
                       _floats(args.split), args.seed, args.m, args.max_chars, min_count=1)
    extra = {"synthetic_spec": spec.to_dict(), "signal_vocab": data.signal_vocab}
    artifacts.save_dataset(args.out, ds, _resolved(args), extra=extra,
                           extra_arrays={"heads": data.heads}, force=args.force)
    print(f"wrote {args.out}: {len(data.tokens)} reviews over {spec.n_domains} domains")


def cmd_fit_aspects(args):
    ds, _, _ = artifacts.load_dataset(args.data)
    artifacts.check_writable(args.out, args.force)
    cfg = LdaConfig(n_aspects=args.aspects, alpha=args.alpha, beta=args.beta,
                    iterations=args.lda_iterations, seed=args.seed)
    tr = ds.split("train")["word_ids"]
    phi = fit_aspects(list(tr), len(ds.vocab), cfg)
    artifacts.save_aspects(args.out, phi, word_aspect_rep(phi), ds.vocab.digest(),
                           _resolved(args), force=args.force)
    print(f"wrote {args.out}: {cfg.n_aspects} aspects over {len(ds.vocab)} words")


def _model_config(args, ds, n_aspects):
    return ModelConfig(m=ds.m, dim=args.dim, char_dim=args.char_dim, char_width=args.char_width,
                       char_features=args.char_features, n_aspects=n_aspects,
                       widths=_ints(args.widths), channels=args.channels, max_chars=ds.max_chars)


def cmd_train(args):
    ds, _, _ = artifacts.load_dataset(args.data, m=args.m, max_chars=args.max_chars)
    log_path = args.log or args.out + ".log.jsonl"
    artifacts.check_writable(args.out, args.force)
    artifacts.check_writable(log_path, args.force)
    if args.phi:
        _, phi_prime, _ = artifacts.load_aspects(args.phi, vocab_hash=ds.vocab.digest())
    else:
        lda = LdaConfig(n_aspects=args.aspects, iterations=args.lda_iterations, seed=args.seed)
        phi_prime = word_aspect_rep(fit_aspects(list(ds.split("train")["word_ids"]), len(ds.vocab), lda))
    table = aspect_table(phi_prime)
    mc = _model_config(args, ds, table.shape[1])
    target = None
    if args.target_domain is not None:
        target = ds.domains.index(args.target_domain) if args.target_domain in ds.domains else int(args.target_domain)
    mode = args.mode.replace("-", "_")
    cfg = TrainConfig(mode=mode, target_domain=target, shared_variant=args.shared_variant, lr=args.lr,
                      batch=args.batch, epochs=args.epochs, seed=args.seed,
                      omega_every=args.omega_every,
                      loss=LossConfig(args.lambda1, args.lambda2, args.ridge_eps))
    pretrained = load_word_vectors(args.glove, ds.vocab, mc.dim) if args.glove else None
    run_config = _resolved(args)
    with T.check_finite(args.check_finite):
        model = train(ds, mc, cfg, table, pretrained)
    artifacts.save_checkpoint(args.out, model, ds, run_config, force=args.force)
    artifacts.write_log(log_path, model.state.history, run_config, force=args.force)
    last = model.state.history[-1] if model.state.history else {}
    print(f"wrote {args.out} and {log_path}; epochs {model.state.epoch}, final mse {last.get('mse', float('nan')):.6g}")


def _load_pair(args):
    ds, _, _ = artifacts.load_dataset(args.data)
    model, header = artifacts.load_checkpoint(args.checkpoint, dataset=ds)
    return ds, model, header


def cmd_evaluate(args):
    ds, model, header = _load_pair(args)
    report = evaluate(model, ds, args.split, args.metric,
                      config_digest=config_digest(header["run_config"]),
                      checkpoint_digest=artifacts.file_digest(args.checkpoint))
    if args.out:
        artifacts.check_writable(args.out + ".txt", args.force)
        artifacts.check_writable(args.out + ".json", args.force)
        with open(args.out + ".txt", "w", encoding="utf-8") as fh:
            fh.write(report.to_table())
        with open(args.out + ".json", "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    sys.stdout.write(report.to_table())


def cmd_predict(args):
    ds, model, _ = _load_pair(args)
    fh = _open_out(args.out, args.force)
    out = fh or sys.stdout
    if args.reviews:
        k = ds.domains.index(args.domain) if args.domain else 0
        with open(args.reviews, encoding="utf-8") as src:
            texts = [json.loads(line)["reviewText"] for line in src if line.strip()]
        batch = _encode_texts(texts, ds, k)
    else:
        batch = ds.split(args.split)
    pred = predict_split(model, batch)
    for i, p in enumerate(pred):
        out.write(json.dumps({"index": i, "domain": ds.domains[int(batch["domain"][i])],
                              "prediction": float(p)}) + "\n")
    if fh:
        fh.close()


def cmd_inspect_gates(args):
    ds, model, _ = _load_pair(args)
    if args.text is not None:
        batch = _encode_texts([args.text], ds, 0)
        rows = [0]
    else:
        batch = ds.split(args.split)
        rows = [args.index] if args.index is not None else range(batch["target"].shape[0])
    fh = _open_out(args.out, args.force)
    out = fh or sys.stdout
    for i in rows:
        pairs = inspect_gates(batch["word_ids"][i], batch["char_ids"][i], model.encoder, ds.vocab)
        out.write(f"# review {i}\n")
        for tok, g in pairs:
            out.write(f"{tok}\t{g:.6f}\n")
    if fh:
        fh.close()


def cmd_grad_check(args):
    sizes = GradCheckSizes(m=args.m, dim=args.dim, char_features=args.char_features,
                           n_aspects=args.aspects, channels=args.channels, n_domains=args.n_domains)
    reports = run_grad_check(args.instances, args.seed, args.eps, args.margin, sizes)
    worst = max(r.max_rel_error for r in reports)
    for i, r in enumerate(reports):
        print(f"instance {i}: max rel err {r.max_rel_error:.3e} "
              f"({r.checked} coords checked, {r.excluded} at kinks excluded)")
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    if not worst < args.tol:
        raise VerificationError(f"gradient check failed: {worst:.3e} >= {args.tol:g}")


# --- parser ------------------------------------------------------------------


def _add_model_flags(p):
    p.add_argument("--dim", type=int, default=100, help="word embedding size D")
    p.add_argument("--char-dim", type=int, default=16)
    p.add_argument("--char-width", type=int, default=3)
    p.add_argument("--char-features", type=int, default=50)
    p.add_argument("--channels", type=int, default=128)
    p.add_argument("--widths", default="2,3,4,5")


def build_parser():
    parser = argparse.ArgumentParser(prog="egcnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read review files into a dataset cache")
    p.add_argument("--data", action="append", required=True, help="review file (repeatable)")
    p.add_argument("--domains", help="comma-separated domain names, one per --data")
    p.add_argument("--min-votes", type=int, default=5)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--max-chars", type=int, default=16)
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic multi-domain cache")
    p.add_argument("--n-domains", type=int, default=3)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--docs", default="200", help="reviews per domain (one value or one per domain)")
    p.add_argument("--signal-tokens", type=int, default=8)
    p.add_argument("--related", default="1-2", help="related domain pairs, e.g. 1-2,3-4")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--min-len", type=int, default=8)
    p.add_argument("--max-len", type=int, default=16)
    p.add_argument("--m", type=int, default=24)
    p.add_argument("--max-chars", type=int, default=8)
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("fit-aspects", help="fit LDA aspects on a cache's training split")
    p.add_argument("--data", required=True)
    p.add_argument("--aspects", type=int, default=100)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--lda-iterations", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_fit_aspects)

    p = sub.add_parser("train", help="train EG-CNN in full, fully-shared or target-only mode")
    p.add_argument("--data", required=True)
    p.add_argument("--phi", help="aspect file from fit-aspects (fitted on the fly when omitted)")
    p.add_argument("--m", type=int, default=None, help="expected sentence length of the cache")
    p.add_argument("--max-chars", type=int, default=None)
    p.add_argument("--aspects", type=int, default=100)
    p.add_argument("--lda-iterations", type=int, default=200)
    _add_model_flags(p)
    p.add_argument("--lr", type=float, default=0.08)
    p.add_argument("--lambda1", type=float, default=0.01)
    p.add_argument("--lambda2", type=float, default=1e-4)
    p.add_argument("--ridge-eps", type=float, default=1e-6)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--omega-every", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["full", "fully-shared", "target-only"], default="full")
    p.add_argument("--shared-variant", choices=["pooled", "identity"], default="pooled")
    p.add_argument("--target-domain")
    p.add_argument("--glove", help="pre-trained vectors, 'token v1 ... vD' per line")
    p.add_argument("--check-finite", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--log")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-domain correlation report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--metric", choices=["pearson", "spearman"], default="pearson")
    p.add_argument("--out", help="report prefix; writes PREFIX.txt and PREFIX.json")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="helpfulness predictions as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--reviews", help="review file to score instead of a cache split")
    p.add_argument("--domain", help="domain head used for --reviews")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect-gates", help="per-word gate values")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--index", type=int)
    p.add_argument("--text", help="score this text instead of cache reviews")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_inspect_gates)

    p = sub.add_parser("grad-check", help="finite-difference check of the full objective")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--m", type=int, default=12)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--char-features", type=int, default=4)
    p.add_argument("--aspects", type=int, default=6)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--n-domains", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--margin", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        args.func(args)
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ContractError, FileNotFoundError, FileExistsError, IndexError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    return 0


if __name__ == "__main__":
    sys.exit(main())
