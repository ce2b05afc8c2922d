"""``hybseq`` command-line interface.

Global options come before the subcommand::

    hybseq [--seed N] [--config FILE] [--threads N] [--params FILE] <command> ...

The config file is a JSON object. Top-level keys are option names (with
``_`` for ``-``) and act as defaults that explicit flags override; the
optional ``"dataset"`` object holds :class:`~hybseq.dataset.DatasetConfig`
fields for ``generate``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

log = logging.getLogger("hybseq")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ------------------------------------------------------------------ helpers

def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return cfg


def _nn(args):
    from .thermo import load_params
    return load_params(args.params) if args.params else load_params()


def _read_pairs(path):
    """Pairs plus the yield matrix and labels, from a pair CSV."""
    from .dataset import read_csv, records_to_arrays
    recs = read_csv(path)
    pairs, y, _ = records_to_arrays(recs)
    return recs, pairs, y


def _read_pair_list(path):
    """Pairs from a dataset CSV or from a bare ``s1,s2`` CSV."""
    import csv
    from .seq import DnaSeq
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header == ["s1", "s2"]:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return [(DnaSeq(a), DnaSeq(b)) for a, b in (r for r in rows if r)]
    return _read_pairs(path)[1]


def _features_for(args, pairs):
    from .features import extract_many
    return extract_many(pairs, nn=_nn(args))


def _emit(lines, out=None):
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ----------------------------------------------------------------- commands

def cmd_generate(args, cfg):
    from .dataset import DatasetConfig, generate, write_csv
    from .thermo import YieldOracle
    d = dict(cfg.get("dataset", {}))
    d["seed"] = args.seed
    if args.size is not None:
        d["target_size"] = args.size
    recs = generate(DatasetConfig.from_dict(d), YieldOracle(_nn(args)))
    write_csv(recs, args.out)
    log.info("wrote %d records to %s", len(recs), args.out)
    return 0


def cmd_split(args, cfg):
    from .dataset import read_csv, stratified_split, write_csv
    recs = read_csv(args.input)
    parts = stratified_split(recs, tuple(args.fractions), seed=args.seed)
    for name, part in zip(("train", "val", "test"), parts):
        write_csv(part, f"{args.prefix}{name}.csv")
    print(" ".join(f"{n}={len(p)}" for n, p in zip(("train", "val", "test"), parts)))
    return 0


def cmd_features(args, cfg):
    from .features import write_feature_csv
    recs, pairs, y = _read_pairs(args.input)
    X = _features_for(args, pairs)
    write_feature_csv(pairs, X, [r.y for r in recs], args.out)
    return 0


def cmd_train(args, cfg):
    from .models import FEATURE_MODELS, SEQUENCE_MODELS, fit_model, make_model, save_model
    _, pairs, y = _read_pairs(args.input)
    kw = {}
    if args.model not in ("lda", "qda"):
        if args.lr is not None:
            kw["lr"] = args.lr
        if args.batch_size is not None:
            kw["batch_size"] = args.batch_size
        if args.max_epochs is not None:
            kw["max_epochs"] = args.max_epochs
    if args.symmetric:
        if args.model not in SEQUENCE_MODELS:
            raise UsageError("--symmetric applies to cnn and cnn-lite only")
        kw.update(swap_augment=True, symmetrize=True)
    model = make_model(args.model, seed=args.seed, groups=args.groups, **kw)
    y57 = y[:, 4]
    val = None
    X = X_val = None
    if args.model in FEATURE_MODELS:
        X = _features_for(args, pairs)
    if args.val:
        _, vp, vy = _read_pairs(args.val)
        if args.model in FEATURE_MODELS:
            X_val = _features_for(args, vp)
        val = (vp, vy[:, 4], X_val)
    fit_model(model, pairs, y57, X, val)
    save_model(model, args.out)
    log.info("saved %s model to %s", args.model, args.out)
    return 0


def _scores(args, model, pairs):
    from .models import FEATURE_MODELS, model_kind, predict_scores
    X = _features_for(args, pairs) if model_kind(model) in FEATURE_MODELS else None
    return predict_scores(model, pairs, X)


def cmd_eval(args, cfg):
    from .baseline import MetricsReport
    from .models import SEQUENCE_MODELS, decision_threshold, load_model, model_kind
    model = load_model(args.model)
    _, pairs, y = _read_pairs(args.input)
    from .thermo import TEMPS
    col = TEMPS.index(float(args.temp))
    truth = y[:, col] >= 0.2
    s = _scores(args, model, pairs)
    kind = model_kind(model)
    regress = kind in SEQUENCE_MODELS
    rep = MetricsReport.from_predictions(kind, truth, s >= decision_threshold(model), s,
                                         y[:, col] if regress else None,
                                         s if regress else None)
    print(rep.table())
    _emit(rep.lines(), args.out)
    return 0


def cmd_predict(args, cfg):
    from .models import decision_threshold, load_model
    model = load_model(args.model)
    pairs = _read_pair_list(args.input)
    s = _scores(args, model, pairs)
    thr = decision_threshold(model)
    lines = ["s1,s2,score,label"]
    lines += [f"{a},{b},{v:.6f},{'High' if v >= thr else 'Low'}" for (a, b), v in zip(pairs, s)]
    _emit(lines, args.out)
    return 0


def _design_predictor(args):
    if args.predictor == "thermo":
        from .thermo import REFERENCE_TEMP, YieldOracle
        oracle = YieldOracle(_nn(args))
        return lambda pairs: oracle.yields(pairs, [REFERENCE_TEMP])[:, 0], args.threshold
    if not args.model:
        raise UsageError(f"--predictor {args.predictor} needs --model FILE")
    from .models import decision_threshold, load_model, model_kind
    model = load_model(args.model)
    if model_kind(model) != args.predictor:
        raise UsageError(f"{args.model} holds a {model_kind(model)} model, not {args.predictor}")
    if args.predictor == "mlp":
        # a classifier score is a probability, so conflicts are P(High) >= 0.5
        thr = decision_threshold(model)
    else:
        thr = args.threshold
    return (lambda pairs: _scores(args, model, pairs)), thr


def cmd_design(args, cfg):
    from .libdesign import candidate_pairs, conflict_scan, greedy_prune, write_conflicts
    from .seq import read_fasta, write_fasta
    records = read_fasta(args.input)
    ids = [r.id for r in records]
    seqs = [r.seq for r in records]
    cands = candidate_pairs(seqs, args.k, args.min_score)
    predictor, thr = _design_predictor(args)
    conflicts = conflict_scan(seqs, cands, predictor, thr)
    write_conflicts(conflicts, ids, args.out)
    print(f"sequences={len(seqs)}")
    print(f"candidates={len(cands)}")
    print(f"candidate_fraction={cands.fraction:.6f}")
    print(f"conflicts={len(conflicts)}")
    if args.prune:
        keep = greedy_prune(len(seqs), conflicts)
        out = args.pruned or os.path.splitext(args.out)[0] + ".pruned.fasta"
        write_fasta([seqs[i] for i in keep], out, [ids[i] for i in keep])
        print(f"kept={len(keep)}")
    return 0


def cmd_bench(args, cfg):
    from .bench import bench, make_predictor
    from .models import load_model
    if args.input:
        _, pairs, _ = _read_pairs(args.input)
    else:
        from .dataset import DatasetConfig, generate
        pairs = [r.pair for r in generate(DatasetConfig(target_size=args.size, seed=args.seed))]
    model = load_model(args.model) if args.model else None
    prepare, predict = make_predictor(args.subject, model, _nn(args) if args.subject == "thermo-oracle" else None,
                                      args.batch_size)
    data = prepare(pairs)  # loaded and encoded before any timing starts
    rep = bench(args.subject, predict, data, args.batch_size, args.trials, len(pairs))
    _emit(rep.lines(), args.out)
    return 0


def cmd_thermo(args, cfg):
    from .thermo import tube_state
    s1, s2 = args.pair
    st = tube_state(s1, s2, args.temp, _nn(args))
    print(f"yield={st.yield_:.6f}")
    print("species,conc_M")
    for name, v in st.as_dict().items():
        print(f"{name},{v:.6e}")
    return 0


def cmd_align(args, cfg):
    from .align import semi_global_score
    from .seq import DnaSeq, reverse_complement
    s1, s2 = DnaSeq(args.pair[0]), DnaSeq(args.pair[1])
    print(semi_global_score(s1, reverse_complement(s2) if args.rc else s2))
    return 0


COMMANDS = {
    "generate": cmd_generate, "split": cmd_split, "features": cmd_features,
    "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "design": cmd_design,
    "bench": cmd_bench, "thermo": cmd_thermo, "align": cmd_align,
}


def build_parser():
    from .bench import DEFAULT_TRIALS, SUBJECTS
    from .models import ALL_GROUPS, MODEL_KINDS

    p = _Parser(prog="hybseq", description="DNA hybridisation yield prediction toolkit.")
    p.add_argument("--seed", type=int, default=0, help="seed for every stochastic step")
    p.add_argument("--config", help="JSON config; flags override its values")
    p.add_argument("--threads", type=int, help="cap on worker threads")
    p.add_argument("--params", help="nearest-neighbour parameter file (else $HYBSEQ_PARAMS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="generate a labelled pair dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--size", type=int, help="target number of pairs")

    s = sub.add_parser("split", help="stratified train/val/test split of a pair CSV")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--prefix", default="")
    s.add_argument("--fractions", type=float, nargs=3, default=(0.8, 0.1, 0.1))

    f = sub.add_parser("features", help="extract the nine pair features")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model on a pair CSV")
    t.add_argument("--model", choices=MODEL_KINDS, required=True)
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--val", help="validation pair CSV (early stopping)")
    t.add_argument("--out", required=True)
    t.add_argument("--groups", default=ALL_GROUPS, help="feature groups for feature models")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--symmetric", action="store_true",
                   help="cnn models: train on both strand orders and average them at prediction")

    e = sub.add_parser("eval", help="score a model on a pair CSV")
    e.add_argument("--model", required=True, help="saved model file")
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--temp", type=float, default=57.0, help="temperature of the reference labels")
    e.add_argument("--out", help="write name=value lines here")

    pr = sub.add_parser("predict", help="predict yields or High probabilities")
    pr.add_argument("--model", required=True)
    pr.add_argument("--in", dest="input", required=True, help="pair CSV (dataset or s1,s2)")
    pr.add_argument("--out")

    d = sub.add_parser("design", help="screen a library for conflicting pairs")
    d.add_argument("--in", dest="input", required=True, help="FASTA library")
    d.add_argument("--out", required=True, help="conflict CSV")
    d.add_argument("--k", type=int, default=5)
    d.add_argument("--predictor", choices=("thermo", "cnn", "cnn-lite", "mlp"), default="thermo")
    d.add_argument("--model", help="saved model for learned predictors")
    d.add_argument("--threshold", type=float, default=0.2)
    d.add_argument("--min-score", type=int)
    d.add_argument("--prune", action="store_true")
    d.add_argument("--pruned", help="FASTA for the pruned library")

    b = sub.add_parser("bench", help="time inference")
    b.add_argument("--subject", choices=SUBJECTS, required=True)
    b.add_argument("--model")
    b.add_argument("--in", dest="input", help="pair CSV (else a generated dataset)")
    b.add_argument("--size", type=int, default=10_000)
    b.add_argument("--batch-size", type=int, default=512)
    b.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    b.add_argument("--out")

    th = sub.add_parser("thermo", help="equilibrium of one pair")
    th.add_argument("--pair", nargs=2, required=True, metavar=("S1", "S2"))
    th.add_argument("--temp", type=float, default=57.0)

    a = sub.add_parser("align", help="semi-global alignment score")
    a.add_argument("--pair", nargs=2, required=True, metavar=("S1", "S2"))
    a.add_argument("--rc", action="store_true", help="align against the second strand's reverse complement")
    return p


def _apply_config(parser, argv, cfg):
    """Use config values as defaults for the chosen subcommand and globals."""
    flat = {k: v for k, v in cfg.items() if k != "dataset"}
    parser.set_defaults(**{k: v for k, v in flat.items()
                           if k in ("seed", "threads", "params", "verbose")})
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            dests = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in flat.items() if k in dests})
    return parser.parse_args(argv)


def _set_threads(n):
    if not n:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_config(args.config)
        if cfg:
            args = _apply_config(parser, argv, cfg)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        _set_threads(args.threads)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"hybseq: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"hybseq: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
