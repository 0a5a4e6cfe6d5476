"""Command line entry point: ``mtpfn <subcommand> ...``."""

import argparse
import dataclasses
import glob
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .config import dump_config, load_config

log = logging.getLogger("mtpfn")


def _manifest(path, command, args, configs=None, started=None):
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "configs": {k: dump_config(v) for k, v in (configs or {}).items()},
        "seed": getattr(args, "seed", None),
        "code_version": __version__,
        "started": started,
        "finished": time.time(),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _manifest_path(out):
    if os.path.isdir(out):
        return os.path.join(out, "manifest.json")
    return out + ".manifest.json"


def cmd_generate_prior(args):
    from .prior import sample_dataset, write_dataset

    cfg = load_config(args.config, "prior")
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for i in range(args.count):
        ds = sample_dataset(cfg, args.n_samples, rng).validate()
        write_dataset(ds, os.path.join(args.out, f"dataset_{i:05d}.bin"))
    return {"prior": cfg}


def cmd_train(args):
    from .training import train

    prior = load_config(args.prior, "prior")
    model = load_config(args.model, "model")
    tcfg = load_config(args.train, "train")
    if args.seed is not None:
        tcfg = dataclasses.replace(tcfg, seed=args.seed)
    train(tcfg, prior, model, out_dir=args.out, resume=args.resume)
    return {"prior": prior, "model": model, "train": tcfg}


def _read_table(args):
    from .dataio import load_csv

    targets = [t for t in args.targets.split(",") if t]
    ds = load_csv(args.data, nominal=targets, targets=targets)
    return ds, targets


def cmd_predict(args):
    from .inference import predict_ensembled
    from .model import ModelParameters

    ds, targets = _read_table(args)
    if not 0 < args.split < ds.n_rows:
        raise ValueError(f"--split must be in (0, {ds.n_rows})")
    params = ModelParameters.load(args.checkpoint)
    X = ds.features()
    codes = ds.target_codes()[:args.split]
    if np.any(codes < 0):
        raise ValueError("context rows have missing target labels")
    labels = np.column_stack([np.asarray(ds.vocabularies[t], dtype=object)[codes[:, i]]
                              for i, t in enumerate(targets)])
    out = predict_ensembled(params, X[:args.split], labels, X[args.split:],
                            max_members=args.ensemble, nominal=ds.nominal_feature_indices())
    rows = []
    for r in range(X.shape[0] - args.split):
        rows.append({t: {str(c): float(p) for c, p in zip(out.classes[i], out.probabilities[i][r])}
                     for i, t in enumerate(targets)})
    with open(args.out, "w") as fh:
        json.dump({"targets": targets, "split": args.split, "predictions": rows}, fh,
                  indent=1, sort_keys=True)
        fh.write("\n")


def _load_predictions(path):
    with open(path) as fh:
        doc = json.load(fh)
    targets = doc["targets"]
    classes = [list(doc["predictions"][0][t]) for t in targets] if doc["predictions"] else []
    probs = [np.array([[row[t][c] for c in classes[i]] for row in doc["predictions"]])
             for i, t in enumerate(targets)]
    return targets, classes, probs


def cmd_evaluate(args):
    import csv

    from .evaluation import emit_report, target_metrics

    model_dirs = sorted(d for d in glob.glob(os.path.join(args.predictions, "*")) if os.path.isdir(d))
    sources = {os.path.basename(d): d for d in model_dirs} or {"model": args.predictions}
    results = {}
    for model, pdir in sources.items():
        for path in sorted(glob.glob(os.path.join(pdir, "*.json"))):
            name = os.path.splitext(os.path.basename(path))[0]
            if name.endswith(".manifest"):
                continue
            targets, classes, probs = _load_predictions(path)
            with open(os.path.join(args.labels, name + ".csv"), newline="") as fh:
                reader = csv.DictReader(fh)
                label_rows = list(reader)
            if len(label_rows) != len(probs[0]):
                raise ValueError(f"{name}: {len(label_rows)} labels for {len(probs[0])} predictions")
            codes = np.array([[classes[i].index(row[t]) if row[t] in classes[i] else -1
                               for i, t in enumerate(targets)] for row in label_rows])
            results.setdefault(model, {})[name] = target_metrics(probs, codes).means()
    emit_report(results, args.out)


def cmd_derive_mtl(args):
    from .dataio import derive_mtl, load_csv, write_derived

    ds = load_csv(args.input)
    target = args.target_column or ds.names[-1]
    ds = load_csv(args.input, nominal=[target], targets=[target])
    derived, plan = derive_mtl(ds, args.targets, np.random.default_rng(args.seed))
    write_derived(derived, plan, args.out)


def cmd_bench_scaling(args):
    from .bench import make_scaling_datasets, run_scaling, write_scaling_csv
    from .model import ModelParameters

    params = ModelParameters.load(args.checkpoint)
    ds = make_scaling_datasets(N=args.n_samples, k=args.n_features, T=5, seed=args.seed)
    runs = run_scaling(params, ds, repeats=args.repeats)
    write_scaling_csv(runs, args.out)


def build_parser():
    p = argparse.ArgumentParser(prog="mtpfn", description="Multitask prior-data fitted network tools")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-prior", help="sample synthetic datasets from the prior")
    g.add_argument("--config")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-samples", type=int, default=1024)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_prior)

    t = sub.add_parser("train", help="fit the model to the prior")
    t.add_argument("--prior")
    t.add_argument("--model")
    t.add_argument("--train")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="in-context prediction for a CSV")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--targets", required=True, help="comma separated target columns")
    pr.add_argument("--split", type=int, required=True, help="rows before this index are context")
    pr.add_argument("--ensemble", type=int, default=1)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="metrics, ranks and critical differences")
    e.add_argument("--predictions", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("derive-mtl", help="turn feature columns into targets")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--targets", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--target-column", help="original target to drop (default: last column)")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_derive_mtl)

    b = sub.add_parser("bench-scaling", help="time native multitask vs per-target inference")
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--n-samples", type=int, default=1000)
    b.add_argument("--n-features", type=int, default=50)
    b.set_defaults(func=cmd_bench_scaling)
    return p


def dispatch(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("MTPFN_THREADS")
    started = time.time()
    try:
        if threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=int(threads)):
                configs = args.func(args)
        else:
            configs = args.func(args)
        _manifest(_manifest_path(args.out), args.command, args, configs, started)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"mtpfn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
