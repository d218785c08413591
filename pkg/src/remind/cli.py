"""Command line entry point: ``remind run|sweep|inspect-buffer|quantize|synthesize``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .harness import ConfigError, ExperimentConfig, ExperimentError, run_experiment, run_sweep
from .io import FeatureFormatError, export_features, ingest_features
from .learner import load_checkpoint
from .quantizer import codebook_bytes, reconstruction_mse, sample_bytes, save_codebook, train_pq
from .rng import seeded_rng


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    for item in args.set or []:
        key, _, value = item.partition("=")
        cfg = cfg.with_value(key.strip(), value.strip())
    if getattr(args, "out", None):
        cfg = cfg.with_value("output.dir", args.out)
    cfg.validate()
    return cfg


def cmd_run(args) -> dict:
    bundle = run_experiment(_load_config(args))
    return {k: bundle.summary[k] for k in ("config_hash", "learner", "omega_all", "mu_all")} | \
        {"outputs": {k: str(v) for k, v in bundle.paths.items()}}


def cmd_sweep(args) -> dict:
    cfg = _load_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    bundles = run_sweep(cfg, args.axis, values)
    return {"axis": args.axis,
            "runs": [{"value": v, "omega_all": b.summary["omega_all"],
                      "mu_all": b.summary["mu_all"],
                      "reconstruction_mse": b.summary.get("reconstruction_mse")}
                     for v, b in zip(values, bundles)]}


def cmd_inspect_buffer(args) -> dict:
    ck = load_checkpoint(args.checkpoint)
    if "buffer" not in ck:
        raise ValueError("checkpoint holds no replay buffer")
    report = ck["buffer"].capacity_report()
    report["per_class_count"] = {str(k): v for k, v in report["per_class_count"].items()}
    cb = ck.get("codebook")
    if cb is not None:
        report["codebook"] = {"s": cb.s, "c": cb.c, "sub_dim": cb.sub_dim,
                              "bytes": codebook_bytes(cb)}
    return report


def cmd_quantize(args) -> dict:
    ds = ingest_features(args.train)
    cb = train_pq(ds.tensors, args.s, args.c, args.iters, seeded_rng(args.seed))
    save_codebook(cb, args.out)
    return {"out": args.out, "s": cb.s, "c": cb.c, "sub_dim": cb.sub_dim,
            "trained_on": cb.trained_on, "codebook_bytes": codebook_bytes(cb),
            "sample_bytes": sample_bytes(ds.m, cb.s, cb.c),
            "reconstruction_mse": reconstruction_mse(cb, ds.tensors) if len(ds) else None}


def cmd_synthesize(args) -> dict:
    from .harness import load_datasets
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    train, test = load_datasets(cfg)
    export_features(train, args.train_out)
    export_features(test, args.test_out)
    return {"train": args.train_out, "test": args.test_out, "n_train": len(train),
            "n_test": len(test), "m": train.m, "d": train.d}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="remind", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one streaming experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    run.add_argument("--out", help="output directory (overrides output.dir)")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run one experiment per value of a config key")
    sw.add_argument("--config", required=True)
    sw.add_argument("--axis", required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--set", action="append", metavar="KEY=VALUE")
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep)

    ib = sub.add_parser("inspect-buffer", help="report replay buffer contents of a checkpoint")
    ib.add_argument("--checkpoint", required=True)
    ib.set_defaults(func=cmd_inspect_buffer)

    q = sub.add_parser("quantize", help="train a product quantizer on a feature file")
    q.add_argument("--train", required=True)
    q.add_argument("--s", type=int, required=True)
    q.add_argument("--c", type=int, required=True)
    q.add_argument("--iters", type=int, default=25)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_quantize)

    sy = sub.add_parser("synthesize", help="write the synthetic train/test feature files")
    sy.add_argument("--config")
    sy.add_argument("--train-out", required=True)
    sy.add_argument("--test-out", required=True)
    sy.set_defaults(func=cmd_synthesize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except ExperimentError as exc:
        print(json.dumps(exc.to_json()), file=sys.stderr)
        return 2
    except FeatureFormatError as exc:
        print(json.dumps({"error": str(exc), "offset": exc.offset}), file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
