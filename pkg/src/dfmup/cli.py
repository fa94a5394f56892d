"""Command-line entry point: ``dfmup <command> [options]``.

Exit status: 0 success, 2 configuration error, 3 data or format error,
4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import (ConfigError, DataError, DfmupError, EmbeddingError, FormatError, ParameterError,
                     SolverError)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4

log = logging.getLogger("dfmup")


def _out_dir(args) -> Path:
    if not args.out:
        raise ConfigError("--out is required")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _config(args) -> dict:
    return cfgmod.load_config(args.config, args.set or (), seed=args.seed, workers=args.workers)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, default=float))


def network_config(cfg: dict, resolution: int):
    from .nn.model import NetworkConfig, desk_config, full_config
    net = cfg["network"]
    base = full_config() if net["preset"] == "full" else desk_config()
    changes = {"input_resolution": int(net["input_resolution"] or resolution)}
    if net["conv_channels"]:
        changes["conv_channels"] = tuple(net["conv_channels"])
    if net["fc_widths"]:
        changes["fc_widths"] = tuple(net["fc_widths"])
    return NetworkConfig(**{**base.to_dict(), **changes})


def train_config(cfg: dict):
    from .nn.train import TrainConfig
    t = cfg["train"]
    return TrainConfig(lr0=t["lr0"], batch=t["batch"], epochs=t["epochs"], plateau_factor=t["plateau_factor"],
                       plateau_patience=t["plateau_patience"], seed=int(cfg["seed"]), keep=t["keep"])


# ------------------------------------------------------------------ commands


def cmd_gen(args) -> int:
    from .pipeline import run_gen
    cfg = _config(args)
    out = _out_dir(args)
    cfgmod.echo_config(cfg, out)
    _print(run_gen(cfg, out))
    return EXIT_OK


def cmd_upscale(args) -> int:
    from .pipeline import run_upscale
    if args.backend:
        args.set = list(args.set or ()) + [f"upscale.backend={args.backend}"]
    if args.weights:
        args.set = list(args.set or ()) + [f"upscale.weights={args.weights}"]
    cfg = _config(args)
    out = _out_dir(args)
    cfgmod.echo_config(cfg, out)
    _print(run_upscale(cfg, args.input, out))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .pipeline import benchmark_fields, run_benchmark, write_benchmark
    if args.weights:
        args.set = list(args.set or ()) + [f"upscale.weights={args.weights}"]
    cfg = _config(args)
    out = _out_dir(args)
    cfgmod.echo_config(cfg, out)
    if args.numerical or args.surrogate:
        result = benchmark_fields(cfg, args.numerical or [], args.surrogate or [])
        write_benchmark(result, out)
    else:
        result = run_benchmark(cfg, out, args.compare_backend)
    _print({q: float(v) for q, v in zip(result["quantities"], result["nrmse"])})
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    from .dataset import DatasetConfig, build_dataset, split_dataset, write_dataset
    cfg = _config(args)
    out = _out_dir(args)
    d = cfg["dataset"]
    dc = DatasetConfig(n_samples=int(d["n_samples"]), seed=int(cfg["seed"]), dataset=d["dataset"],
                       resolution=int(d["resolution"]), domain_side=float(d["domain_side"]),
                       corr_lens=tuple(d["corr_lens"]), p30s=tuple(d["p30s"]))
    samples = build_dataset(dc, workers=int(cfg["workers"]))
    splits = split_dataset(len(samples), np.random.default_rng(dc.seed)) if len(samples) >= 5 else None
    write_dataset(samples, out, dc.digest(), splits)
    cfgmod.echo_config(cfg, out)
    _print({"samples": len(samples), "config_hash": dc.digest(),
            "splits": {k: len(v) for k, v in (splits or {}).items()}})
    return EXIT_OK


def _dataset_splits(samples, manifest, seed):
    from .dataset import manifest_splits, split_dataset
    splits = manifest_splits(manifest)
    if splits is None:
        splits = split_dataset(len(samples), np.random.default_rng(seed))
    return splits


def cmd_train(args) -> int:
    from .dataset import fit_stats, read_dataset, training_arrays
    from .nn.model import Network
    from .nn.predict import SurrogateModel
    from .nn.train import train
    from .preprocess import nrmse
    from .pipeline import write_predictions
    cfg = _config(args)
    out = _out_dir(args)
    cfgmod.echo_config(cfg, out)
    samples, manifest = read_dataset(args.dataset)
    splits = _dataset_splits(samples, manifest, int(cfg["seed"]))
    part = {k: [samples[i] for i in v] for k, v in splits.items()}
    if len(part.get("train", [])) < 2 or not part.get("val"):
        raise DataError("training needs at least two training and one validation sample")
    stats = fit_stats(part["train"])
    netcfg = network_config(cfg, samples[0].input.grid.dims[0])
    model = Network.create(netcfg, np.random.default_rng(int(cfg["train"]["init_seed"])), dtype=np.float32)
    result = train(model, training_arrays(part["train"], stats), training_arrays(part["val"], stats),
                   train_config(cfg))
    result.write_history(out / "history.csv")
    surrogate = SurrogateModel(result.model, stats)
    surrogate.save(out / "weights.dfmw")
    summary = {"best_epoch": result.best_epoch, "best_val_mse": result.best_val_loss,
               "initial_train_mse": result.initial_loss, "epochs": len(result.history)}
    test = part.get("test", [])
    if test:
        pred = surrogate.predict_fields([s.input for s in test], [s.baseline for s in test])
        write_predictions(out / "test_predictions.csv", test, pred)
        if len(test) >= 2:
            try:
                summary["test_mean_nrmse"] = nrmse(pred, np.array([s.target for s in test]))[1]
            except DataError:
                pass
    _print(summary)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .dataset import read_dataset
    from .nn.predict import SurrogateModel
    from .pipeline import write_predictions
    cfg = _config(args)
    out = _out_dir(args)
    cfgmod.echo_config(cfg, out)
    surrogate = SurrogateModel.load(args.weights)
    samples, manifest = read_dataset(args.dataset)
    if args.split != "all":
        splits = _dataset_splits(samples, manifest, int(cfg["seed"]))
        if args.split not in splits:
            raise DataError(f"dataset has no {args.split!r} split")
        samples = [samples[i] for i in splits[args.split]]
    pred = surrogate.predict_fields([s.input for s in samples], [s.baseline for s in samples])
    write_predictions(out / "predictions.csv", samples, pred)
    _print({"predicted": len(samples), "file": str(out / "predictions.csv")})
    return EXIT_OK


def cmd_report(args) -> int:
    from .pipeline import run_report
    cfg = _config(args)
    out = _out_dir(args)
    cfgmod.echo_config(cfg, out)
    r = run_report(args.predictions, out)
    _print({"mean_nrmse": r["mean_nrmse"], "nrmse": [float(v) for v in r["nrmse"]]})
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, help="worker processes (outputs do not depend on it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted-key override, e.g. domain.L=60 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dfmup", description="DFM upscaling: generation, homogenization, "
                                "surrogate training and macro benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", parents=[common], help="generate DFN and matrix field on the enlarged domain")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("upscale", parents=[common], help="block homogenization of a generated sample")
    s.add_argument("--input", required=True, help="directory written by 'gen'")
    s.add_argument("--backend", choices=("numerical", "surrogate"))
    s.add_argument("--weights", help="surrogate weight file")
    s.set_defaults(func=cmd_upscale)

    s = sub.add_parser("benchmark", parents=[common], help="macro-scale Constraint/Anisotropy comparison")
    s.add_argument("--numerical", nargs="+", help="upscale output directories (numerical backend)")
    s.add_argument("--surrogate", nargs="+", help="upscale output directories (compared backend)")
    s.add_argument("--weights", help="surrogate weight file")
    s.add_argument("--compare-backend", choices=("surrogate", "numerical"), default="surrogate",
                   help="backend compared against the numerical reference when generating samples")
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("build-dataset", parents=[common], help="generate a training dataset")
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("train", parents=[common], help="train the surrogate network")
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="surrogate predictions on a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("report", parents=[common], help="metrics and figure data from predictions")
    s.add_argument("--predictions", required=True, help="CSV written by 'predict'")
    s.set_defaults(func=cmd_report)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (SolverError, EmbeddingError)):
        return EXIT_SOLVER
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (FormatError, DataError, OSError)):
        return EXIT_DATA
    if isinstance(exc, ParameterError):
        return EXIT_CONFIG
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DfmupError, OSError) as exc:
        print(f"dfmup {args.command}: error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
