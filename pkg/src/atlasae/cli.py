"""Command-line orchestration driven by declarative JSON config files.

Verbs: generate, train, sample, evaluate, report. Exit codes: 0 success,
2 usage/config error, 3 data error, 4 numeric failure. Every command is
deterministic given config + seed; wall-clock timings go to run.log only
(and into the report's runtime column).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation
from .datasets import GENERATORS, PointCloud, load_cloud, save_cloud, split
from .discrepancy import DiscrepancySpec, KernelSpec
from .errors import (
    ConfigurationError,
    DataFormatError,
    EmptyClusterError,
    NumericError,
    PriorCollapseError,
    UncoveredPointError,
)
from .evaluation import (
    EvalReport,
    config_fingerprint,
    evaluate,
    kde_sample,
    load_report_csv,
    report_table,
    select_kde_bandwidth,
)
from .model import Prior, load_checkpoint, sample_model, save_checkpoint
from .nn import MixtureArchitecture, param_count
from .partition import build_cover, kmeans_fit
from .training import TrainConfig, history_to_csv, refresh_priors, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

METHODS = ("mldmae", "ldmae", "kde")

_TOP_KEYS = {
    "dataset",
    "n_train",
    "method",
    "seed",
    "output_dir",
    "partition",
    "architecture",
    "train",
    "eval",
}
_PARTITION_KEYS = {"clusters", "kind", "exponent", "margin", "margin_scale", "restarts"}
_ARCH_KEYS = {"latent_dim", "hidden"}
_TRAIN_KEYS = {
    "penalty",
    "lambda",
    "batch_size",
    "epochs",
    "bandwidth",
    "lr",
    "prior",
    "prior_refresh_rounds",
}
_PENALTY_KEYS = {"kind", "metric", "kernel", "num_projections"}
_KERNEL_KEYS = {"family", "scale"}
_PRIOR_KEYS = {"base", "radius"}
_EVAL_KEYS = {"n_eval", "metric", "standardize", "kde_bandwidth_grid", "sample_count"}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigurationError(f"config section {where!r} must be an object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(
            f"config field {where}.{sorted(unknown)[0]} is not in the schema"
        )


@dataclass
class ExperimentConfig:
    raw: dict
    dataset: str
    dataset_file: str | None
    n_train: int
    method: str
    seed: int
    output_dir: Path
    partition: dict
    arch: MixtureArchitecture | None
    train_config: TrainConfig | None
    n_eval: int
    eval_metric: str
    eval_standardize: bool
    kde_grid: list[float]
    sample_count: int


def _parse_kernel(raw, latent_dim: int) -> KernelSpec:
    _check_keys(raw, _KERNEL_KEYS, "train.penalty.kernel")
    scale = raw.get("scale", "2d")
    if scale == "2d":
        scale = 2.0 * latent_dim
    return KernelSpec(family=raw["family"], scale=float(scale))


def _parse_penalty(raw, latent_dim: int) -> DiscrepancySpec:
    _check_keys(raw, _PENALTY_KEYS, "train.penalty")
    kind = raw.get("kind")
    kernel = None
    if "kernel" in raw:
        kernel = _parse_kernel(raw["kernel"], latent_dim)
    return DiscrepancySpec(
        kind=kind,
        kernel=kernel,
        metric=raw.get("metric", "l2"),
        num_projections=int(raw.get("num_projections", 50)),
    )


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config; rejects unknown fields."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    _check_keys(raw, _TOP_KEYS, "top-level")
    for key in ("dataset", "method", "output_dir", "seed"):
        if key not in raw:
            raise ConfigurationError(f"config field {key} is required")

    dataset = raw["dataset"]
    dataset_file = None
    if isinstance(dataset, dict):
        _check_keys(dataset, {"file"}, "dataset")
        dataset_file = dataset["file"]
        if not Path(dataset_file).exists():
            raise ConfigurationError(f"dataset file does not exist: {dataset_file}")
        dataset = "file"
    elif dataset not in GENERATORS:
        raise ConfigurationError(
            f"unknown dataset {dataset!r}; choose from {sorted(GENERATORS)} or a file"
        )

    method = raw["method"]
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")

    part = dict(raw.get("partition", {}))
    _check_keys(part, _PARTITION_KEYS, "partition")
    if method == "ldmae":
        part.setdefault("clusters", 1)
        part.setdefault("kind", "indicator")
        if part["clusters"] != 1 or part["kind"] != "indicator":
            raise ConfigurationError(
                "method ldmae requires partition.clusters == 1 and kind == indicator"
            )
    if method == "mldmae":
        if part.get("clusters", 0) == 1 and part.get("kind", "smooth") == "indicator":
            raise ConfigurationError(
                "a single indicator cluster is the ldmae method; set method: ldmae"
            )

    arch = None
    train_config = None
    if method in ("mldmae", "ldmae"):
        arch_raw = raw.get("architecture")
        train_raw = raw.get("train")
        if arch_raw is None or train_raw is None:
            raise ConfigurationError(
                f"method {method} requires architecture and train sections"
            )
        _check_keys(arch_raw, _ARCH_KEYS, "architecture")
        _check_keys(train_raw, _TRAIN_KEYS, "train")
        latent = int(arch_raw["latent_dim"])
        hidden = tuple(int(h) for h in arch_raw["hidden"])
        ambient = {"spiral": 2, "torus": 3, "sphere": 3}.get(dataset)
        if ambient is None:
            ambient = load_cloud(dataset_file).dim
        arch = MixtureArchitecture(
            ambient_dim=ambient,
            latent_dim=latent,
            hidden=hidden,
            clusters=int(part.get("clusters", 1)),
        )
        prior_raw = train_raw.get("prior", {"base": "std_gaussian"})
        _check_keys(prior_raw, _PRIOR_KEYS, "train.prior")
        prior = Prior(
            base=prior_raw.get("base", "std_gaussian"),
            radius=float(prior_raw.get("radius", 1.0)),
        )
        lam = train_raw.get("lambda", 10.0)
        train_config = TrainConfig(
            penalty=_parse_penalty(train_raw["penalty"], latent),
            lam=tuple(float(v) for v in lam) if isinstance(lam, list) else float(lam),
            batch_size=int(train_raw.get("batch_size", 256)),
            epochs=int(train_raw.get("epochs", 50)),
            bandwidth=float(train_raw.get("bandwidth", 0.01)),
            lr=float(train_raw.get("lr", 0.001)),
            seed=int(raw["seed"]),
            prior=prior,
            prior_refresh_rounds=int(train_raw.get("prior_refresh_rounds", 0)),
        )

    eval_raw = raw.get("eval", {})
    _check_keys(eval_raw, _EVAL_KEYS, "eval")
    if method == "kde" and not eval_raw.get("kde_bandwidth_grid"):
        raise ConfigurationError("method kde requires eval.kde_bandwidth_grid")

    n_eval = int(eval_raw.get("n_eval", 2000))
    return ExperimentConfig(
        raw=raw,
        dataset=dataset,
        dataset_file=dataset_file,
        n_train=int(raw.get("n_train", 1000)),
        method=method,
        seed=int(raw["seed"]),
        output_dir=Path(raw["output_dir"]),
        partition=part,
        arch=arch,
        train_config=train_config,
        n_eval=n_eval,
        eval_metric=eval_raw.get("metric", "l2"),
        eval_standardize=bool(eval_raw.get("standardize", False)),
        kde_grid=[float(b) for b in eval_raw.get("kde_bandwidth_grid", [])],
        sample_count=int(eval_raw.get("sample_count", n_eval)),
    )


def _truth_sampler(cfg: ExperimentConfig):
    if cfg.dataset == "file":
        cloud = load_cloud(cfg.dataset_file)

        def from_file(count, seed):
            if count > len(cloud):
                raise ConfigurationError(
                    f"cannot draw {count} evaluation points from a "
                    f"{len(cloud)}-point file"
                )
            idx = np.random.default_rng(seed).permutation(len(cloud))[:count]
            return cloud.points[idx]

        return from_file
    gen = GENERATORS[cfg.dataset]
    return lambda count, seed: gen(count, seed).points


def _log(cfg: ExperimentConfig, message: str) -> None:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y-%m-%d %H:%M:%S")
    with open(cfg.output_dir / "run.log", "a", encoding="utf-8") as fh:
        fh.write(f"{stamp} {message}\n")


def _load_train_cloud(cfg: ExperimentConfig) -> PointCloud:
    path = cfg.output_dir / "train.csv"
    if not path.exists():
        raise DataFormatError(
            f"training data not found at {path}; run the generate command first"
        )
    return load_cloud(path)


def cmd_generate(cfg: ExperimentConfig) -> int:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    if cfg.dataset == "file":
        cloud = load_cloud(cfg.dataset_file)
        train_cloud, test_cloud = split(
            cloud, cfg.n_train / len(cloud), cfg.seed
        )
    else:
        gen = GENERATORS[cfg.dataset]
        train_cloud = gen(cfg.n_train, cfg.seed)
        test_cloud = gen(cfg.n_eval, cfg.seed + evaluation.EVAL_SEED_OFFSET)
    save_cloud(train_cloud, cfg.output_dir / "train.csv")
    save_cloud(test_cloud, cfg.output_dir / "test.csv")
    _log(cfg, f"generate dataset={cfg.dataset} train={len(train_cloud)} test={len(test_cloud)}")
    print(f"wrote {len(train_cloud)} train and {len(test_cloud)} test points "
          f"to {cfg.output_dir}")
    return EXIT_OK


def _build_partition(cfg: ExperimentConfig, cloud: PointCloud):
    clusters = int(cfg.partition.get("clusters", 1))
    centers, assignments = kmeans_fit(
        cloud, clusters, seed=cfg.seed, restarts=int(cfg.partition.get("restarts", 1))
    )
    return build_cover(
        cloud,
        assignments,
        centers,
        margin=cfg.partition.get("margin"),
        margin_scale=float(cfg.partition.get("margin_scale", 0.05)),
        exponent=float(cfg.partition.get("exponent", 10.0)),
        kind=cfg.partition.get("kind", "smooth"),
    )


def cmd_train(cfg: ExperimentConfig) -> int:
    if cfg.method == "kde":
        raise ConfigurationError("the kde method has no training step; run evaluate")
    cloud = _load_train_cloud(cfg)
    started = time.perf_counter()
    pou = _build_partition(cfg, cloud)
    model, history = train(cloud, pou, cfg.arch, cfg.train_config)
    rounds = cfg.train_config.prior_refresh_rounds
    if rounds > 0:
        model, refresh_hists = refresh_priors(model, cloud, cfg.train_config, rounds)
        for hist in refresh_hists:
            history = history + hist
    elapsed = time.perf_counter() - started
    save_checkpoint(model, cfg.output_dir / "checkpoint")
    history_to_csv(history, cfg.output_dir / "loss_history.csv")
    _log(cfg, f"train method={cfg.method} train_seconds={elapsed:.3f}")
    print(
        f"trained {cfg.method} ({param_count(cfg.arch)} parameters) in "
        f"{elapsed:.1f}s; checkpoint under {cfg.output_dir}"
    )
    return EXIT_OK


def cmd_sample(cfg: ExperimentConfig, checkpoint, count: int, seed: int) -> int:
    prefix = Path(checkpoint) if checkpoint else cfg.output_dir / "checkpoint"
    out_path = cfg.output_dir / "samples.csv"
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    if count == 0:
        out_path.write_text("# empty sample\n", encoding="utf-8")
        print(f"wrote 0 samples to {out_path}")
        return EXIT_OK
    model = load_checkpoint(prefix)
    cloud = sample_model(model, count, seed)
    save_cloud(cloud, out_path)
    _log(cfg, f"sample count={count} seed={seed}")
    print(f"wrote {count} samples to {out_path}")
    return EXIT_OK


def _train_seconds_from_log(cfg: ExperimentConfig) -> float:
    log_path = cfg.output_dir / "run.log"
    seconds = 0.0
    if log_path.exists():
        for line in log_path.read_text(encoding="utf-8").splitlines():
            for token in line.split():
                if token.startswith("train_seconds="):
                    seconds = float(token.split("=", 1)[1])
    return seconds


def cmd_evaluate(cfg: ExperimentConfig, checkpoint=None) -> int:
    truth_fn = _truth_sampler(cfg)
    fingerprint = config_fingerprint(cfg.raw)
    started = time.perf_counter()
    if cfg.method == "kde":
        cloud = _load_train_cloud(cfg)
        fit_part, val_part = split(cloud, 0.8, cfg.seed)
        bandwidth = select_kde_bandwidth(
            fit_part, val_part, cfg.kde_grid, cfg.seed, cfg.eval_metric
        )
        _log(cfg, f"evaluate kde_bandwidth={bandwidth!r}")

        def sample_fn(count, seed):
            return kde_sample(cloud, bandwidth, count, seed).points

        params = 0
    else:
        prefix = Path(checkpoint) if checkpoint else cfg.output_dir / "checkpoint"
        model = load_checkpoint(prefix)

        def sample_fn(count, seed):
            return sample_model(model, count, seed).points

        params = param_count(cfg.arch)
    report = evaluate(
        sample_fn,
        truth_fn,
        cfg.n_eval,
        cfg.seed,
        method=cfg.method,
        metric=cfg.eval_metric,
        standardize=cfg.eval_standardize,
        param_total=params,
        fingerprint=fingerprint,
        extra_runtime=_train_seconds_from_log(cfg),
    )
    report_table([report], cfg.output_dir / "report")
    save_cloud(
        PointCloud(sample_fn(cfg.sample_count, cfg.seed)),
        cfg.output_dir / "eval_samples.csv",
    )
    save_cloud(
        PointCloud(truth_fn(cfg.sample_count, cfg.seed + evaluation.EVAL_SEED_OFFSET)),
        cfg.output_dir / "eval_truth.csv",
    )
    _log(cfg, f"evaluate w1={report.w1_to_truth!r} seconds={time.perf_counter() - started:.3f}")
    print(
        f"{cfg.method}: W1 to truth = {report.w1_to_truth:.4f} "
        f"({report.param_count} parameters); report under {cfg.output_dir}\n"
        f"scatter data in eval_samples.csv / eval_truth.csv "
        f"(render with scripts/plot_clouds.py)"
    )
    return EXIT_OK


def cmd_report(paths, out_dir) -> int:
    reports: list[EvalReport] = []
    for path in paths:
        reports.extend(load_report_csv(path))
    out_dir = Path(out_dir)
    report_table(reports, out_dir / "report_combined")
    print(f"combined {len(reports)} rows into {out_dir / 'report_combined.txt'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atlasae",
        description="Train and evaluate mixture-of-autoencoder generative models.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("generate", "train", "sample", "evaluate"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        if verb in ("sample", "evaluate"):
            p.add_argument("--checkpoint", default=None, help="checkpoint prefix")
        if verb == "sample":
            p.add_argument("--count", type=int, default=None, help="sample count")
    p = sub.add_parser("report")
    p.add_argument("csvs", nargs="+", help="report CSV files to merge")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.verb == "report":
            return cmd_report(args.csvs, args.out)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.raw["seed"] = args.seed
            cfg.seed = args.seed
            if cfg.train_config is not None:
                cfg.train_config = dataclasses.replace(cfg.train_config, seed=args.seed)
        if args.out is not None:
            cfg.output_dir = Path(args.out)
        if args.verb == "generate":
            return cmd_generate(cfg)
        if args.verb == "train":
            return cmd_train(cfg)
        if args.verb == "sample":
            count = args.count if args.count is not None else cfg.sample_count
            return cmd_sample(cfg, args.checkpoint, count, cfg.seed)
        return cmd_evaluate(cfg, args.checkpoint)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, UncoveredPointError, EmptyClusterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, PriorCollapseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
