"""
Command line entry point

Subcommands:

- ``bench``: run policies over models, datasets, horizons and seeds
- ``ablate``: one-factor sweep of a regime-guidance parameter
- ``gen-data``: write synthetic scenarios as CSV files
- ``stats``: statistical comparison of a benchmark summary

Exit codes are 0 on success, 1 on usage errors and 2 when a run aborts.
"""
import argparse
import concurrent.futures
import dataclasses
import json
import logging
import os
import pathlib
import platform
import sys
import time
import typing
from importlib import metadata

import numpy as np
import pandas as pd
import tqdm

from regime_tta import data_processing, stats
from regime_tta.core import HORIZONS, HarnessConfig, InsufficientDataError, TimeSeriesDataset
from regime_tta.datagen import (
    SCENARIO_NAMES,
    ScenarioSpec,
    check_length,
    generate,
    resolve_dataset,
    write_csv,
)
from regime_tta.forecast import ARCHITECTURES, ModelSpec
from regime_tta.forecast.base import LiveModel
from regime_tta.forecast.training import TrainingConfig
from regime_tta.harness import RunRecord, StreamAbortedError, pretrain_or_abort, run_stream
from regime_tta.policies import POLICY_NAMES, PolicyConfig, PolicyKind

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ABORTED = 2

THREADS_ENV = "RG_THREADS"
DEFAULT_POLICIES = ("tta", "ewc", "dynatta", "rgtta", "rgtta_ewc", "rgtta_dynatta")
SWEEPS = {
    "gamma": ("gamma", float),
    "loss_gate": ("gate", float),
    "memory_cap": ("memory_capacity", int),
    "ckpt_threshold": ("tau", float),
    "early_stop": ("early_stopping", str),
    "similarity": ("similarity", str),
}
EARLY_STOP_VALUES = {"fixed20": False, "loss_driven": True}
PACKAGES = ("numpy", "scipy", "pandas", "tqdm")


class UsageError(Exception):
    """Invalid command line input detected after parsing"""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclasses.dataclass(frozen=True)
class RunJob:
    """One independent run of the grid"""

    policy: PolicyConfig
    model: str
    dataset: str
    horizon: int
    seed: int
    label: typing.Optional[str] = None

    @property
    def pretrain_key(self) -> typing.Tuple[str, str, int, int]:
        return (self.model, self.dataset, self.horizon, self.seed)


def n_threads() -> int:
    """Worker threads, from ``RG_THREADS`` or the number of cores"""
    value = os.environ.get(THREADS_ENV)
    if value is None:
        return os.cpu_count() or 1
    try:
        threads = int(value)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {value!r}")
    if threads < 1:
        raise UsageError(f"{THREADS_ENV} must be positive, got {threads}")
    return threads


def package_versions() -> typing.Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in ("regime-tta",) + PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, pathlib.Path):
        return str(obj)
    raise TypeError(f"Cannot serialise {type(obj).__name__}")


def load_config_file(
    path: typing.Optional[str],
) -> typing.Tuple[dict, HarnessConfig, TrainingConfig]:
    """
    Read a JSON config file

    Top-level keys override :py:class:`PolicyConfig` fields. The
    optional ``harness`` and ``training`` objects override
    :py:class:`HarnessConfig` and :py:class:`TrainingConfig` fields.
    """
    if path is None:
        return {}, HarnessConfig(), TrainingConfig()
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"Cannot read config file {path}: {exc}")
    if not isinstance(raw, dict):
        raise UsageError(f"Config file {path} must hold a JSON object")
    harness = raw.pop("harness", {})
    training = raw.pop("training", {})
    try:
        PolicyConfig().with_overrides(raw)
        return raw, HarnessConfig(**harness), TrainingConfig(**training)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"Invalid config file {path}: {exc}")


def policy_config(kind: str, overrides: dict) -> PolicyConfig:
    try:
        return PolicyConfig(kind=kind).with_overrides(overrides)
    except ValueError as exc:
        raise UsageError(str(exc))


def load_datasets(
    names: typing.Sequence[str], data_seed: int, length: int
) -> typing.Dict[str, TimeSeriesDataset]:
    datasets = {}
    for name in names:
        try:
            dataset = resolve_dataset(name, data_seed=data_seed, length=length)
        except ValueError as exc:
            raise UsageError(str(exc))
        datasets[dataset.name] = dataset
    return datasets


def run_grid(
    jobs: typing.Sequence[RunJob],
    datasets: typing.Mapping[str, TimeSeriesDataset],
    harness: HarnessConfig,
    training: TrainingConfig,
    threads: int,
    show_progress: bool,
) -> typing.Tuple[typing.List[typing.Tuple[RunJob, RunRecord]], typing.List[dict]]:
    """
    Run independent jobs on a thread pool

    Pretrained models are computed once per (model, dataset, horizon,
    seed) and shared by every policy run on that configuration. When
    initial training of a configuration fails, its jobs are reported
    as aborted and the other jobs still run.

    Returns
    -------
    tuple
        ``(job, record)`` pairs in job order, and diagnostics of aborted
        runs.
    """
    pretrained: typing.Dict[typing.Tuple, LiveModel] = {}
    failed: typing.Dict[typing.Tuple, StreamAbortedError] = {}
    keys = sorted({job.pretrain_key for job in jobs})

    def _pretrain(key):
        model, dataset, horizon, seed = key
        return pretrain_or_abort(
            datasets[dataset], ModelSpec(model, harness.seq_len), horizon, seed, harness, training
        )

    def _run(job: RunJob):
        return run_stream(
            datasets[job.dataset],
            ModelSpec(job.model, harness.seq_len),
            job.policy,
            job.horizon,
            job.seed,
            config=harness,
            model=pretrained[job.pretrain_key],
            training=training,
        )

    def _aborted(job: RunJob, exc: StreamAbortedError) -> dict:
        return {
            "policy": job.policy.kind.value,
            "model": job.model,
            "dataset": job.dataset,
            "horizon": job.horizon,
            "seed": job.seed,
            "label": job.label,
            "completed_batches": len(exc.records),
            **exc.diagnostics,
        }

    results: typing.Dict[int, typing.List[RunRecord]] = {}
    aborted = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(_pretrain, key): key for key in keys}
        for future in tqdm.tqdm(
            concurrent.futures.as_completed(futures),
            total=len(futures),
            desc="pretrain",
            disable=not show_progress,
        ):
            key = futures[future]
            try:
                pretrained[key] = future.result()
            except StreamAbortedError as exc:
                failed[key] = exc

        for job in jobs:
            if job.pretrain_key in failed:
                aborted.append(_aborted(job, failed[job.pretrain_key]))
        futures = {
            pool.submit(_run, job): i
            for i, job in enumerate(jobs)
            if job.pretrain_key in pretrained
        }
        for future in tqdm.tqdm(
            concurrent.futures.as_completed(futures),
            total=len(futures),
            desc="runs",
            disable=not show_progress,
        ):
            i = futures[future]
            try:
                results[i] = future.result()
            except StreamAbortedError as exc:
                results[i] = exc.records
                aborted.append(_aborted(jobs[i], exc))

    aborted.sort(
        key=lambda a: (
            a["policy"],
            a["model"],
            a["dataset"],
            a["horizon"],
            a["seed"],
            str(a["label"]),
        )
    )
    pairs = [(jobs[i], r) for i in range(len(jobs)) for r in results.get(i, [])]
    return pairs, aborted


def write_run_log(path: pathlib.Path, pairs, extra: typing.Optional[typing.Callable] = None):
    with open(path, "w") as f:
        for job, record in pairs:
            row = record.to_dict()
            if extra is not None:
                row.update(extra(job))
            f.write(json.dumps(row, default=_json_default, sort_keys=True) + "\n")


def write_manifest(path: pathlib.Path, manifest: dict):
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, default=_json_default, sort_keys=True)


def base_manifest(
    argv: typing.Sequence[str],
    harness: HarnessConfig,
    training: TrainingConfig,
    datasets: typing.Mapping[str, TimeSeriesDataset],
    args: argparse.Namespace,
) -> dict:
    return {
        "command": list(argv),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "versions": package_versions(),
        "harness": dataclasses.asdict(harness),
        "training": dataclasses.asdict(training),
        "models": list(args.models),
        "horizons": list(args.horizons),
        "seeds": list(range(args.seeds)),
        "data_seed": args.data_seed,
        "datasets": [
            {
                "name": d.name,
                "rows": len(d),
                "season_length": d.season_length,
                "frequency": d.frequency,
                "sha256": d.digest(),
            }
            for d in datasets.values()
        ],
    }


def _prepare(args):
    if args.seeds < 1:
        raise UsageError(f"--seeds must be positive, got {args.seeds}")
    overrides, harness, training = load_config_file(args.config)
    try:
        harness = dataclasses.replace(
            harness,
            horizons=tuple(args.horizons),
            seeds=tuple(range(args.seeds)),
            **({"max_batches": args.max_batches} if args.max_batches else {}),
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    datasets = load_datasets(args.datasets, args.data_seed, args.length)
    for dataset in datasets.values():
        try:
            check_length(dataset, harness.initial_train_size, harness.batch_size)
        except InsufficientDataError as exc:
            raise UsageError(str(exc))
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return overrides, harness, training, datasets, out


def _check_retrain(kinds: typing.Sequence[str], models: typing.Sequence[str]):
    if "retrain" in kinds and any(m != "dlinear" for m in models):
        raise UsageError("The retrain policy supports --models dlinear only")


def cmd_bench(args: argparse.Namespace, argv: typing.Sequence[str]) -> int:
    """Run the benchmark grid and write the run log, tables and manifest"""
    _check_retrain(args.policies, args.models)
    threads = n_threads()
    overrides, harness, training, datasets, out = _prepare(args)
    configs = {kind: policy_config(kind, overrides) for kind in args.policies}

    jobs = [
        RunJob(configs[kind], model, dataset, horizon, seed)
        for kind in args.policies
        for model in args.models
        for dataset in datasets
        for horizon in harness.horizons
        for seed in harness.seeds
    ]
    logger.info("Running %d runs on %d threads", len(jobs), threads)
    pairs, aborted = run_grid(jobs, datasets, harness, training, threads, args.progress)

    records = [r for _, r in pairs]
    write_run_log(out / "run_log.jsonl", pairs)
    manifest = base_manifest(argv, harness, training, datasets, args)
    manifest.update(
        {
            "policies": {kind: cfg.to_dict() for kind, cfg in configs.items()},
            "threads": threads,
            "n_records": len(records),
            "aborted": aborted,
        }
    )
    if records:
        df = data_processing.records_to_dataframe(records)
        df.to_csv(out / "records.csv", index=False)
        summary = data_processing.aggregate(df).drop(columns=["adapt_time_seconds"])
        summary.to_csv(out / "summary.csv", index=False)
    write_manifest(out / "manifest.json", manifest)

    if aborted:
        for a in aborted:
            logger.error("Aborted run: %s", a)
        return EXIT_ABORTED
    logger.info("Wrote %d records to %s", len(records), out)
    return EXIT_OK


def parse_sweep_values(param: str, values: typing.Sequence[str]) -> typing.List[typing.Any]:
    field, cast = SWEEPS[param]
    parsed = []
    for v in values:
        if param == "early_stop":
            if v not in EARLY_STOP_VALUES:
                raise UsageError(f"early_stop values must be in {sorted(EARLY_STOP_VALUES)}")
            parsed.append(v)
            continue
        try:
            parsed.append(cast(v))
        except ValueError:
            raise UsageError(f"Invalid value {v!r} for {param}")
    return parsed


def sweep_overrides(param: str, value: typing.Any) -> dict:
    field, _ = SWEEPS[param]
    if param == "early_stop":
        return {"early_stopping": EARLY_STOP_VALUES[value], "fixed_steps": 20}
    return {field: value}


def sweep_default(param: str) -> typing.Any:
    if param == "early_stop":
        return "loss_driven"
    return getattr(PolicyConfig(), SWEEPS[param][0])


def ablation_table(
    param: str, values: typing.Sequence[typing.Any], mean_mse: typing.Mapping[str, float]
) -> pd.DataFrame:
    """
    One row per swept value with the change against the default value

    Returns
    -------
    pandas.DataFrame
        Columns ``parameter``, ``value``, ``mean_mse``, ``delta_mse``
        and ``delta_pct``. Deltas are NaN if the default value was not
        swept.
    """
    default = sweep_default(param)
    base = mean_mse.get(str(default), np.nan)
    if np.isnan(base):
        logger.warning("Default value %s of %s not swept, deltas are undefined", default, param)
    rows = []
    for value in values:
        m = mean_mse.get(str(value), np.nan)
        rows.append(
            {
                "parameter": param,
                "value": value,
                "mean_mse": m,
                "delta_mse": m - base,
                "delta_pct": 100.0 * (m - base) / base if base else np.nan,
            }
        )
    return pd.DataFrame(rows)


def cmd_ablate(args: argparse.Namespace, argv: typing.Sequence[str]) -> int:
    """Run a one-factor sweep and write the ablation table"""
    if len(args.param) != 1:
        raise UsageError("ablate sweeps exactly one --param")
    param = args.param[0]
    values = parse_sweep_values(param, args.values)
    _check_retrain([args.policy], args.models)
    threads = n_threads()
    overrides, harness, training, datasets, out = _prepare(args)

    configs = {}
    for value in values:
        configs[str(value)] = policy_config(
            args.policy, {**overrides, **sweep_overrides(param, value)}
        )
    jobs = [
        RunJob(configs[str(value)], model, dataset, horizon, seed, label=str(value))
        for value in values
        for model in args.models
        for dataset in datasets
        for horizon in harness.horizons
        for seed in harness.seeds
    ]
    logger.info("Sweeping %s over %s: %d runs", param, values, len(jobs))
    pairs, aborted = run_grid(jobs, datasets, harness, training, threads, args.progress)
    write_run_log(
        out / "run_log.jsonl", pairs, extra=lambda job: {"parameter": param, "value": job.label}
    )

    mean_mse = {}
    for value in values:
        records = [r for job, r in pairs if job.label == str(value)]
        if records:
            mean_mse[str(value)] = float(data_processing.aggregate(records)["mse"].mean())
    table = ablation_table(param, values, mean_mse)
    table.to_csv(out / "ablation.csv", index=False)

    manifest = base_manifest(argv, harness, training, datasets, args)
    manifest.update(
        {
            "ablation": {"parameter": param, "values": values, "policy": args.policy},
            "policies": {label: cfg.to_dict() for label, cfg in configs.items()},
            "threads": threads,
            "aborted": aborted,
        }
    )
    write_manifest(out / "manifest.json", manifest)
    if aborted:
        for a in aborted:
            logger.error("Aborted run: %s", a)
        return EXIT_ABORTED
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace, argv: typing.Sequence[str]) -> int:
    """Write synthetic scenarios as ETT-style CSV files"""
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.scenarios:
        try:
            spec = ScenarioSpec(name[len("synth_") :], length=args.length, seed=args.seed)
        except ValueError as exc:
            raise UsageError(f"Invalid scenario {name!r}: {exc}")
        dataset = generate(spec)
        path = out / f"{dataset.name}.csv"
        write_csv(dataset, path)
        logger.info("Wrote %s (%d rows, sha256 %s)", path, len(dataset), dataset.digest()[:12])
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, argv: typing.Sequence[str]) -> int:
    """Write pairwise, win-count, Friedman/Nemenyi and critical-difference tables"""
    try:
        summary = pd.read_csv(args.summary)
    except (OSError, pd.errors.ParserError) as exc:
        raise UsageError(f"Cannot read summary {args.summary}: {exc}")
    missing = {"policy", "model", "dataset", "horizon", args.metric} - set(summary.columns)
    if missing:
        raise UsageError(f"Summary {args.summary} lacks columns {sorted(missing)}")
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    data_processing.pairwise_table(summary, metric=args.metric, alpha=args.alpha).to_csv(
        out / "pairwise.csv", index=False
    )
    data_processing.win_counts(summary, metric=args.metric).to_csv(
        out / "win_counts.csv", index=False
    )

    matrix = data_processing.metric_matrix(summary, args.metric).dropna()
    k, n = matrix.shape[1], matrix.shape[0]
    if k < 2 or n < 2:
        logger.warning("Friedman test needs >= 2 policies and configurations, got %d and %d", k, n)
        return EXIT_OK
    result = stats.friedman(matrix)
    ranks = dict(zip(matrix.columns, result.avg_ranks.tolist()))
    cd = stats.nemenyi_cd(k, n, args.alpha) if k <= 10 else float("nan")
    report = {
        "metric": args.metric,
        "k": k,
        "n": n,
        "chi2": result.statistic,
        "p_value": result.p_value,
        "avg_ranks": ranks,
        "alpha": args.alpha,
        "nemenyi_cd": cd,
    }
    write_manifest(out / "friedman.json", report)
    stats.critical_difference_data(ranks, cd).to_csv(out / "cd_diagram.csv", index=False)
    logger.info(
        "Friedman chi2=%.3f p=%.3g, CD=%.3f over %d configurations",
        result.statistic,
        result.p_value,
        cd,
        n,
    )
    return EXIT_OK


def _add_grid_arguments(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--models", nargs="+", choices=ARCHITECTURES, default=["gru_small", "dlinear"]
    )
    parser.add_argument(
        "--datasets",
        nargs="+",
        required=True,
        help=f"Scenario names ({', '.join(SCENARIO_NAMES)}) or CSV paths",
    )
    parser.add_argument("--horizons", nargs="+", type=int, default=list(HORIZONS))
    parser.add_argument(
        "--seeds", type=int, default=3, help="Number of seeds, runs seeds 0..N-1"
    )
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--config", help="JSON file of config overrides")
    parser.add_argument("--max-batches", type=int, help="Override the number of batches")
    parser.add_argument("--data-seed", type=int, default=0, help="Seed of synthetic datasets")
    parser.add_argument("--length", type=int, default=10_000, help="Synthetic dataset length")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="regime-tta", description="Regime-guided test-time adaptation benchmarks"
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    parser.add_argument(
        "--no-progress", dest="progress", action="store_false", help="Hide progress bars"
    )
    sub = parser.add_subparsers(dest="command", parser_class=_ArgumentParser)

    bench = sub.add_parser("bench", help="Run a benchmark grid")
    bench.add_argument(
        "--policies", nargs="+", choices=POLICY_NAMES, default=list(DEFAULT_POLICIES)
    )
    _add_grid_arguments(bench)

    ablate = sub.add_parser("ablate", help="One-factor parameter sweep")
    ablate.add_argument("--param", nargs="+", choices=sorted(SWEEPS), required=True)
    ablate.add_argument("--values", nargs="+", required=True)
    ablate.add_argument(
        "--policy", choices=[k.value for k in PolicyKind if k.regime_guided], default="rgtta"
    )
    _add_grid_arguments(ablate)

    gen = sub.add_parser("gen-data", help="Write synthetic scenarios as CSV")
    gen.add_argument("--scenarios", nargs="+", choices=SCENARIO_NAMES, default=list(SCENARIO_NAMES))
    gen.add_argument("--length", type=int, default=10_000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    stat = sub.add_parser("stats", help="Statistical comparison of a summary CSV")
    stat.add_argument("--summary", required=True)
    stat.add_argument("--out", required=True)
    stat.add_argument("--metric", default="mse")
    stat.add_argument("--alpha", type=float, default=0.05, choices=sorted(stats.NEMENYI_Q))
    return parser


COMMANDS = {
    "bench": cmd_bench,
    "ablate": cmd_ablate,
    "gen-data": cmd_gen_data,
    "stats": cmd_stats,
}


def main(argv: typing.Optional[typing.Sequence[str]] = None) -> int:
    """
    Run the command line interface

    Parameters
    ----------
    argv: list[str], optional
        Arguments, defaults to ``sys.argv[1:]``.

    Returns
    -------
    int
        Exit code.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StreamAbortedError as exc:
        logger.error("Run aborted: %s", exc)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
