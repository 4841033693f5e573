"""Command-line pipeline over file-based artifacts.

Each subcommand maps onto one stage of the pipeline (generate, ingest,
compress, fit, solve, evaluate, cross-validate, forecast), reads its inputs
from files, writes canonical JSON/CSV artifacts into the output directory,
and prints a one-line JSON summary to standard output. Every JSON artifact
embeds the resolved configuration, its SHA-256 digest, the seed, and the
digests of its input files, so a rerun on identical inputs is byte-identical
and stale files are detectable.

Configuration is resolved in three layers: built-in defaults, then a plain
``key=value`` config file (``--config``), then command-line flags; flags win.
Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (
    build_header,
    expect_schema,
    file_sha256,
    read_json,
    write_json,
)
from .errors import ConfigError, RuntimeFailure, ValidationError
from .ingest import (
    CategoryDictionary,
    PhysicianGrouping,
    TransitionDataset,
    assemble_episodes,
    build_dictionaries,
    extract_transitions,
    group_physicians,
    initial_state_distribution,
    parse_claims,
)
from .kernel import EmpiricalMdp, KernelSpec, KernelVariant, build_empirical_mdp
from .simulate import (
    CvConfig,
    DayStateIndex,
    GapModel,
    RolloutConfig,
    StartCondition,
    cross_validate,
    evaluate_policy,
    export_histogram,
    forecast_pathway,
    resolve_condition,
)
from .solver import solve
from .spectral import (
    StatePartition,
    ZeroRowRule,
    cluster_states,
    count_frequencies,
    normalize_rows,
    top_right_singular_vectors,
)
from .states import StateSpace
from .synth import SynthConfig, default_model, generate_claims

OUTDIR_ENV = "CAREPATH_OUTDIR"


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved pipeline parameters; every artifact echoes this record."""

    episodes: int = 212
    physicians: int = 37
    beneficiaries: int = 205
    max_inpatient: int = 4
    n_groups: int = 3
    k: int = 3
    k_min: int = 2
    k_max: int = 9
    restarts: int = 100
    zero_row_rule: str = "self_loop"
    kernel: str = "partition"
    tol: float = 1e-6
    max_iterations: int = 100_000
    discount: float = 1.0
    repeats: int = 500
    rollouts: int = 400
    max_steps: int = 200
    premium_threshold: float = 25565.0
    balance_tolerance: float = 500.0
    balance_attempts: int = 2000
    start_day: int = 0
    horizon_days: int = 90
    trajectories: int = 10000
    gap_days: int = 0
    bin_width: float = 1000.0
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        positive = (
            "episodes", "physicians", "beneficiaries", "n_groups", "k",
            "k_min", "k_max", "restarts", "max_iterations", "repeats",
            "rollouts", "max_steps", "trajectories", "bin_width", "workers",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("max_inpatient", "start_day", "horizon_days", "gap_days"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.k_min > self.k_max:
            raise ConfigError("k_min must be <= k_max")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError("discount must lie in (0, 1]")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.zero_row_rule not in ("self_loop", "uniform"):
            raise ConfigError("zero_row_rule must be self_loop or uniform")
        if self.kernel not in ("partition", "spectral"):
            raise ConfigError("kernel must be partition or spectral")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None


def parse_config_file(path: str | Path) -> dict:
    """Read ``key=value`` lines; blank lines and # comments are skipped."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    overrides: dict = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        overrides[key] = _coerce(key, raw)
    return overrides


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Layer defaults, config file, then flags into one PipelineConfig."""
    values = dataclasses.asdict(PipelineConfig())
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    config = PipelineConfig(**values)
    config.validate()
    return config


class _UsageError(Exception):
    """Bad command line; the parser's usage text has already been printed."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; the contract wants 1
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def _out_dir(args: argparse.Namespace) -> Path:
    raw = getattr(args, "out_dir", None) or os.environ.get(OUTDIR_ENV) or "."
    path = Path(raw)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _zero_row_rule(config: PipelineConfig) -> ZeroRowRule:
    return ZeroRowRule(config.zero_row_rule)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


# ---------------------------------------------------------------------------
# artifact (de)serialization helpers


def _grouping_to_dict(grouping: PhysicianGrouping) -> dict:
    return {
        "assignment": grouping.assignment,
        "n_groups": grouping.n_groups,
        "group_means": list(grouping.group_means),
        "gap": grouping.gap,
    }


def _grouping_from_dict(payload: dict) -> PhysicianGrouping:
    return PhysicianGrouping(
        assignment={str(k): int(v) for k, v in payload["assignment"].items()},
        n_groups=int(payload["n_groups"]),
        group_means=tuple(float(v) for v in payload["group_means"]),
        gap=float(payload["gap"]),
    )


def _dataset_to_dict(data: TransitionDataset) -> dict:
    return {
        "states": data.states.tolist(),
        "actions": data.actions.tolist(),
        "costs": data.costs.tolist(),
        "next_states": data.next_states.tolist(),
        "episode_index": data.episode_index.tolist(),
        "positions": data.positions.tolist(),
        "procedures": data.procedures.tolist(),
        "episode_ids": list(data.episode_ids),
    }


def _dataset_from_artifact(payload: dict) -> tuple[TransitionDataset, CategoryDictionary]:
    expect_schema(payload, "carepath.dataset.v1")
    space = StateSpace(
        n_diagnoses=int(payload["space"]["n_diagnoses"]),
        max_inpatient=int(payload["space"]["max_inpatient"]),
    )
    arrays = payload["transitions"]
    data = TransitionDataset(
        space=space,
        n_groups=int(payload["grouping"]["n_groups"]),
        states=np.asarray(arrays["states"], dtype=np.int64),
        actions=np.asarray(arrays["actions"], dtype=np.int64),
        costs=np.asarray(arrays["costs"], dtype=np.float64),
        next_states=np.asarray(arrays["next_states"], dtype=np.int64),
        episode_index=np.asarray(arrays["episode_index"], dtype=np.int64),
        positions=np.asarray(arrays["positions"], dtype=np.int64),
        procedures=np.asarray(arrays["procedures"], dtype=np.int64),
        episode_ids=[str(e) for e in arrays["episode_ids"]],
    )
    return data, CategoryDictionary(payload["diagnoses"])


def _write_histogram_csv(path: Path, histogram) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bin_index", "bin_start", "bin_end", "count"])
        for index, count in sorted(histogram.bins.items()):
            writer.writerow(
                [
                    index,
                    f"{index * histogram.bin_width:.2f}",
                    f"{(index + 1) * histogram.bin_width:.2f}",
                    count,
                ]
            )


def _load_episodes(claims_path: str):
    rows = parse_claims(claims_path)
    return assemble_episodes(rows)


def _policy_from_artifact(path: str, n_states: int) -> np.ndarray:
    payload = expect_schema(read_json(path), "carepath.policy.v1")
    policy = np.asarray(payload["actions"], dtype=np.int64)
    if policy.shape != (n_states,):
        raise ConfigError(
            f"policy covers {policy.shape[0]} states, model has {n_states}"
        )
    return policy


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args: argparse.Namespace) -> dict:
    config = resolve_config(args)
    out = _out_dir(args)
    csv_path = out / "claims.csv"
    sidecar = out / "claims.ground_truth.json"
    truth = generate_claims(
        default_model(),
        SynthConfig(
            n_episodes=config.episodes,
            n_physicians=config.physicians,
            n_beneficiaries=config.beneficiaries,
            seed=config.seed,
        ),
        csv_path,
        sidecar,
    )
    return {
        "command": "synth",
        "claims": str(csv_path),
        "claims_sha256": file_sha256(csv_path),
        "ground_truth": str(sidecar),
        "episodes": truth["n_episodes"],
        "mean_cost": truth["empirical_mean_cost"],
        "seed": config.seed,
    }


def cmd_ingest(args: argparse.Namespace) -> dict:
    config = resolve_config(args)
    out = _out_dir(args)
    episodes = _load_episodes(args.claims)
    diagnoses, procedures = build_dictionaries(episodes)
    space = StateSpace(
        n_diagnoses=len(diagnoses), max_inpatient=config.max_inpatient
    )
    grouping = group_physicians(
        episodes,
        config.n_groups,
        seed=config.seed,
        balance_tolerance=config.balance_tolerance,
        max_attempts=config.balance_attempts,
    )
    data = extract_transitions(episodes, grouping, space, diagnoses, procedures)
    gaps = GapModel.from_episodes(episodes)
    costs = np.asarray([ep.total_cost for ep in episodes])
    histogram = export_histogram(costs, config.bin_width, config.premium_threshold)

    histogram_path = out / "histogram.csv"
    _write_histogram_csv(histogram_path, histogram)
    artifact = {
        **build_header(
            "dataset",
            config.seed,
            config.to_dict(),
            {"claims": file_sha256(args.claims)},
        ),
        "config": config.to_dict(),
        "diagnoses": list(diagnoses.labels),
        "procedures": list(procedures.labels),
        "space": {
            "n_diagnoses": space.n_diagnoses,
            "max_inpatient": space.max_inpatient,
        },
        "grouping": _grouping_to_dict(grouping),
        "transitions": _dataset_to_dict(data),
        "gaps": gaps.gaps.tolist(),
        "n_episodes": len(episodes),
        "histogram": histogram.to_dict(),
    }
    dataset_path = out / "dataset.json"
    write_json(dataset_path, artifact)
    return {
        "command": "ingest",
        "dataset": str(dataset_path),
        "histogram": str(histogram_path),
        "episodes": len(episodes),
        "transitions": data.n,
        "states": space.n_states,
        "grouping_gap": round(grouping.gap, 2),
        "mean_cost": round(float(costs.mean()), 2),
    }


def cmd_compress(args: argparse.Namespace) -> dict:
    config = resolve_config(args)
    out = _out_dir(args)
    payload = read_json(args.dataset)
    data, _ = _dataset_from_artifact(payload)
    frequencies = count_frequencies(data)
    matrix = normalize_rows(
        frequencies, _zero_row_rule(config), terminal=data.space.terminal
    )
    features = top_right_singular_vectors(matrix, config.k)
    partition = cluster_states(
        features,
        config.k,
        restarts=config.restarts,
        seed=config.seed,
        terminal=data.space.terminal,
    )
    sizes = [int(len(partition.members(b))) for b in range(partition.n_blocks)]
    artifact = {
        **build_header(
            "partition",
            config.seed,
            config.to_dict(),
            {"dataset": file_sha256(args.dataset)},
        ),
        "config": config.to_dict(),
        "k": partition.n_blocks,
        "labels": partition.labels.tolist(),
        "objective": partition.objective,
        "singular_values": features.singular_values.tolist(),
        "block_sizes": sizes,
    }
    partition_path = out / "partition.json"
    write_json(partition_path, artifact)
    return {
        "command": "compress",
        "partition": str(partition_path),
        "k": partition.n_blocks,
        "objective": partition.objective,
        "block_sizes": sizes,
    }


def cmd_fit(args: argparse.Namespace) -> dict:
    config = resolve_config(args)
    out = _out_dir(args)
    payload = read_json(args.dataset)
    data, diagnoses = _dataset_from_artifact(payload)
    if config.kernel == "partition":
        partition_payload = expect_schema(
            read_json(args.partition), "carepath.partition.v1"
        )
        labels = np.asarray(partition_payload["labels"], dtype=np.int64)
        if labels.shape != (data.space.n_states,):
            raise ConfigError(
                f"partition covers {labels.shape[0]} states, "
                f"dataset has {data.space.n_states}"
            )
        partition = StatePartition(
            labels=labels,
            n_blocks=int(partition_payload["k"]),
            objective=float(partition_payload["objective"]),
        )
        spec = KernelSpec(KernelVariant.PARTITION, partition=partition)
        inputs = {
            "dataset": file_sha256(args.dataset),
            "partition": file_sha256(args.partition),
        }
    else:
        frequencies = count_frequencies(data)
        matrix = normalize_rows(
            frequencies, _zero_row_rule(config), terminal=data.space.terminal
        )
        features = top_right_singular_vectors(matrix, config.k)
        spec = KernelSpec(KernelVariant.SPECTRAL, features=features)
        inputs = {"dataset": file_sha256(args.dataset)}
    mdp = build_empirical_mdp(data, spec, n_groups=data.n_groups)
    artifact = {
        **build_header("model", config.seed, config.to_dict(), inputs),
        "config": config.to_dict(),
        "mdp": mdp.to_dict(),
        "start_distribution": initial_state_distribution(data).tolist(),
        "gaps": payload["gaps"],
        "diagnoses": list(diagnoses.labels),
    }
    model_path = out / "model.json"
    write_json(model_path, artifact)
    return {
        "command": "fit",
        "model": str(model_path),
        "kernel": config.kernel,
        "states": mdp.space.n_states,
        "groups": mdp.n_groups,
    }


def cmd_solve(args: argparse.Namespace) -> dict:
    config = resolve_config(args)
    out = _out_dir(args)
    payload = expect_schema(read_json(args.model), "carepath.model.v1")
    mdp = EmpiricalMdp.from_dict(payload["mdp"])
    result, policy = solve(
        mdp,
        tol=config.tol,
        max_iterations=config.max_iterations,
        discount=config.discount,
    )
    start = np.asarray(payload["start_distribution"], dtype=np.float64)
    artifact = {
        **build_header(
            "policy",
            config.seed,
            config.to_dict(),
            {"model": file_sha256(args.model)},
        ),
        "config": config.to_dict(),
        "actions": policy.actions.tolist(),
        "values": result.values.tolist(),
        "iterations": result.iterations,
        "residual": result.residual,
        "expected_cost_at_start": float(result.values @ start),
    }
    policy_path = out / "policy.json"
    write_json(policy_path, artifact)
    return {
        "command": "solve",
        "policy": str(policy_path),
        "iterations": result.iterations,
        "residual": result.residual,
        "expected_cost_at_start": float(result.values @ start),
    }


def cmd_evaluate(args: argparse.Namespace) -> dict:
    config = resolve_config(args)
    out = _out_dir(args)
    payload = expect_schema(read_json(args.model), "carepath.model.v1")
    mdp = EmpiricalMdp.from_dict(payload["mdp"])
    inputs = {"model": file_sha256(args.model)}
    policy = None
    if args.policy:
        policy = _policy_from_artifact(args.policy, mdp.space.n_states)
        inputs["policy"] = file_sha256(args.policy)
    rollout = RolloutConfig(
        seed=config.seed,
        repeats=config.repeats,
        rollouts=config.rollouts,
        max_steps=config.max_steps,
        premium_threshold=config.premium_threshold,
        start_distribution=np.asarray(payload["start_distribution"], dtype=np.float64),
    )
    stats = evaluate_policy(mdp, policy, rollout)
    artifact = {
        **build_header("stats", config.seed, config.to_dict(), inputs),
        "config": config.to_dict(),
        "policy": "optimized" if policy is not None else "behavior",
        "stats": stats.to_dict(),
    }
    stats_path = out / "stats.json"
    write_json(stats_path, artifact)
    return {
        "command": "evaluate",
        "stats": str(stats_path),
        "policy": "optimized" if policy is not None else "behavior",
        "mean_cost": stats.mean_cost,
        "ci95_cost": stats.ci95_cost,
        "mean_premium": stats.mean_premium,
        "episodes": stats.episodes_simulated,
    }


def cmd_cv(args: argparse.Namespace) -> dict:
    config = resolve_config(args)
    out = _out_dir(args)
    episodes = _load_episodes(args.claims)
    diagnoses, _ = build_dictionaries(episodes)
    space = StateSpace(
        n_diagnoses=len(diagnoses), max_inpatient=config.max_inpatient
    )
    cv_config = CvConfig(
        seed=config.seed,
        repeats=config.repeats,
        rollouts=config.rollouts,
        max_steps=config.max_steps,
        premium_threshold=config.premium_threshold,
        restarts=config.restarts,
        zero_row_rule=_zero_row_rule(config),
        balance_tolerance=config.balance_tolerance,
        balance_max_attempts=config.balance_attempts,
        vi_tol=config.tol,
        vi_max_iterations=config.max_iterations,
        discount=config.discount,
    )
    report = cross_validate(
        episodes,
        space,
        diagnoses,
        list(range(config.k_min, config.k_max + 1)),
        config.n_groups,
        cv_config,
    )
    artifact = {
        **build_header(
            "cv_report",
            config.seed,
            config.to_dict(),
            {"claims": file_sha256(args.claims)},
        ),
        "config": config.to_dict(),
        "report": report.to_dict(),
    }
    report_path = out / "cv_report.json"
    write_json(report_path, artifact)
    return {
        "command": "cv",
        "cv_report": str(report_path),
        "selected_k": report.selected_k,
        "out_of_sample_mean": {
            str(k): report.out_of_sample[k].mean_cost for k in report.k_values
        },
    }


def cmd_forecast(args: argparse.Namespace) -> dict:
    config = resolve_config(args)
    out = _out_dir(args)
    payload = expect_schema(read_json(args.model), "carepath.model.v1")
    mdp = EmpiricalMdp.from_dict(payload["mdp"])
    diagnoses = CategoryDictionary(payload["diagnoses"])
    inputs = {
        "model": file_sha256(args.model),
        "claims": file_sha256(args.claims),
    }
    policy = None
    if args.policy:
        policy = _policy_from_artifact(args.policy, mdp.space.n_states)
        inputs["policy"] = file_sha256(args.policy)

    episodes = _load_episodes(args.claims)
    day_index = DayStateIndex.from_episodes(episodes, mdp.space, diagnoses)
    if args.category and args.state:
        raise ConfigError("--category and --state are mutually exclusive")
    if args.category:
        condition = StartCondition.at_category(args.category)
    elif args.state:
        condition = StartCondition.at_state(mdp.space.from_key(args.state))
    else:
        condition = StartCondition.initial()
    start = resolve_condition(
        condition, mdp.space, diagnoses, day_index, config.start_day
    )
    gap_model = (
        GapModel.constant(config.gap_days)
        if config.gap_days > 0
        else GapModel.from_episodes(episodes)
    )
    forecast = forecast_pathway(
        mdp,
        policy,
        start,
        config.start_day,
        config.horizon_days,
        config.trajectories,
        gap_model,
        seed=config.seed,
        max_steps=config.max_steps,
        categories=list(diagnoses.labels),
    )
    csv_path = out / "forecast.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["day"] + forecast.categories + ["terminal"])
        for i in range(forecast.matrix.shape[0]):
            writer.writerow(
                [forecast.start_day + i]
                + [f"{v:.6f}" for v in forecast.matrix[i]]
            )
    artifact = {
        **build_header("forecast", config.seed, config.to_dict(), inputs),
        "config": config.to_dict(),
        "condition": {
            "kind": condition.kind,
            "category": condition.category,
            "state": condition.state,
        },
        "start_day": forecast.start_day,
        "horizon_days": forecast.horizon_days,
        "n_trajectories": forecast.n_trajectories,
        "csv": str(csv_path),
        "csv_sha256": file_sha256(csv_path),
        "absorbed_at_horizon": float(forecast.matrix[-1, -1]),
    }
    meta_path = out / "forecast.json"
    write_json(meta_path, artifact)
    return {
        "command": "forecast",
        "forecast": str(csv_path),
        "meta": str(meta_path),
        "trajectories": forecast.n_trajectories,
        "absorbed_at_horizon": float(forecast.matrix[-1, -1]),
    }


# ---------------------------------------------------------------------------
# argument wiring

_CONFIG_FLAGS: dict[str, tuple] = {
    "episodes": (int, "number of synthetic episodes"),
    "physicians": (int, "number of synthetic physicians"),
    "beneficiaries": (int, "number of synthetic beneficiaries"),
    "max_inpatient": (int, "inpatient-count cap of the state space"),
    "n_groups": (int, "number of physician groups"),
    "k": (int, "number of state blocks"),
    "k_min": (int, "smallest k in the cross-validation sweep"),
    "k_max": (int, "largest k in the cross-validation sweep"),
    "restarts": (int, "k-means restarts"),
    "zero_row_rule": (str, "unvisited-row rule: self_loop or uniform"),
    "kernel": (str, "kernel variant: partition or spectral"),
    "tol": (float, "value-iteration tolerance"),
    "max_iterations": (int, "value-iteration sweep limit"),
    "discount": (float, "discount factor (1.0 = undiscounted)"),
    "repeats": (int, "evaluation batches"),
    "rollouts": (int, "episodes per batch"),
    "max_steps": (int, "per-episode step cap"),
    "premium_threshold": (float, "episode premium threshold in dollars"),
    "balance_tolerance": (float, "max group mean-cost gap"),
    "balance_attempts": (int, "grouping swap budget"),
    "start_day": (int, "forecast start day"),
    "horizon_days": (int, "forecast horizon in days"),
    "trajectories": (int, "forecast trajectory count"),
    "gap_days": (int, "constant inter-claim gap (0 = empirical)"),
    "bin_width": (float, "histogram bin width in dollars"),
    "seed": (int, "master random seed"),
    "workers": (int, "advisory worker count; results are scheduling-independent"),
}

_SUBCOMMAND_FLAGS = {
    "synth": ["episodes", "physicians", "beneficiaries", "seed"],
    "ingest": [
        "max_inpatient", "n_groups", "balance_tolerance", "balance_attempts",
        "bin_width", "premium_threshold", "seed",
    ],
    "compress": ["k", "restarts", "zero_row_rule", "seed"],
    "fit": ["kernel", "k", "zero_row_rule", "seed"],
    "solve": ["tol", "max_iterations", "discount", "seed"],
    "evaluate": [
        "repeats", "rollouts", "max_steps", "premium_threshold", "workers", "seed",
    ],
    "cv": [
        "k_min", "k_max", "n_groups", "max_inpatient", "repeats", "rollouts",
        "max_steps", "premium_threshold", "restarts", "zero_row_rule", "tol",
        "max_iterations", "discount", "balance_tolerance", "balance_attempts",
        "workers", "seed",
    ],
    "forecast": [
        "start_day", "horizon_days", "trajectories", "gap_days", "max_steps",
        "seed",
    ],
}

_INPUT_FLAGS = {
    "ingest": [("claims", True)],
    "compress": [("dataset", True)],
    "fit": [("dataset", True), ("partition", False)],
    "solve": [("model", True)],
    "evaluate": [("model", True), ("policy", False)],
    "cv": [("claims", True)],
    "forecast": [("claims", True), ("model", True), ("policy", False)],
}

_HANDLERS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "compress": cmd_compress,
    "fit": cmd_fit,
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "cv": cmd_cv,
    "forecast": cmd_forecast,
}


def build_parser() -> _Parser:
    parser = _Parser(
        prog="carepath",
        description="Learn and evaluate treatment policies from claims data.",
    )
    parser.add_argument(
        "--version", action="store_true", help="print version as JSON and exit"
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, handler in _HANDLERS.items():
        sub = subparsers.add_parser(
            name, help=handler.__doc__, description=handler.__doc__
        )
        sub.add_argument("--config", help="key=value configuration file")
        sub.add_argument(
            "--config-dump",
            action="store_true",
            help="print the resolved configuration as JSON and exit",
        )
        sub.add_argument(
            "--out-dir",
            help=f"output directory (default ${OUTDIR_ENV} or '.')",
        )
        for flag, required in _INPUT_FLAGS.get(name, []):
            sub.add_argument(
                f"--{flag}", required=required, help=f"path to the {flag} input"
            )
        if name == "forecast":
            sub.add_argument(
                "--category",
                help="condition on a diagnosis category at the start day",
            )
            sub.add_argument(
                "--state",
                help="condition on one state key (for example 'd012_c0')",
            )
        for key in _SUBCOMMAND_FLAGS[name]:
            kind, help_text = _CONFIG_FLAGS[key]
            sub.add_argument(
                f"--{key.replace('_', '-')}",
                dest=key,
                type=kind,
                default=None,
                help=help_text,
            )
    return parser


def run_command(argv: list[str]) -> int:
    """Parse argv, run one subcommand, print its one-line JSON summary."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            _emit({"package": "carepath", "version": __version__})
            return 0
        if not args.command:
            parser.print_usage(sys.stderr)
            print("error: a subcommand is required", file=sys.stderr)
            return 1
        if getattr(args, "config_dump", False):
            _emit(resolve_config(args).to_dict())
            return 0
        _emit(_HANDLERS[args.command](args))
        return 0
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
