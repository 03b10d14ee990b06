"""Command-line harness: dataset generation, oracle runs, training, evaluation.

Commands read a JSON config (strict keys, documented in the README) and
write their outputs into a config-hashed, timestamp-free directory under
the output root, so identical config+seed reproduce byte-identical
files.  Exit codes: 0 ok, 2 configuration error, 3 data error, 4
internal error; failures print a single machine-parsable line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

from . import features
from .errors import (
    ConfigError,
    ContractViolationError,
    DataFormatError,
    GenerationError,
    IppError,
    SchemaMismatchError,
)
from .imitation import TrainConfig, evaluate, train
from .learner import ForestConfig, LearnedPolicy, load_model, save_model
from .objective import Budget, CoverageModel, PathState
from .planners import PolicyKind, gcb_solve
from .sensor import KNOWN_FREE, KNOWN_OCCUPIED, SensorConfig
from .worldgen import (
    DatasetSpec,
    WorldFamily,
    dataset_content_hash,
    generate_dataset,
    load_dataset,
    save_dataset,
)

_TOP_KEYS = {"seed", "output_dir", "dataset", "sensor", "budget", "paths", "train", "evaluate"}
_DATASET_KEYS = {
    "family", "world_count", "nodes_per_world", "node_sets_per_world",
    "width", "height", "resolution", "seed", "obstacle_count", "line_thickness",
}
_SENSOR_KEYS = {"ray_count", "max_range"}
_BUDGET_KEYS = {"distance", "steps"}
_PATH_KEYS = {"dataset", "validation_dataset", "model"}
_TRAIN_KEYS = {
    "iterations", "datapoints", "mixture", "validation_episodes",
    "explore_all_actions", "forest",
}
_FOREST_KEYS = {"tree_count", "max_depth", "min_leaf", "feature_subsample"}
_EVAL_KEYS = {"policy", "episodes", "snapshot_steps", "snapshot_episodes"}

_EVIDENCE_CHARS = {0: "U", KNOWN_FREE: "F", KNOWN_OCCUPIED: "O"}


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _load_config(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    _check_keys(cfg, _TOP_KEYS, "config")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    value = cfg.get(name)
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} is missing or not an object")
    return value


def _parse_dataset_spec(cfg: dict, default_seed: int) -> DatasetSpec:
    section = _section(cfg, "dataset")
    _check_keys(section, _DATASET_KEYS, "dataset")
    if "family" not in section:
        raise ConfigError("dataset.family is required")
    try:
        return DatasetSpec(
            family=WorldFamily.parse(str(section["family"])),
            world_count=int(section.get("world_count", 10)),
            nodes_per_world=int(section.get("nodes_per_world", 50)),
            node_sets_per_world=int(section.get("node_sets_per_world", 1)),
            width=int(section.get("width", 200)),
            height=int(section.get("height", 200)),
            resolution=float(section.get("resolution", 1.0)),
            seed=int(section.get("seed", default_seed)),
            obstacle_count=tuple(section.get("obstacle_count", (6, 10))),
            line_thickness=int(section.get("line_thickness", 2)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad dataset section: {exc}") from None


def _parse_sensor(cfg: dict) -> SensorConfig:
    section = cfg.get("sensor", {})
    _check_keys(section, _SENSOR_KEYS, "sensor")
    try:
        return SensorConfig(
            ray_count=int(section.get("ray_count", 64)),
            max_range=float(section.get("max_range", 30.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sensor section: {exc}") from None


def _parse_budget(cfg: dict) -> Budget:
    section = _section(cfg, "budget")
    _check_keys(section, _BUDGET_KEYS, "budget")
    try:
        return Budget(
            distance=float(section["distance"]), steps=int(section["steps"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad budget section: {exc}") from None
    except ContractViolationError as exc:
        raise ConfigError(str(exc)) from None


def _parse_paths(cfg: dict) -> dict:
    section = cfg.get("paths", {})
    _check_keys(section, _PATH_KEYS, "paths")
    return {k: str(v) for k, v in section.items()}


def _require_input_file(path: str | None, what: str) -> str:
    if not path:
        raise ConfigError(f"paths.{what} is required for this command")
    if not os.path.isfile(path):
        raise DataFormatError(f"{what} file not found: {path}")
    return path


def _parse_train(cfg: dict, budget: Budget, sensor: SensorConfig, seed: int) -> TrainConfig:
    section = _section(cfg, "train")
    _check_keys(section, _TRAIN_KEYS, "train")
    forest_section = section.get("forest", {})
    _check_keys(forest_section, _FOREST_KEYS, "train.forest")
    mixture = section.get("mixture", "decay:0.9")
    if isinstance(mixture, list):
        mixture = tuple(float(b) for b in mixture)
    try:
        forest = ForestConfig(
            tree_count=int(forest_section.get("tree_count", 50)),
            max_depth=int(forest_section.get("max_depth", 12)),
            min_leaf=int(forest_section.get("min_leaf", 5)),
            feature_subsample=int(forest_section.get("feature_subsample", 4)),
        )
        return TrainConfig(
            iterations=int(section.get("iterations", 10)),
            datapoints=int(section.get("datapoints", 100)),
            budget=budget,
            sensor=sensor,
            forest=forest,
            mixture=mixture,
            seed=seed,
            explore_all_actions=bool(section.get("explore_all_actions", False)),
            validation_episodes=int(section.get("validation_episodes", 8)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train section: {exc}") from None
    except ContractViolationError as exc:
        raise ConfigError(str(exc)) from None


def _effective_config(cfg: dict, args: argparse.Namespace) -> dict:
    """Config with overrides folded in; excludes output location and jobs."""
    effective = {k: v for k, v in cfg.items() if k != "output_dir"}
    if args.seed is not None:
        effective["seed"] = args.seed
    if getattr(args, "policy", None):
        effective.setdefault("evaluate", {})
        effective["evaluate"] = dict(effective["evaluate"], policy=args.policy)
    if getattr(args, "episodes", None) is not None:
        effective.setdefault("evaluate", {})
        effective["evaluate"] = dict(effective["evaluate"], episodes=args.episodes)
    return effective


def _run_dir(cfg: dict, args: argparse.Namespace, command: str, effective: dict) -> str:
    base = args.out or cfg.get("output_dir") or "runs"
    digest = hashlib.sha256(
        json.dumps(effective, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:12]
    path = os.path.join(base, f"{command}-{digest}")
    os.makedirs(path, exist_ok=True)
    return path


def _write_manifest(out_dir: str, payload: dict) -> None:
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_worlds(cfg: dict, args: argparse.Namespace) -> int:
    effective = _effective_config(cfg, args)
    seed = int(effective.get("seed", 0))
    spec = _parse_dataset_spec(effective, seed)
    out_dir = _run_dir(cfg, args, "gen-worlds", effective)
    instances = generate_dataset(spec)
    dataset_path = os.path.join(out_dir, "dataset.txt")
    save_dataset(dataset_path, instances)
    _write_manifest(out_dir, {
        "command": "gen-worlds",
        "config": effective,
        "instances": len(instances),
        "dataset_hash": dataset_content_hash(dataset_path),
    })
    print(f"wrote {len(instances)} instances to {dataset_path}")
    return 0


def cmd_oracle_solve(cfg: dict, args: argparse.Namespace) -> int:
    effective = _effective_config(cfg, args)
    paths = _parse_paths(effective)
    dataset_path = _require_input_file(paths.get("dataset"), "dataset")
    budget = _parse_budget(effective)
    sensor = _parse_sensor(effective)
    out_dir = _run_dir(cfg, args, "oracle-solve", effective)
    instances = load_dataset(dataset_path)
    report_rows = []
    plan_rows = []
    for k, (world, nodeset) in enumerate(instances):
        model = CoverageModel(world, nodeset, sensor)
        state = PathState.initial(nodeset.start_index)
        plan = gcb_solve(model, state, budget.distance, budget.steps)
        report_rows.append([k, world.id, plan.predicted_utility, plan.predicted_cost, len(plan.path)])
        for order, node in enumerate(plan.path):
            x, y = nodeset.position(node)
            plan_rows.append([k, order, node, x, y])
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="ascii", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["instance", "world_id", "utility", "cost", "steps"])
        w.writerows(report_rows)
    with open(os.path.join(out_dir, "plans.csv"), "w", encoding="ascii", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["instance", "order", "node", "x", "y"])
        w.writerows(plan_rows)
    _write_manifest(out_dir, {
        "command": "oracle-solve",
        "config": effective,
        "dataset_hash": dataset_content_hash(dataset_path),
        "instances": len(instances),
    })
    print(f"solved {len(instances)} instances into {out_dir}")
    return 0


def cmd_train(cfg: dict, args: argparse.Namespace) -> int:
    effective = _effective_config(cfg, args)
    seed = int(effective.get("seed", 0))
    paths = _parse_paths(effective)
    dataset_path = _require_input_file(paths.get("dataset"), "dataset")
    val_path = _require_input_file(paths.get("validation_dataset"), "validation_dataset")
    budget = _parse_budget(effective)
    sensor = _parse_sensor(effective)
    train_config = _parse_train(effective, budget, sensor, seed)
    out_dir = _run_dir(cfg, args, "train", effective)

    train_instances = load_dataset(dataset_path)
    val_instances = load_dataset(val_path)
    result = train(train_config, train_instances, val_instances, jobs=args.jobs)

    model_path = os.path.join(out_dir, "model.json")
    save_model(result.policy.forest, model_path)
    with open(os.path.join(out_dir, "iterations.csv"), "w", encoding="ascii", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["iteration", "beta", "dataset_size", "validation_value"])
        for m in result.metrics:
            w.writerow([m.iteration, m.beta, m.dataset_size, m.validation_value])
    _write_manifest(out_dir, {
        "command": "train",
        "config": effective,
        "dataset_hash": dataset_content_hash(dataset_path),
        "validation_dataset_hash": dataset_content_hash(val_path),
        "best_iteration": result.best_iteration,
        "feature_schema": {
            "version": features.SCHEMA_VERSION,
            "names": list(features.FEATURE_NAMES),
        },
    })
    print(
        f"trained {train_config.iterations} iterations, "
        f"best iteration {result.best_iteration}, model at {model_path}"
    )
    return 0


def cmd_evaluate(cfg: dict, args: argparse.Namespace) -> int:
    effective = _effective_config(cfg, args)
    seed = int(effective.get("seed", 0))
    paths = _parse_paths(effective)
    dataset_path = _require_input_file(paths.get("dataset"), "dataset")
    budget = _parse_budget(effective)
    sensor = _parse_sensor(effective)
    section = effective.get("evaluate", {})
    _check_keys(section, _EVAL_KEYS, "evaluate")
    if "policy" not in section:
        raise ConfigError("evaluate.policy is required (or pass --policy)")
    try:
        kind = PolicyKind.parse(str(section["policy"]))
    except ContractViolationError as exc:
        raise ConfigError(str(exc)) from None
    episodes = int(section.get("episodes", 20))
    if episodes < 0:
        raise ConfigError("evaluate.episodes must be >= 0")
    snapshot_steps = [int(s) for s in section.get("snapshot_steps", [])]
    snapshot_episodes = [int(e) for e in section.get("snapshot_episodes", [])]

    learned = None
    if kind is PolicyKind.LEARNED:
        model_path = _require_input_file(paths.get("model"), "model")
        learned = LearnedPolicy(forest=load_model(model_path))

    out_dir = _run_dir(cfg, args, "evaluate", effective)
    instances = load_dataset(dataset_path)
    result = evaluate(
        kind, instances, episodes, budget, sensor, seed,
        learned=learned, jobs=args.jobs,
        snapshot_steps=snapshot_steps, snapshot_episodes=snapshot_episodes,
    )

    with open(os.path.join(out_dir, "episodes.csv"), "w", encoding="ascii", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["episode", "step", "cumulative_reward"])
        for e, trace in enumerate(result.traces):
            for step, value in enumerate(trace.cumulative_by_step(budget.steps), start=1):
                w.writerow([e, step, value])
    with open(os.path.join(out_dir, "summary.csv"), "w", encoding="ascii", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["step", "mean", "ci_lo", "ci_hi"])
        s = result.summary
        for i in range(s.steps.size):
            w.writerow([int(s.steps[i]), s.mean[i], s.ci_lo[i], s.ci_hi[i]])
    snap_dir = os.path.join(out_dir, "snapshots")
    for e, trace in enumerate(result.traces):
        for step, grid in sorted(trace.snapshots.items()):
            os.makedirs(snap_dir, exist_ok=True)
            lines = [
                "".join(_EVIDENCE_CHARS[int(v)] for v in row) for row in grid
            ]
            with open(
                os.path.join(snap_dir, f"ep{e}_step{step}.txt"),
                "w", encoding="ascii", newline="\n",
            ) as fh:
                fh.write("\n".join(lines) + "\n")
    _write_manifest(out_dir, {
        "command": "evaluate",
        "config": effective,
        "dataset_hash": dataset_content_hash(dataset_path),
        "policy": kind.value,
        "episodes": episodes,
        "mean_final": None if not result.traces else result.summary.mean_final,
    })
    print(f"evaluated {kind.value} for {episodes} episodes into {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "gen-worlds": cmd_gen_worlds,
    "oracle-solve": cmd_oracle_solve,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ippbench",
        description="Budgeted information-gathering workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output root directory")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes (capped by IPPBENCH_MAX_JOBS)")
        if name == "evaluate":
            p.add_argument("--policy", default=None, help="override evaluate.policy")
            p.add_argument("--episodes", type=int, default=None,
                           help="override evaluate.episodes")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        _fail(exc)
        return 2
    except (DataFormatError, SchemaMismatchError, GenerationError, FileNotFoundError) as exc:
        _fail(exc)
        return 3
    except IppError as exc:
        _fail(exc)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _fail(exc)
        return 4


def _fail(exc: BaseException) -> None:
    message = str(exc).replace("\n", " ")
    print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
