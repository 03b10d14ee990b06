"""Imitation training of the oracle's value-to-go, plus episode evaluation.

Training iterates: roll in with a per-step mixture of the clairvoyant
oracle and the current learner, stop at a uniformly sampled timestep,
take a uniformly random exploratory action, label it with the oracle's
value-to-go on the true world, aggregate the labeled examples across all
iterations, refit the forest, and finally keep the iterate that scores
best on held-out validation worlds.

Evaluation runs full budget-constrained episodes for any policy kind and
summarizes cumulative reward per step with normal-approximation 95%
confidence intervals.  Per-episode RNG streams are derived from
(seed, episode) so results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import logging
import multiprocessing
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import learner as learner_mod
from .errors import ConfigError, TrainingError
from .features import extract
from .learner import ForestConfig, LearnedPolicy, QDatapoint
from .objective import Budget, CoverageModel, PathState
from .planners import HEURISTIC_KINDS, PolicyKind, heuristic_select, oracle_action, oracle_value_to_go
from .sensor import Belief, SensorConfig, initial_belief, raycast, update_belief
from .worldgen import NodeSet, WorldMap

log = logging.getLogger(__name__)

Instance = tuple[WorldMap, NodeSet]
SelectFn = Callable[[PathState, Belief, list[int], np.random.Generator], "int | None"]

_VALIDATION_STREAM = 0x5EED  # fixed so every iterate sees identical episodes


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the imitation loop.

    ``mixture`` is either "decay:<rate>" (beta_i = rate**(i-1)),
    "indicator" (beta_1 = 1, later 0) or an explicit per-iteration tuple.
    ``explore_all_actions`` labels every feasible action of each sampled
    state instead of a single uniform one.
    """

    iterations: int
    datapoints: int
    budget: Budget
    sensor: SensorConfig = SensorConfig()
    forest: ForestConfig = ForestConfig()
    mixture: str | tuple[float, ...] = "decay:0.9"
    seed: int = 0
    explore_all_actions: bool = False
    validation_episodes: int = 8
    resample_limit: int = 25

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.datapoints < 1:
            raise ConfigError("datapoints must be >= 1")
        for i in range(1, self.iterations + 1):
            beta = mixture_beta(self.mixture, i)
            if not 0.0 <= beta <= 1.0:
                raise ConfigError(f"mixture beta_{i}={beta} outside [0, 1]")


def mixture_beta(mixture: str | Sequence[float], iteration: int) -> float:
    """Oracle share of the roll-in policy at a 1-based iteration."""
    if isinstance(mixture, str):
        if mixture == "indicator":
            return 1.0 if iteration == 1 else 0.0
        if mixture.startswith("decay:"):
            try:
                rate = float(mixture.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad mixture spec {mixture!r}") from None
            return rate ** (iteration - 1)
        raise ConfigError(f"bad mixture spec {mixture!r}")
    if iteration > len(mixture):
        raise ConfigError(f"mixture schedule shorter than iteration {iteration}")
    return float(mixture[iteration - 1])


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    t: int
    state_node: int
    action: int
    reward: float
    cumulative: float
    snapshot_id: str | None = None


@dataclass
class EpisodeTrace:
    """Per-step log of one episode under a fixed policy."""

    instance_index: int
    records: list[StepRecord]
    termination: str
    visited: tuple[int, ...]
    travel_cost: float
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def final_cumulative(self) -> float:
        return self.records[-1].cumulative if self.records else 0.0

    def cumulative_by_step(self, horizon: int) -> np.ndarray:
        """Length-``horizon`` cumulative curve, padded with the final value."""
        out = np.zeros(horizon)
        value = 0.0
        by_t = {r.t: r.cumulative for r in self.records}
        for t in range(1, horizon + 1):
            value = by_t.get(t, value)
            out[t - 1] = value
        return out


def run_episode(
    model: CoverageModel,
    select: SelectFn,
    budget: Budget,
    rng: np.random.Generator,
    instance_index: int = 0,
    snapshot_steps: Sequence[int] = (),
) -> EpisodeTrace:
    """Execute one episode; rewards come from the true world.

    Termination is "horizon" after the full step budget, "exhausted" when
    no action fits the remaining budget, and "no_gain" when the policy
    declines to act (the oracle stops once nothing adds coverage).
    """
    nodeset = model.nodeset
    state = PathState.initial(nodeset.start_index)
    belief = initial_belief(model.world, nodeset, model.sensor)
    records: list[StepRecord] = []
    snapshots: dict[int, np.ndarray] = {}
    cumulative = 0.0
    termination = "horizon"
    for t in range(1, budget.steps + 1):
        feasible = model.feasible_actions(state, budget)
        if not feasible:
            termination = "exhausted"
            break
        action = select(state, belief, feasible, rng)
        if action is None:
            termination = "no_gain"
            break
        step_reward = model.reward(state, action)
        cumulative += step_reward
        meas = raycast(model.world, nodeset.position(action), model.sensor)
        belief = update_belief(belief, state.last, action, meas)
        state = state.extend(action, nodeset)
        snapshot_id = None
        if t in snapshot_steps:
            snapshot_id = f"step{t}"
            snapshots[t] = belief.evidence.copy()
        records.append(
            StepRecord(
                t=t, state_node=state.visited[-2], action=action,
                reward=step_reward, cumulative=cumulative, snapshot_id=snapshot_id,
            )
        )
    return EpisodeTrace(
        instance_index=instance_index,
        records=records,
        termination=termination,
        visited=state.visited,
        travel_cost=state.travel_cost,
        snapshots=snapshots,
    )


def make_select_fn(
    kind: PolicyKind,
    model: CoverageModel,
    budget: Budget,
    learned: LearnedPolicy | None = None,
) -> SelectFn:
    """Bind a policy kind to one instance; returns the per-step selector."""
    if kind is PolicyKind.ORACLE_GCB:
        return lambda state, belief, feasible, rng: oracle_action(model, state, budget)
    if kind is PolicyKind.RANDOM:
        return lambda state, belief, feasible, rng: feasible[
            int(rng.integers(len(feasible)))
        ]
    if kind is PolicyKind.LEARNED:
        if learned is None:
            raise ConfigError("LEARNED policy requires a trained model")
        return lambda state, belief, feasible, rng: learner_mod.select_action(
            learned, state, belief, model, budget
        )
    if kind in HEURISTIC_KINDS:
        return lambda state, belief, feasible, rng: heuristic_select(
            kind, state, belief, model, budget
        )
    raise ConfigError(f"no selector for policy kind {kind}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalSummary:
    """Per-step mean cumulative reward with a 95% confidence band."""

    steps: np.ndarray
    mean: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray

    @property
    def mean_final(self) -> float:
        return float(self.mean[-1]) if self.mean.size else float("nan")


@dataclass
class EvalResult:
    kind: PolicyKind
    traces: list[EpisodeTrace]
    summary: EvalSummary


def summarize_traces(traces: Sequence[EpisodeTrace], horizon: int) -> EvalSummary:
    if not traces:
        empty = np.zeros(0)
        return EvalSummary(steps=np.zeros(0, dtype=int), mean=empty, ci_lo=empty, ci_hi=empty)
    curves = np.stack([tr.cumulative_by_step(horizon) for tr in traces])
    mean = curves.mean(axis=0)
    if curves.shape[0] > 1:
        sd = curves.std(axis=0, ddof=1)
        half = 1.96 * sd / np.sqrt(curves.shape[0])
    else:
        half = np.zeros(horizon)
    return EvalSummary(
        steps=np.arange(1, horizon + 1),
        mean=mean,
        ci_lo=mean - half,
        ci_hi=mean + half,
    )


_WORKER_CTX: dict = {}


def _init_worker(payload: dict) -> None:
    _WORKER_CTX.update(payload)


def _eval_episode_task(episode: int) -> EpisodeTrace:
    ctx = _WORKER_CTX
    return _run_eval_episode(
        ctx["models"], ctx["kind"], ctx["budget"], ctx["seed"],
        ctx["learned"], ctx["snapshot_steps"], ctx["snapshot_episodes"], episode,
    )


def _run_eval_episode(
    models: Sequence[CoverageModel],
    kind: PolicyKind,
    budget: Budget,
    seed: int,
    learned: LearnedPolicy | None,
    snapshot_steps: Sequence[int],
    snapshot_episodes: Sequence[int],
    episode: int,
) -> EpisodeTrace:
    index = episode % len(models)
    model = models[index]
    select = make_select_fn(kind, model, budget, learned)
    rng = np.random.default_rng([seed, episode])
    steps = snapshot_steps if episode in snapshot_episodes else ()
    return run_episode(
        model, select, budget, rng, instance_index=index, snapshot_steps=steps
    )


def _pool_size(jobs: int, tasks: int) -> int:
    import os

    cap = os.environ.get("IPPBENCH_MAX_JOBS")
    if cap is not None:
        jobs = min(jobs, max(1, int(cap)))
    return max(1, min(jobs, tasks))


def evaluate(
    kind: PolicyKind,
    instances: Sequence[Instance],
    episodes: int,
    budget: Budget,
    sensor: SensorConfig,
    seed: int,
    learned: LearnedPolicy | None = None,
    jobs: int = 1,
    snapshot_steps: Sequence[int] = (),
    snapshot_episodes: Sequence[int] = (),
    models: Sequence[CoverageModel] | None = None,
) -> EvalResult:
    """Run ``episodes`` full episodes, cycling through the instances.

    Episode ``e`` uses instance ``e % len(instances)`` and its own RNG
    stream, so identical (inputs, seed) give identical traces for any
    ``jobs`` value.
    """
    if not instances and models is None:
        raise ConfigError("evaluate needs at least one instance")
    if models is None:
        models = [CoverageModel(w, n, sensor) for w, n in instances]
    if episodes == 0:
        return EvalResult(kind=kind, traces=[], summary=summarize_traces([], budget.steps))
    jobs = _pool_size(jobs, episodes)
    if jobs > 1:
        payload = {
            "models": models, "kind": kind, "budget": budget, "seed": seed,
            "learned": learned, "snapshot_steps": tuple(snapshot_steps),
            "snapshot_episodes": tuple(snapshot_episodes),
        }
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs, initializer=_init_worker, initargs=(payload,)) as pool:
            traces = pool.map(_eval_episode_task, range(episodes))
    else:
        traces = [
            _run_eval_episode(
                models, kind, budget, seed, learned,
                tuple(snapshot_steps), tuple(snapshot_episodes), e,
            )
            for e in range(episodes)
        ]
    return EvalResult(
        kind=kind, traces=traces, summary=summarize_traces(traces, budget.steps)
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    beta: float
    dataset_size: int
    validation_value: float


@dataclass
class TrainResult:
    policy: LearnedPolicy
    best_iteration: int
    metrics: list[IterationMetrics]
    audit_paths: list[tuple[int, ...]] = field(default_factory=list)


def _roll_in(
    model: CoverageModel,
    budget: Budget,
    beta: float,
    target_t: int,
    learned: LearnedPolicy | None,
    rng: np.random.Generator,
) -> tuple[PathState, Belief] | None:
    """Execute the mixture policy until time ``target_t``; None if stuck."""
    nodeset = model.nodeset
    state = PathState.initial(nodeset.start_index)
    belief = initial_belief(model.world, nodeset, model.sensor)
    while state.t < target_t:
        feasible = model.feasible_actions(state, budget)
        if not feasible:
            return None
        if rng.random() < beta:
            action = oracle_action(model, state, budget)
        elif learned is not None:
            action = learner_mod.select_action(learned, state, belief, model, budget)
        else:  # untrained first iterate acts uniformly
            action = feasible[int(rng.integers(len(feasible)))]
        if action is None:
            return None
        meas = raycast(model.world, nodeset.position(action), model.sensor)
        belief = update_belief(belief, state.last, action, meas)
        state = state.extend(action, nodeset)
    return state, belief


def _collect_batch(
    models: Sequence[CoverageModel],
    config: TrainConfig,
    learned: LearnedPolicy | None,
    beta: float,
    iteration: int,
    j: int,
) -> tuple[list[QDatapoint], list[tuple[int, ...]]]:
    """Datapoints for sample ``j`` of an iteration (several if exploring all)."""
    budget = config.budget
    for attempt in range(config.resample_limit):
        rng = np.random.default_rng([config.seed, iteration, j, attempt])
        model = models[int(rng.integers(len(models)))]
        t = int(rng.integers(1, budget.steps + 1))
        rolled = _roll_in(model, budget, beta, t, learned, rng)
        if rolled is None:
            log.debug("roll-in to t=%d failed (iter %d, j %d); resampling", t, iteration, j)
            continue
        state, belief = rolled
        feasible = model.feasible_actions(state, budget)
        if not feasible:
            log.debug("empty feasible set at t=%d (iter %d, j %d); resampling", t, iteration, j)
            continue
        if config.explore_all_actions:
            actions = feasible
        else:
            actions = [feasible[int(rng.integers(len(feasible)))]]
        points = []
        audits = []
        for action in actions:
            q = oracle_value_to_go(model, state, action, budget)
            vec = extract(state, action, belief, model.nodeset, budget, config.sensor)
            points.append(QDatapoint(features=vec, q=q, t=state.t))
            audits.append(state.visited + (action,))
        return points, audits
    raise TrainingError(
        f"could not reach a usable state after {config.resample_limit} attempts "
        f"(iteration {iteration}, sample {j})"
    )


def _collect_task(args: tuple[int, int]) -> tuple[list[QDatapoint], list[tuple[int, ...]]]:
    iteration, j = args
    ctx = _WORKER_CTX
    return _collect_batch(
        ctx["models"], ctx["config"], ctx["learned"], ctx["beta"], iteration, j
    )


def train(
    config: TrainConfig,
    train_instances: Sequence[Instance],
    val_instances: Sequence[Instance],
    jobs: int = 1,
    collect_audit: bool = False,
) -> TrainResult:
    """Run the full imitation loop and return the best validated iterate."""
    if not train_instances or not val_instances:
        raise TrainingError("training and validation datasets must be non-empty")
    models = [CoverageModel(w, n, config.sensor) for w, n in train_instances]
    val_models = [CoverageModel(w, n, config.sensor) for w, n in val_instances]

    dataset: list[QDatapoint] = []
    audit_paths: list[tuple[int, ...]] = []
    metrics: list[IterationMetrics] = []
    candidates: list[LearnedPolicy] = []
    learned: LearnedPolicy | None = None

    for iteration in range(1, config.iterations + 1):
        beta = mixture_beta(config.mixture, iteration)
        tasks = [(iteration, j) for j in range(config.datapoints)]
        pool_jobs = _pool_size(jobs, len(tasks))
        if pool_jobs > 1:
            payload = {
                "models": models, "config": config, "learned": learned, "beta": beta,
            }
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(pool_jobs, initializer=_init_worker, initargs=(payload,)) as pool:
                results = pool.map(_collect_task, tasks)
        else:
            results = [
                _collect_batch(models, config, learned, beta, it, j)
                for (it, j) in tasks
            ]
        for points, audits in results:
            dataset.extend(points)
            if collect_audit:
                audit_paths.extend(audits)

        forest = learner_mod.fit(dataset, config.forest, seed=[config.seed, iteration])
        learned = LearnedPolicy(forest=forest)
        candidates.append(learned)

        val = evaluate(
            PolicyKind.LEARNED,
            val_instances,
            episodes=config.validation_episodes,
            budget=config.budget,
            sensor=config.sensor,
            seed=_VALIDATION_STREAM + config.seed,
            learned=learned,
            jobs=jobs,
            models=val_models,
        )
        if collect_audit:
            audit_paths.extend(tr.visited for tr in val.traces)
        metrics.append(
            IterationMetrics(
                iteration=iteration,
                beta=beta,
                dataset_size=len(dataset),
                validation_value=val.summary.mean_final,
            )
        )
        log.info(
            "iteration %d: beta=%.3f dataset=%d validation=%.4f",
            iteration, beta, len(dataset), val.summary.mean_final,
        )

    best = max(range(len(metrics)), key=lambda i: (metrics[i].validation_value, -i))
    return TrainResult(
        policy=candidates[best],
        best_iteration=best + 1,
        metrics=metrics,
        audit_paths=audit_paths,
    )
