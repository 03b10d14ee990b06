"""Planning policies: the clairvoyant cost-benefit oracle and baselines.

The oracle solves the budgeted coverage problem on the *true* world with
a generalized cost-benefit greedy: each round adds the node with the
best marginal-coverage / marginal-travel-cost ratio, where the travel
cost increase is measured by cheapest insertion into the planned path,
and the final answer is the better of the greedy set and the best
feasible singleton.  Replanning happens at every executed step, so the
oracle's value-to-go is defined at arbitrary mid-episode states.

Heuristic baselines select the feasible action with the highest
information-gain score computed on the evidence grid (see
:mod:`ippbench.features` for the score definitions).  A brute-force
enumerator over all feasible paths is provided as a test oracle for
small instances only.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import ContractViolationError, InstanceTooLargeError
from .objective import Budget, CoverageModel, PathState
from .sensor import Belief

_RATIO_EPS = 1e-12


class PolicyKind(str, Enum):
    """Action-selection rules understood by the evaluation harness."""

    ORACLE_GCB = "oracle_gcb"
    LEARNED = "learned"
    AVERAGE_ENTROPY = "average_entropy"
    OCCLUSION_AWARE = "occlusion_aware"
    REAR_SIDE_VOXEL = "rear_side_voxel"
    REAR_SIDE_ENTROPY = "rear_side_entropy"
    UNOBSERVED_VOXEL = "unobserved_voxel"
    PROXIMITY_COUNT = "proximity_count"
    RANDOM = "random"

    @classmethod
    def parse(cls, name: str) -> "PolicyKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ContractViolationError(f"unknown policy kind {name!r}") from None


HEURISTIC_KINDS = frozenset(
    {
        PolicyKind.AVERAGE_ENTROPY,
        PolicyKind.OCCLUSION_AWARE,
        PolicyKind.REAR_SIDE_VOXEL,
        PolicyKind.REAR_SIDE_ENTROPY,
        PolicyKind.UNOBSERVED_VOXEL,
        PolicyKind.PROXIMITY_COUNT,
    }
)


@dataclass(frozen=True)
class OraclePlan:
    """Planned extension of a path: nodes in execution order.

    ``predicted_utility`` is the coverage after executing the extension,
    ``predicted_cost`` the travel cost the extension adds.
    """

    path: tuple[int, ...]
    predicted_utility: float
    predicted_cost: float


def _greedy_pass(
    model: CoverageModel,
    state: PathState,
    budget_remaining: float,
    steps_remaining: int,
    by_ratio: bool,
) -> tuple[list[int], int, float]:
    """One greedy plan extension; scores candidates by gain/cost or raw gain.

    Travel cost of a candidate is its cheapest insertion into the open
    planned route (the start end is pinned at the current node).
    """
    dist = model.distances
    plan: list[int] = []
    plan_bits = model.union_bits(state.visited)
    plan_count = plan_bits.bit_count()
    plan_cost = 0.0
    visited = set(state.visited)
    candidates = [a for a in range(len(model)) if a not in visited]

    while len(plan) < steps_remaining:
        route = [state.last] + plan
        best_a = -1
        best_score = 0.0
        best_pos = 0
        best_dc = 0.0
        for a in candidates:
            gain = (plan_bits | model.node_bits[a]).bit_count() - plan_count
            if gain <= 0:
                continue
            dc = dist[route[-1], a]
            pos = len(plan)
            for p in range(len(plan)):
                d = dist[route[p], a] + dist[a, route[p + 1]] - dist[route[p], route[p + 1]]
                if d < dc:
                    dc = d
                    pos = p
            if plan_cost + dc > budget_remaining:
                continue
            score = gain / max(dc, _RATIO_EPS) if by_ratio else float(gain)
            if score > best_score + _RATIO_EPS:
                best_a, best_score, best_pos, best_dc = a, score, pos, dc
        if best_a < 0:
            break
        plan.insert(best_pos, best_a)
        plan_bits |= model.node_bits[best_a]
        plan_count = plan_bits.bit_count()
        plan_cost += best_dc
        candidates.remove(best_a)
    return plan, plan_bits, float(plan_cost)


def gcb_solve(
    model: CoverageModel,
    state: PathState,
    budget_remaining: float,
    steps_remaining: int,
) -> OraclePlan:
    """Greedy cost-benefit plan from ``state`` on the true world.

    Runs a gain-per-cost pass and a raw-gain pass (each constraint can be
    the binding one) and keeps the better of the two and the best
    feasible singleton.  Deterministic; ties resolve to the lowest node
    index.  Returns an empty extension when nothing feasible adds
    coverage.
    """
    visited = set(state.visited)
    base_bits = model.union_bits(state.visited)
    if steps_remaining <= 0 or budget_remaining < 0:
        return OraclePlan((), model.coverage_of_bits(base_bits), 0.0)

    plan, plan_bits, plan_cost = _greedy_pass(
        model, state, budget_remaining, steps_remaining, by_ratio=True
    )
    alt = _greedy_pass(model, state, budget_remaining, steps_remaining, by_ratio=False)
    if alt[1].bit_count() > plan_bits.bit_count():
        plan, plan_bits, plan_cost = alt
    greedy_utility = model.coverage_of_bits(plan_bits)

    # Cost-benefit greedy can starve on a single expensive high-gain node;
    # keep whichever of (greedy set, best feasible singleton) covers more.
    dist = model.distances
    best_single = -1
    best_single_gain = 0
    for a in range(len(model)):
        if a in visited or dist[state.last, a] > budget_remaining:
            continue
        gain = (base_bits | model.node_bits[a]).bit_count() - base_bits.bit_count()
        if gain > best_single_gain:
            best_single, best_single_gain = a, gain
    if best_single >= 0:
        single_utility = model.coverage_of_bits(base_bits | model.node_bits[best_single])
        if single_utility > greedy_utility + _RATIO_EPS:
            return OraclePlan(
                (best_single,), single_utility, float(dist[state.last, best_single])
            )
    return OraclePlan(tuple(plan), greedy_utility, float(plan_cost))


def oracle_action(
    model: CoverageModel, state: PathState, budget: Budget
) -> int | None:
    """First step of a fresh plan; None when no coverage can be added."""
    plan = gcb_solve(
        model, state, budget.distance - state.travel_cost, budget.steps + 1 - state.t
    )
    if not plan.path:
        return None
    return plan.path[0]


def oracle_value_to_go(
    model: CoverageModel, state: PathState, action: int, budget: Budget
) -> float:
    """Reward of ``action`` plus the oracle's replanned continuation value.

    The continuation re-solves the cost-benefit plan after every executed
    step (receding horizon), so the value is defined for any feasible
    (state, action) reached mid-episode.
    """
    if action in state.visited:
        raise ContractViolationError(f"action {action} already visited")
    if state.t > budget.steps:
        raise ContractViolationError("no steps remaining at this state")
    if state.travel_cost + model.distance(state.last, action) > budget.distance:
        raise ContractViolationError(f"action {action} exceeds the travel budget")
    value = model.reward(state, action)
    current = state.extend(action, model.nodeset)
    while current.t <= budget.steps:
        step = oracle_action(model, current, budget)
        if step is None:
            break
        value += model.reward(current, step)
        current = current.extend(step, model.nodeset)
    return value


def heuristic_select(
    kind: PolicyKind,
    state: PathState,
    belief: Belief,
    model: CoverageModel,
    budget: Budget,
) -> int | None:
    """Feasible action maximizing the named evidence-grid score.

    Ties resolve to the lowest node index; returns None on an empty
    feasible set (terminal).
    """
    if kind not in HEURISTIC_KINDS:
        raise ContractViolationError(f"{kind} is not an information-gain heuristic")
    actions = model.feasible_actions(state, budget)
    if not actions:
        return None
    from . import features  # local import; features needs PolicyKind from here

    scores = features.score_batch(kind, state, actions, belief, model.nodeset,
                                  budget, model.sensor)
    best = int(scores.argmax())  # first max = lowest index (actions ascending)
    return actions[best]


def brute_force_solve(
    model: CoverageModel, budget: Budget
) -> tuple[tuple[int, ...], float]:
    """Exhaustive maximum-coverage path from the start node.

    Test oracle only; refuses instances beyond 10 nodes or 5 steps.
    Returns the first maximizer in depth-first ascending order.
    """
    n = len(model)
    if n > 10 or budget.steps > 5:
        raise InstanceTooLargeError(
            f"brute force limited to 10 nodes / 5 steps, got {n} / {budget.steps}"
        )
    start = model.nodeset.start_index
    best_path: tuple[int, ...] = (start,)
    best_utility = model.coverage([start])

    def recurse(state: PathState) -> None:
        nonlocal best_path, best_utility
        utility = model.coverage(state.visited)
        if utility > best_utility + 1e-15:
            best_path, best_utility = state.visited, utility
        for a in model.feasible_actions(state, budget):
            recurse(state.extend(a, model.nodeset))

    recurse(PathState.initial(start))
    return best_path, best_utility
