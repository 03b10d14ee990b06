"""Coverage utility, travel cost and budget feasibility.

The utility of a set of visited nodes is fractional surface coverage:
the union of occupied cells struck by raycasts from the visited nodes,
normalized by everything any node of the instance could strike.  With
that normalization the full node set always scores 1 and the one-step
reward (normalized marginal gain) sums to at most 1 over an episode.

:class:`CoverageModel` precomputes each node's hit set once and stores
it as an int bitmask over the coverable cells, so marginal gains reduce
to bitwise OR plus popcount.  Everything here is pure given the
immutable world/node set, and safe to evaluate in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolationError
from .sensor import Measurement, SensorConfig, raycast
from .worldgen import NodeSet, WorldMap


@dataclass(frozen=True)
class Budget:
    """Travel distance allowance and step horizon of an episode."""

    distance: float
    steps: int

    def __post_init__(self) -> None:
        if self.distance < 0:
            raise ContractViolationError("budget distance must be >= 0")
        if self.steps < 1:
            raise ContractViolationError("budget steps must be >= 1")


@dataclass(frozen=True)
class PathState:
    """Ordered visited nodes with the accumulated travel cost.

    ``t`` equals the number of visited nodes; a fresh episode starts at
    t=1 with only the start node.  States are immutable; ``extend``
    returns the successor.
    """

    visited: tuple[int, ...]
    travel_cost: float = 0.0

    @property
    def t(self) -> int:
        return len(self.visited)

    @property
    def last(self) -> int:
        return self.visited[-1]

    @classmethod
    def initial(cls, start_index: int) -> "PathState":
        return cls(visited=(start_index,), travel_cost=0.0)

    def extend(self, action: int, nodeset: NodeSet) -> "PathState":
        ax, ay = nodeset.position(action)
        lx, ly = nodeset.position(self.last)
        return PathState(
            visited=self.visited + (action,),
            travel_cost=self.travel_cost + math.hypot(ax - lx, ay - ly),
        )

    def recomputed_cost(self, nodeset: NodeSet) -> float:
        """Travel cost re-summed from scratch (audit helper)."""
        total = 0.0
        for a, b in zip(self.visited, self.visited[1:]):
            ax, ay = nodeset.position(a)
            bx, by = nodeset.position(b)
            total += math.hypot(bx - ax, by - ay)
        return total


class CoverageModel:
    """Coverage bookkeeping for one (world, node set, sensor) instance."""

    def __init__(self, world: WorldMap, nodeset: NodeSet, sensor: SensorConfig):
        self.world = world
        self.nodeset = nodeset
        self.sensor = sensor
        self.measurements: list[Measurement] = [
            raycast(world, nodeset.position(i), sensor) for i in range(len(nodeset))
        ]
        coverable = np.unique(np.concatenate([m.hits for m in self.measurements]))
        self.coverable_ids = coverable.astype(np.int64)
        self.denominator = int(coverable.size)
        bit_of = {int(c): b for b, c in enumerate(coverable)}
        self.node_bits: list[int] = []
        for m in self.measurements:
            bits = 0
            for c in m.hits:
                bits |= 1 << bit_of[int(c)]
            self.node_bits.append(bits)
        self.all_bits = 0
        for bits in self.node_bits:
            self.all_bits |= bits
        xy = nodeset.nodes
        diff = xy[:, None, :] - xy[None, :, :]
        self.distances = np.hypot(diff[..., 0], diff[..., 1])

    def __len__(self) -> int:
        return len(self.nodeset)

    def distance(self, i: int, j: int) -> float:
        return float(self.distances[i, j])

    def union_bits(self, visited: Sequence[int]) -> int:
        bits = 0
        for v in visited:
            bits |= self.node_bits[v]
        return bits

    def coverage_of_bits(self, bits: int) -> float:
        if self.denominator == 0:
            return 0.0
        return bits.bit_count() / self.denominator

    def coverage(self, visited: Sequence[int]) -> float:
        """Fraction of coverable surface struck from the visited nodes."""
        return self.coverage_of_bits(self.union_bits(visited))

    def marginal_gain(self, action: int, visited: Sequence[int]) -> float:
        """Discrete derivative of coverage at ``visited`` in direction ``action``."""
        bits = self.union_bits(visited)
        withv = bits | self.node_bits[action]
        if self.denominator == 0:
            return 0.0
        return (withv.bit_count() - bits.bit_count()) / self.denominator

    def reward(self, state: PathState, action: int) -> float:
        """Marginal gain normalized by the full node set's utility."""
        total = self.coverage_of_bits(self.all_bits)
        if total == 0.0:
            return 0.0
        return self.marginal_gain(action, state.visited) / total

    def feasible_actions(self, state: PathState, budget: Budget) -> list[int]:
        """Unvisited nodes reachable within the remaining budget and horizon.

        Sorted ascending so downstream argmax tie-breaks pick the lowest
        node index.  May be empty (terminal state).
        """
        if state.t > budget.steps:  # |visited| would exceed steps+1
            return []
        remaining = budget.distance - state.travel_cost
        visited = set(state.visited)
        row = self.distances[state.last]
        return [
            a
            for a in range(len(self.nodeset))
            if a not in visited and row[a] <= remaining
        ]

    def verify_path(self, visited: Sequence[int], budget: Budget, tol: float = 1e-9) -> None:
        """Raise unless the path satisfies budget and cardinality constraints."""
        state = PathState(visited=tuple(visited), travel_cost=0.0)
        cost = state.recomputed_cost(self.nodeset)
        if cost > budget.distance + tol:
            raise ContractViolationError(
                f"path cost {cost} exceeds budget {budget.distance}"
            )
        if len(visited) > budget.steps + 1:
            raise ContractViolationError(
                f"path visits {len(visited)} nodes, allowed {budget.steps + 1}"
            )


# ---------------------------------------------------------------------------
# Convenience wrappers (build a throwaway model; fine for small instances)
# ---------------------------------------------------------------------------

def coverage(
    visited: Sequence[int], world: WorldMap, nodeset: NodeSet, sensor: SensorConfig
) -> float:
    return CoverageModel(world, nodeset, sensor).coverage(visited)


def marginal_gain(
    action: int,
    visited: Sequence[int],
    world: WorldMap,
    nodeset: NodeSet,
    sensor: SensorConfig,
) -> float:
    return CoverageModel(world, nodeset, sensor).marginal_gain(action, visited)


def reward(
    state: PathState,
    world: WorldMap,
    action: int,
    nodeset: NodeSet,
    sensor: SensorConfig,
) -> float:
    return CoverageModel(world, nodeset, sensor).reward(state, action)


def feasible_actions(
    state: PathState,
    world: WorldMap,
    nodeset: NodeSet,
    sensor: SensorConfig,
    budget: Budget,
) -> list[int]:
    return CoverageModel(world, nodeset, sensor).feasible_actions(state, budget)
