"""Information-gain and motion features over (state, action, belief).

Visibility is estimated by raycasting on the evidence grid with UNKNOWN
treated as transparent: the candidate cannot consult the true world, so
it assumes unobserved space is see-through.  Entropy per cell is 1 bit
for UNKNOWN and 0 for any KNOWN cell.

The 16-entry schema (index, normalizer in brackets):

  0  avg_entropy           mean entropy over visible cells          [1]
  1  occlusion_aware       visible entropy attenuated by 0.5 per
                           unknown cell crossed en route            [rays*range]
  2  unobserved_count      visible UNKNOWN cells                    [rays*range]
  3  rear_side_count       visible UNKNOWN cells 8-adjacent to a
                           KNOWN_OCCUPIED cell                      [rays*range]
  4  rear_side_entropy     entropy of UNKNOWN cells lying behind
                           evidence-ray hits                        [rays*range]
  5  proximity_count       visible UNKNOWN cells weighted by
                           closeness to known surface               [rays*range]
  6  frontier_visible      visible frontier cells (UNKNOWN touching
                           KNOWN_FREE 4-adjacently)                 [rays*range]
  7  frontier_distance     action to nearest frontier cell          [grid diagonal]
  8  visible_count         all visible cells                        [rays*range]
  9  visible_occupied      visible KNOWN_OCCUPIED cells             [rays]
  10 unknown_fraction      UNKNOWN share of visible cells           [1]
  11 mean_ray_length       mean evidence-ray length                 [range]
  12 covered_so_far        surface cells covered by the history     [rays*range]
  13 travel_distance       straight-line distance to the action     [budget]
  14 heading_change        absolute turn angle toward the action    [pi]
  15 remaining_budget      budget fraction left after the move      [1]

Indices 0-5 double as the heuristic policy scores; the normalizers are
positive constants per configuration, so the per-kind argmax matches
the raw quantity.  Extraction is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ContractViolationError
from .objective import Budget, PathState
from .planners import PolicyKind
from .sensor import (
    KNOWN_FREE,
    KNOWN_OCCUPIED,
    UNKNOWN,
    Belief,
    SensorConfig,
    ray_template,
    trace_rays,
)
from .worldgen import NodeSet

SCHEMA_VERSION = 1
FEATURE_LENGTH = 16

FEATURE_NAMES = (
    "avg_entropy",
    "occlusion_aware",
    "unobserved_count",
    "rear_side_count",
    "rear_side_entropy",
    "proximity_count",
    "frontier_visible",
    "frontier_distance",
    "visible_count",
    "visible_occupied",
    "unknown_fraction",
    "mean_ray_length",
    "covered_so_far",
    "travel_distance",
    "heading_change",
    "remaining_budget",
)

KIND_TO_FEATURE = {
    PolicyKind.AVERAGE_ENTROPY: 0,
    PolicyKind.OCCLUSION_AWARE: 1,
    PolicyKind.UNOBSERVED_VOXEL: 2,
    PolicyKind.REAR_SIDE_VOXEL: 3,
    PolicyKind.REAR_SIDE_ENTROPY: 4,
    PolicyKind.PROXIMITY_COUNT: 5,
}


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-length feature row tagged with its schema version."""

    values: np.ndarray
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != (FEATURE_LENGTH,):
            raise ContractViolationError(
                f"feature vector must have length {FEATURE_LENGTH}"
            )
        if not np.all(np.isfinite(values)):
            raise ContractViolationError("feature vector contains non-finite entries")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def _shift_or(mask: np.ndarray, diagonal: bool) -> np.ndarray:
    """Dilate a boolean mask by its 4- or 8-neighborhood."""
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    if diagonal:
        out[1:, 1:] |= mask[:-1, :-1]
        out[1:, :-1] |= mask[:-1, 1:]
        out[:-1, 1:] |= mask[1:, :-1]
        out[:-1, :-1] |= mask[1:, 1:]
    return out


class _BeliefMasks:
    """Derived grids shared by all candidate actions at one belief."""

    def __init__(self, belief: Belief, cfg: SensorConfig):
        ev = belief.evidence
        self.occupied = ev == KNOWN_OCCUPIED
        self.unknown_flat = (ev == UNKNOWN).ravel()
        rear = (ev == UNKNOWN) & _shift_or(self.occupied, diagonal=True)
        self.rear_flat = rear.ravel()
        frontier = (ev == UNKNOWN) & _shift_or(ev == KNOWN_FREE, diagonal=False)
        self.frontier_flat = frontier.ravel()
        fy, fx = np.nonzero(frontier)
        self.frontier_xy = (
            np.stack([(fx + 0.5), (fy + 0.5)], axis=1) * belief.resolution
            if fx.size
            else None
        )
        if self.occupied.any():
            # cell distance to the nearest known surface, scaled to [0, 1]
            dist = ndimage.distance_transform_edt(~self.occupied)
            self.surface_proximity = np.clip(
                1.0 - dist.ravel() / cfg.max_range, 0.0, 1.0
            )
        else:
            self.surface_proximity = None


def extract_batch(
    state: PathState,
    actions: Sequence[int],
    belief: Belief,
    nodeset: NodeSet,
    budget: Budget,
    cfg: SensorConfig,
) -> np.ndarray:
    """Feature matrix (len(actions), 16) sharing the belief-derived masks.

    Rows are in the order of ``actions``; identical inputs give bitwise
    identical output.
    """
    masks = _BeliefMasks(belief, cfg)
    tpl = ray_template(cfg)
    norm = float(cfg.ray_count * cfg.max_range)
    diag = math.hypot(belief.width, belief.height) * belief.resolution
    cols = np.arange(tpl.dx.shape[1])

    last = nodeset.position(state.last)
    heading = None
    if state.t >= 2:
        prev = nodeset.position(state.visited[-2])
        hx, hy = last[0] - prev[0], last[1] - prev[1]
        if hx != 0.0 or hy != 0.0:
            heading = (hx, hy)

    out = np.zeros((len(actions), FEATURE_LENGTH), dtype=np.float64)
    for row, action in enumerate(actions):
        ax, ay = nodeset.position(action)
        cx = int(math.floor(ax / belief.resolution))
        cy = int(math.floor(ay / belief.resolution))
        tr = trace_rays(masks.occupied, cx, cy, tpl)

        include = tr.traversed.copy()
        hit_rows = np.flatnonzero(tr.hit >= 0)
        include[hit_rows, tr.hit[hit_rows]] = True
        flat_i = tr.flat[include]
        visible = np.unique(flat_i)
        visible_count = int(visible.size)
        unknown_visible = visible[masks.unknown_flat[visible]]
        unknown_count = int(unknown_visible.size)
        hit_ids = np.unique(tr.flat[hit_rows, tr.hit[hit_rows]])

        # occlusion-aware: per-ray attenuation 0.5^(unknown cells crossed),
        # a cell seen by several rays keeps its least occluded weight
        unk_in = masks.unknown_flat[tr.flat] & include
        cum_before = np.cumsum(unk_in, axis=1) - unk_in
        weights = np.float_power(0.5, cum_before)[include]
        unk_i = masks.unknown_flat[flat_i]
        occlusion_aware = 0.0
        if unknown_count:
            fu = flat_i[unk_i]
            uniq, inverse = np.unique(fu, return_inverse=True)
            wmax = np.zeros(uniq.size)
            np.maximum.at(wmax, inverse, weights[unk_i])
            occlusion_aware = float(wmax.sum())

        # unknown cells lying behind evidence-grid hits, range-limited
        behind = (
            tr.inbounds
            & (tr.hit[:, None] >= 0)
            & (cols[None, :] > tr.hit[:, None])
        )
        behind_ids = np.unique(tr.flat[behind])
        rear_entropy = float(np.count_nonzero(masks.unknown_flat[behind_ids]))

        proximity = 0.0
        if masks.surface_proximity is not None and unknown_count:
            proximity = float(masks.surface_proximity[unknown_visible].sum())

        frontier_visible = float(np.count_nonzero(masks.frontier_flat[visible]))
        if masks.frontier_xy is None:
            frontier_distance = 1.0
        else:
            d = np.hypot(
                masks.frontier_xy[:, 0] - ax, masks.frontier_xy[:, 1] - ay
            )
            frontier_distance = float(d.min()) / diag

        # ray length: entry distance of the stopping cell, else full range
        stop_valid = (tr.stop < cols.size) & tpl.valid[
            np.arange(cfg.ray_count), np.minimum(tr.stop, cols.size - 1)
        ]
        hit_or_exit = np.where(tr.hit >= 0, tr.hit, tr.stop)
        lengths = np.where(
            (tr.hit >= 0) | stop_valid,
            tpl.entry[np.arange(cfg.ray_count), np.minimum(hit_or_exit, cols.size - 1)],
            cfg.max_range,
        )
        mean_ray = float(np.minimum(lengths, cfg.max_range).mean())

        move = math.hypot(ax - last[0], ay - last[1])
        if heading is None or move == 0.0:
            turn = 0.0
        else:
            vx, vy = ax - last[0], ay - last[1]
            cross = heading[0] * vy - heading[1] * vx
            dot = heading[0] * vx + heading[1] * vy
            turn = abs(math.atan2(cross, dot))
        denom_b = max(budget.distance, 1e-12)

        out[row, 0] = unknown_count / visible_count if visible_count else 0.0
        out[row, 1] = occlusion_aware / norm
        out[row, 2] = unknown_count / norm
        out[row, 3] = np.count_nonzero(masks.rear_flat[visible]) / norm
        out[row, 4] = rear_entropy / norm
        out[row, 5] = proximity / norm
        out[row, 6] = frontier_visible / norm
        out[row, 7] = frontier_distance
        out[row, 8] = visible_count / norm
        out[row, 9] = hit_ids.size / cfg.ray_count
        out[row, 10] = unknown_count / visible_count if visible_count else 0.0
        out[row, 11] = mean_ray / cfg.max_range
        out[row, 12] = belief.covered_count / norm
        out[row, 13] = move / denom_b
        out[row, 14] = turn / math.pi
        out[row, 15] = (budget.distance - state.travel_cost - move) / denom_b
    return out


def extract(
    state: PathState,
    action: int,
    belief: Belief,
    nodeset: NodeSet,
    budget: Budget,
    cfg: SensorConfig,
) -> FeatureVector:
    """Feature vector for a single candidate action."""
    row = extract_batch(state, [action], belief, nodeset, budget, cfg)[0]
    return FeatureVector(values=row)


def score_batch(
    kind: PolicyKind,
    state: PathState,
    actions: Sequence[int],
    belief: Belief,
    nodeset: NodeSet,
    budget: Budget,
    cfg: SensorConfig,
) -> np.ndarray:
    """Heuristic scores for the actions; the feature column for ``kind``."""
    if kind not in KIND_TO_FEATURE:
        raise ContractViolationError(f"{kind} has no heuristic score")
    matrix = extract_batch(state, actions, belief, nodeset, budget, cfg)
    return matrix[:, KIND_TO_FEATURE[kind]]


def score(
    kind: PolicyKind,
    state: PathState,
    action: int,
    belief: Belief,
    nodeset: NodeSet,
    budget: Budget,
    cfg: SensorConfig,
) -> float:
    return float(score_batch(kind, state, [action], belief, nodeset, budget, cfg)[0])
