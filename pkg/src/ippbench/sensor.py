"""Raycast sensor and the three-state evidence belief.

Rays are marched on the integer grid with exact line stepping.  Because
every node sits on a cell center, the visited-cell pattern of a ray only
depends on the ray angle, so the offsets are computed once per sensor
configuration (a "ray template") and all raycasts reduce to vectorized
numpy gathers.  Ties at cell corners step into the lower-index cell
first, which also rules out diagonal corner tunneling.

The belief is the full measurement history plus an evidence grid folded
from it: UNKNOWN until observed, then KNOWN_FREE or KNOWN_OCCUPIED.  The
sensor is noise-free, so evidence never contradicts the world and never
reverts to UNKNOWN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SensingError
from .worldgen import FREE, OCCUPIED, NodeSet, WorldMap

UNKNOWN = 0
KNOWN_FREE = 1
KNOWN_OCCUPIED = 2


@dataclass(frozen=True)
class SensorConfig:
    """Simulated laser parameters; ``max_range`` is measured in cells."""

    ray_count: int = 64
    max_range: float = 30.0

    def __post_init__(self) -> None:
        if self.ray_count < 1 or self.max_range <= 0:
            raise SensingError("ray_count must be >= 1 and max_range > 0")


@dataclass(frozen=True)
class RayTemplate:
    """Per-angle cell offsets relative to the origin cell, padded to ``L``.

    ``dx, dy``: int32 (R, L) offsets in visit order (origin cell excluded).
    ``entry``: float64 (R, L) distance at which each cell is entered.
    ``valid``: bool (R, L) padding mask.
    """

    dx: np.ndarray
    dy: np.ndarray
    entry: np.ndarray
    valid: np.ndarray


_TEMPLATES: dict[tuple[int, float], RayTemplate] = {}


def _march_single_ray(angle: float, max_range: float) -> tuple[list, list, list]:
    ddx, ddy = math.cos(angle), math.sin(angle)
    sx = 1 if ddx > 0 else -1
    sy = 1 if ddy > 0 else -1
    tdx = abs(1.0 / ddx) if ddx != 0 else math.inf
    tdy = abs(1.0 / ddy) if ddy != 0 else math.inf
    tmx = 0.5 * tdx  # start at the cell center, boundary half a cell away
    tmy = 0.5 * tdy
    ix = iy = 0
    xs: list[int] = []
    ys: list[int] = []
    ts: list[float] = []
    while True:
        if tmx < tmy:
            step_x = True
        elif tmy < tmx:
            step_x = False
        else:
            # corner tie: enter the lower flat-index cell first
            step_x = sy > 0
        t_entry = tmx if step_x else tmy
        if t_entry > max_range:
            return xs, ys, ts
        if step_x:
            ix += sx
            tmx += tdx
        else:
            iy += sy
            tmy += tdy
        xs.append(ix)
        ys.append(iy)
        ts.append(t_entry)


def ray_template(cfg: SensorConfig) -> RayTemplate:
    """Build (or fetch the cached) template for a sensor configuration."""
    key = (cfg.ray_count, cfg.max_range)
    cached = _TEMPLATES.get(key)
    if cached is not None:
        return cached
    per_ray = [
        _march_single_ray(2.0 * math.pi * r / cfg.ray_count, cfg.max_range)
        for r in range(cfg.ray_count)
    ]
    longest = max(len(xs) for xs, _, _ in per_ray)
    dx = np.zeros((cfg.ray_count, longest), dtype=np.int32)
    dy = np.zeros_like(dx)
    entry = np.full((cfg.ray_count, longest), np.inf)
    valid = np.zeros((cfg.ray_count, longest), dtype=bool)
    for r, (xs, ys, ts) in enumerate(per_ray):
        n = len(xs)
        dx[r, :n] = xs
        dy[r, :n] = ys
        entry[r, :n] = ts
        valid[r, :n] = True
    tpl = RayTemplate(dx=dx, dy=dy, entry=entry, valid=valid)
    _TEMPLATES[key] = tpl
    return tpl


@dataclass(frozen=True)
class RayTrace:
    """Raw per-ray march against one blocking grid.

    ``flat``: flat cell ids (junk where not in-bounds), ``inbounds``: cells
    on the grid, ``traversed``: non-blocking prefix of each ray, ``hit``:
    index of the blocking cell per ray (-1 if the ray ended without one),
    ``stop``: exclusive end of the traversed prefix.
    """

    flat: np.ndarray
    inbounds: np.ndarray
    traversed: np.ndarray
    hit: np.ndarray
    stop: np.ndarray

    def hit_flat_ids(self) -> np.ndarray:
        rows = np.flatnonzero(self.hit >= 0)
        return self.flat[rows, self.hit[rows]]


def trace_rays(
    blocked: np.ndarray, cell_x: int, cell_y: int, tpl: RayTemplate
) -> RayTrace:
    """March every template ray from (cell_x, cell_y) over ``blocked``.

    ``blocked`` is a boolean (height, width) grid; a ray records the cells
    it traverses until it enters a blocked cell (the hit) or leaves the
    grid / exceeds its range.
    """
    h, w = blocked.shape
    xs = tpl.dx + cell_x
    ys = tpl.dy + cell_y
    inb = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h) & tpl.valid
    flat = np.clip(ys, 0, h - 1) * w + np.clip(xs, 0, w - 1)
    blk = blocked.ravel()[flat] & inb
    length = tpl.dx.shape[1]
    cols = np.arange(length)
    not_inb = ~inb
    first_out = np.where(not_inb.any(axis=1), not_inb.argmax(axis=1), length)
    blk_before = blk & (cols[None, :] < first_out[:, None])
    has_hit = blk_before.any(axis=1)
    hit = np.where(has_hit, blk_before.argmax(axis=1), -1)
    stop = np.where(has_hit, hit, first_out)
    traversed = cols[None, :] < stop[:, None]
    return RayTrace(flat=flat, inbounds=inb, traversed=traversed, hit=hit, stop=stop)


@dataclass(frozen=True)
class Measurement:
    """One sensing action: deduplicated hit and traversed cells.

    ``hits`` are flat ids of OCCUPIED cells struck by rays;
    ``free_traversed`` are flat ids of FREE cells crossed on the way.
    Both are sorted unique int64 arrays over the paired world's grid.
    """

    node: tuple[float, float]
    hits: np.ndarray
    free_traversed: np.ndarray
    ray_count: int
    max_range: float
    grid_shape: tuple[int, int]


def position_cell(world: WorldMap, position: Sequence[float]) -> tuple[int, int]:
    x, y = float(position[0]), float(position[1])
    ix = int(math.floor(x / world.resolution))
    iy = int(math.floor(y / world.resolution))
    if not (0 <= ix < world.width and 0 <= iy < world.height):
        raise SensingError(f"position {(x, y)} outside the grid")
    return ix, iy


def raycast(
    world: WorldMap, node: Sequence[float], cfg: SensorConfig
) -> Measurement:
    """Measure the world from ``node``: deterministic 360-degree raycast."""
    ix, iy = position_cell(world, node)
    if world.cells[iy, ix] != FREE:
        raise SensingError(f"sensing node {tuple(node)} lies in an OCCUPIED cell")
    tr = trace_rays(world.cells == OCCUPIED, ix, iy, ray_template(cfg))
    hits = np.unique(tr.hit_flat_ids()).astype(np.int64)
    free = np.unique(tr.flat[tr.traversed]).astype(np.int64)
    return Measurement(
        node=(float(node[0]), float(node[1])),
        hits=hits,
        free_traversed=free,
        ray_count=cfg.ray_count,
        max_range=cfg.max_range,
        grid_shape=(world.height, world.width),
    )


# ---------------------------------------------------------------------------
# Belief
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Belief:
    """History of (state node, action node, measurement) plus its fold.

    ``evidence`` is exactly the fold of all measurements in ``history``
    over an all-UNKNOWN grid; ``covered`` is the union of their hits.
    Instances are immutable; :func:`update_belief` returns a new value.
    """

    width: int
    height: int
    history: tuple[tuple[int, int, Measurement], ...]
    evidence: np.ndarray
    covered: np.ndarray
    resolution: float = 1.0

    def __post_init__(self) -> None:
        self.evidence.flags.writeable = False
        self.covered.flags.writeable = False

    @property
    def covered_count(self) -> int:
        return int(np.count_nonzero(self.covered))

    def known_count(self) -> int:
        return int(np.count_nonzero(self.evidence != UNKNOWN))


def empty_belief(width: int, height: int, resolution: float = 1.0) -> Belief:
    return Belief(
        width=width,
        height=height,
        history=(),
        evidence=np.zeros((height, width), dtype=np.uint8),
        covered=np.zeros(width * height, dtype=bool),
        resolution=resolution,
    )


def update_belief(
    belief: Belief, state_node: int, action_node: int, meas: Measurement
) -> Belief:
    """Fold one measurement into the belief (pure, idempotent)."""
    evidence = belief.evidence.copy()
    flat = evidence.ravel()
    flat[meas.free_traversed] = KNOWN_FREE
    flat[meas.hits] = KNOWN_OCCUPIED
    covered = belief.covered.copy()
    covered[meas.hits] = True
    return Belief(
        width=belief.width,
        height=belief.height,
        history=belief.history + ((state_node, action_node, meas),),
        evidence=evidence,
        covered=covered,
        resolution=belief.resolution,
    )


def initial_belief(world: WorldMap, nodeset: NodeSet, cfg: SensorConfig) -> Belief:
    """Belief after sensing at the start node (the robot starts there)."""
    start = nodeset.start_index
    meas = raycast(world, nodeset.position(start), cfg)
    return update_belief(
        empty_belief(world.width, world.height, world.resolution), start, start, meas
    )
