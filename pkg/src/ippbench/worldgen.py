"""Ground-truth world generation, sensing-node sampling and dataset files.

Worlds are immutable 2D occupancy grids drawn from named families.  A
dataset is a flat list of (world, node set) instances; the same world may
appear with several independently sampled node sets.  All generation is a
pure function of (spec, seed, index) so datasets can be regenerated
bit-identically on any platform.

Grid conventions used throughout the package:
- ``cells[y, x]`` with ``0 = FREE``, ``1 = OCCUPIED``.
- flat cell id = ``y * width + x``.
- world position ``(x, y)`` in meters maps to cell
  ``(int(x / resolution), int(y / resolution))``; sampled nodes sit on
  cell centers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import ConfigError, DataFormatError, GenerationError

FREE = 0
OCCUPIED = 1

DATASET_FORMAT = "ippdataset"
DATASET_VERSION = 1

# Bounded rejection sampling: shapes are redrawn until they fit the grid.
_MAX_PLACEMENT_TRIES = 200


class WorldFamily(str, Enum):
    """Named world distributions."""

    PARALLEL_LINES = "parallel_lines"
    PERIMETER_BLOCKS = "perimeter_blocks"
    RANDOM_DISKS = "random_disks"
    BLOCK_WORLD = "block_world"

    @classmethod
    def parse(cls, name: str) -> "WorldFamily":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown world family {name!r}") from None


@dataclass(frozen=True)
class WorldMap:
    """Immutable 2D occupancy grid.

    Attributes
    ----------
    width, height:
        Grid dimensions in cells.
    cells:
        uint8 array of shape (height, width); FREE or OCCUPIED.
    resolution:
        Meters per cell.
    id:
        Stable identifier (family, seed and index of the generator call).
    """

    width: int
    height: int
    cells: np.ndarray
    resolution: float = 1.0
    id: str = ""

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise GenerationError("world dimensions must be positive")
        if self.cells.shape != (self.height, self.width):
            raise GenerationError(
                f"cell grid shape {self.cells.shape} does not match "
                f"(height, width)=({self.height}, {self.width})"
            )
        cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if not np.all((cells == FREE) | (cells == OCCUPIED)):
            raise GenerationError("cells must be exactly FREE or OCCUPIED")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    def free_cells(self) -> np.ndarray:
        """Flat ids of all FREE cells."""
        return np.flatnonzero(self.cells.ravel() == FREE)

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.cells == OCCUPIED))


@dataclass(frozen=True)
class NodeSet:
    """Candidate sensing locations; node 0 (``start_index``) is the start.

    ``nodes`` is a float array of shape (n, 2) holding (x, y) positions in
    meters.  Sampled nodes sit on centers of FREE cells and are distinct.
    """

    nodes: np.ndarray
    start_index: int = 0

    def __post_init__(self) -> None:
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or nodes.shape[0] < 1:
            raise GenerationError("nodes must be a non-empty (n, 2) array")
        if not 0 <= self.start_index < nodes.shape[0]:
            raise GenerationError("start_index out of range")
        if len({(float(x), float(y)) for x, y in nodes}) != nodes.shape[0]:
            raise GenerationError("nodes must be distinct")
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)

    def __len__(self) -> int:
        return int(self.nodes.shape[0])

    def position(self, index: int) -> tuple[float, float]:
        x, y = self.nodes[index]
        return float(x), float(y)


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for a dataset: family, counts, grid size and seed.

    ``obstacle_count`` bounds the number of blocks/disks per world
    (inclusive); it is ignored by PARALLEL_LINES.  ``node_sets_per_world``
    repeats node sampling on each world, so the dataset holds
    ``world_count * node_sets_per_world`` instances.
    """

    family: WorldFamily
    world_count: int
    nodes_per_world: int
    width: int = 200
    height: int = 200
    resolution: float = 1.0
    seed: int = 0
    node_sets_per_world: int = 1
    obstacle_count: tuple[int, int] = (8, 12)
    line_thickness: int = 2

    def __post_init__(self) -> None:
        if self.world_count < 1:
            raise ConfigError("world_count must be >= 1")
        if self.nodes_per_world < 2:
            raise ConfigError("nodes_per_world must be >= 2")
        if self.node_sets_per_world < 1:
            raise ConfigError("node_sets_per_world must be >= 1")
        lo, hi = self.obstacle_count
        if lo < 0 or hi < lo:
            raise ConfigError("obstacle_count must be (lo, hi) with 0 <= lo <= hi")


# ---------------------------------------------------------------------------
# Rasterization helpers
# ---------------------------------------------------------------------------

def _stamp_points(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> bool:
    """Mark cells containing the given points; False if any point is outside."""
    ix = np.floor(xs).astype(np.int64)
    iy = np.floor(ys).astype(np.int64)
    h, w = grid.shape
    if ix.min() < 0 or iy.min() < 0 or ix.max() >= w or iy.max() >= h:
        return False
    grid[iy, ix] = OCCUPIED
    return True


def draw_line_pair(
    grid: np.ndarray,
    center: tuple[float, float],
    angle: float,
    length: float,
    separation: float,
    thickness: int,
) -> bool:
    """Rasterize two parallel segments onto ``grid`` (in place).

    The pair is centered at ``center``, rotated by ``angle`` and the two
    segments are ``separation`` cells apart.  Returns False (grid restored
    by the caller redrawing) when the pattern would leave the grid.
    """
    ca, sa = math.cos(angle), math.sin(angle)
    along = np.arange(-length / 2.0, length / 2.0 + 1e-9, 0.3)
    across = np.arange(0.0, max(thickness, 1) - 1e-9, 0.3)
    ok = True
    for side in (-separation / 2.0, separation / 2.0):
        # local coords: u along the line, v across its thickness
        uu, vv = np.meshgrid(along, side + across, indexing="ij")
        xs = center[0] + uu * ca - vv * sa
        ys = center[1] + uu * sa + vv * ca
        ok = _stamp_points(grid, xs.ravel(), ys.ravel()) and ok
    return ok


def _fits(grid: np.ndarray, y0: int, y1: int, x0: int, x1: int, gap: int) -> bool:
    h, w = grid.shape
    gy0, gy1 = max(0, y0 - gap), min(h, y1 + gap)
    gx0, gx1 = max(0, x0 - gap), min(w, x1 + gap)
    return not np.any(grid[gy0:gy1, gx0:gx1] == OCCUPIED)


def _gen_parallel_lines(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    grid = np.zeros((spec.height, spec.width), dtype=np.uint8)
    m = min(spec.width, spec.height)
    for _ in range(_MAX_PLACEMENT_TRIES):
        angle = float(rng.uniform(0.0, 2.0 * math.pi))
        scale = float(rng.uniform(0.7, 1.3))
        # translation confined to the central 60% of the grid
        cx = float(rng.uniform(0.2 * spec.width, 0.8 * spec.width))
        cy = float(rng.uniform(0.2 * spec.height, 0.8 * spec.height))
        length = 0.45 * m * scale
        separation = 0.14 * m * scale
        trial = np.zeros_like(grid)
        if draw_line_pair(trial, (cx, cy), angle, length, separation, spec.line_thickness):
            return trial
    raise GenerationError("could not place parallel lines inside the grid")


def _gen_perimeter_blocks(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """Rectangles hugging the map edges, each a 1-3 cell gap from its edge.

    The narrow gap behind every block is nearly unobservable from inside
    the map, which is what makes this family's information distributed:
    each block is its own island of partially hidden surface.
    """
    grid = np.zeros((spec.height, spec.width), dtype=np.uint8)
    lo, hi = spec.obstacle_count
    count = int(rng.integers(lo, hi + 1))
    m = min(spec.width, spec.height)
    size_lo, size_hi = max(3, round(0.08 * m)), max(4, round(0.16 * m))
    placed = 0
    tries = 0
    while placed < count and tries < _MAX_PLACEMENT_TRIES * max(count, 1):
        tries += 1
        bw = int(rng.integers(size_lo, size_hi + 1))
        bh = int(rng.integers(size_lo, size_hi + 1))
        edge = int(rng.integers(4))
        gap = int(rng.integers(1, 4))
        if edge == 0:
            x0, y0 = gap, int(rng.integers(0, spec.height - bh))
        elif edge == 1:
            x0, y0 = spec.width - gap - bw, int(rng.integers(0, spec.height - bh))
        elif edge == 2:
            x0, y0 = int(rng.integers(0, spec.width - bw)), gap
        else:
            x0, y0 = int(rng.integers(0, spec.width - bw)), spec.height - gap - bh
        if x0 < 0 or y0 < 0 or x0 + bw > spec.width or y0 + bh > spec.height:
            continue
        if not _fits(grid, y0, y0 + bh, x0, x0 + bw, gap=3):
            continue
        grid[y0 : y0 + bh, x0 : x0 + bw] = OCCUPIED
        placed += 1
    return grid


def _gen_scattered_rects(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    grid = np.zeros((spec.height, spec.width), dtype=np.uint8)
    lo, hi = spec.obstacle_count
    count = int(rng.integers(lo, hi + 1))
    m = min(spec.width, spec.height)
    size_lo, size_hi = max(3, round(0.06 * m)), max(4, round(0.13 * m))
    placed = 0
    tries = 0
    while placed < count and tries < _MAX_PLACEMENT_TRIES * max(count, 1):
        tries += 1
        bw = int(rng.integers(size_lo, size_hi + 1))
        bh = int(rng.integers(size_lo, size_hi + 1))
        x0 = int(rng.integers(2, spec.width - bw - 2))
        y0 = int(rng.integers(2, spec.height - bh - 2))
        if not _fits(grid, y0, y0 + bh, x0, x0 + bw, gap=3):
            continue
        grid[y0 : y0 + bh, x0 : x0 + bw] = OCCUPIED
        placed += 1
    return grid


def _gen_disks(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    grid = np.zeros((spec.height, spec.width), dtype=np.uint8)
    lo, hi = spec.obstacle_count
    count = int(rng.integers(lo, hi + 1))
    m = min(spec.width, spec.height)
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
    placed = 0
    tries = 0
    while placed < count and tries < _MAX_PLACEMENT_TRIES * max(count, 1):
        tries += 1
        r = float(rng.uniform(0.035 * m, 0.08 * m))
        cx = float(rng.uniform(r + 2, spec.width - r - 2))
        cy = float(rng.uniform(r + 2, spec.height - r - 2))
        mask = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r
        y0, y1 = int(cy - r - 3), int(cy + r + 4)
        x0, x1 = int(cx - r - 3), int(cx + r + 4)
        if not _fits(grid, max(0, y0), min(spec.height, y1), max(0, x0), min(spec.width, x1), gap=0):
            continue
        grid[mask] = OCCUPIED
        placed += 1
    return grid


# ---------------------------------------------------------------------------
# Public generation API
# ---------------------------------------------------------------------------

def generate_world(spec: DatasetSpec, index: int) -> WorldMap:
    """Generate world ``index`` of the dataset described by ``spec``.

    Deterministic for (spec.seed, index).
    """
    if not 0 <= index < spec.world_count:
        raise ConfigError(f"world index {index} outside [0, {spec.world_count})")
    rng = np.random.default_rng([spec.seed, index])
    if spec.family is WorldFamily.PARALLEL_LINES:
        grid = _gen_parallel_lines(spec, rng)
    elif spec.family is WorldFamily.PERIMETER_BLOCKS:
        grid = _gen_perimeter_blocks(spec, rng)
    elif spec.family is WorldFamily.BLOCK_WORLD:
        grid = _gen_scattered_rects(spec, rng)
    elif spec.family is WorldFamily.RANDOM_DISKS:
        grid = _gen_disks(spec, rng)
    else:  # pragma: no cover - enum is closed
        raise ConfigError(f"unhandled world family {spec.family!r}")
    world_id = f"{spec.family.value}-{spec.seed}-{index:04d}"
    return WorldMap(
        width=spec.width,
        height=spec.height,
        cells=grid,
        resolution=spec.resolution,
        id=world_id,
    )


def sample_nodes(
    world: WorldMap, count: int, seed: int | Sequence[int]
) -> NodeSet:
    """Sample ``count`` distinct sensing nodes uniformly from FREE cells.

    Cells within one cell (8-neighborhood) of an OCCUPIED cell are
    excluded so no sensor starts inside or flush against a surface.  Node
    positions are the centers of the chosen cells; node 0 is the start.
    """
    if count < 1:
        raise ConfigError("node count must be >= 1")
    occ = world.cells == OCCUPIED
    near = occ.copy()
    # 8-neighborhood dilation by axis shifts
    near[1:, :] |= occ[:-1, :]
    near[:-1, :] |= occ[1:, :]
    near[:, 1:] |= near[:, :-1].copy()
    near[:, :-1] |= near[:, 1:].copy()
    eligible = np.flatnonzero(~near.ravel())
    if eligible.size < count:
        raise GenerationError(
            f"cannot sample {count} nodes: only {eligible.size} eligible cells"
        )
    rng = np.random.default_rng(seed)
    chosen = eligible[rng.choice(eligible.size, size=count, replace=False)]
    ys, xs = np.divmod(chosen, world.width)
    nodes = np.stack(
        [(xs + 0.5) * world.resolution, (ys + 0.5) * world.resolution], axis=1
    )
    return NodeSet(nodes=nodes, start_index=0)


def generate_dataset(spec: DatasetSpec) -> list[tuple[WorldMap, NodeSet]]:
    """All instances of the dataset: worlds crossed with node sets."""
    instances = []
    for index in range(spec.world_count):
        world = generate_world(spec, index)
        for j in range(spec.node_sets_per_world):
            nodes = sample_nodes(world, spec.nodes_per_world, seed=[spec.seed, index, j])
            instances.append((world, nodes))
    return instances


# ---------------------------------------------------------------------------
# Dataset file format (versioned text container)
# ---------------------------------------------------------------------------
#
#   ippdataset v1
#   instances <n>
#   instance <k>
#   world <id> <width> <height> <resolution>
#   rle <token...>          run-length encoding, row-major: F<len> / O<len>
#   nodes <count> <start_index>
#   <x> <y>                 one node per line, repr() floats
#   end
#
# The trailing "end" guards against truncation.

def _rle_encode(cells: np.ndarray) -> str:
    flat = cells.ravel()
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [flat.size]))
    tokens = [
        ("O" if flat[s] == OCCUPIED else "F") + str(e - s)
        for s, e in zip(starts, ends)
    ]
    return " ".join(tokens)


def _rle_decode(tokens: Iterable[str], width: int, height: int, lineno: int) -> np.ndarray:
    out = np.empty(width * height, dtype=np.uint8)
    pos = 0
    for tok in tokens:
        if len(tok) < 2 or tok[0] not in "FO":
            raise DataFormatError(f"line {lineno}: bad rle token {tok!r}")
        try:
            run = int(tok[1:])
        except ValueError:
            raise DataFormatError(f"line {lineno}: bad rle length in {tok!r}") from None
        if run <= 0 or pos + run > out.size:
            raise DataFormatError(f"line {lineno}: rle runs exceed grid size")
        out[pos : pos + run] = OCCUPIED if tok[0] == "O" else FREE
        pos += run
    if pos != out.size:
        raise DataFormatError(f"line {lineno}: rle covers {pos} of {out.size} cells")
    return out.reshape(height, width)


def save_dataset(path: str, instances: Sequence[tuple[WorldMap, NodeSet]]) -> None:
    """Write instances to ``path`` in the versioned text format."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{DATASET_FORMAT} v{DATASET_VERSION}\n")
        fh.write(f"instances {len(instances)}\n")
        for k, (world, nodeset) in enumerate(instances):
            fh.write(f"instance {k}\n")
            fh.write(
                f"world {world.id or 'unnamed'} {world.width} {world.height} "
                f"{world.resolution!r}\n"
            )
            fh.write(f"rle {_rle_encode(world.cells)}\n")
            fh.write(f"nodes {len(nodeset)} {nodeset.start_index}\n")
            for x, y in nodeset.nodes:
                fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write("end\n")


class _LineReader:
    def __init__(self, fh: TextIO):
        self._lines = fh.read().splitlines()
        self.lineno = 0

    def next(self, expect: str | None = None) -> str:
        if self.lineno >= len(self._lines):
            raise DataFormatError(f"line {self.lineno + 1}: unexpected end of file")
        line = self._lines[self.lineno]
        self.lineno += 1
        if expect is not None and not line.startswith(expect):
            raise DataFormatError(
                f"line {self.lineno}: expected {expect!r}, found {line[:40]!r}"
            )
        return line


def load_dataset(path: str) -> list[tuple[WorldMap, NodeSet]]:
    """Read a dataset written by :func:`save_dataset`; lossless round-trip."""
    with open(path, "r", encoding="ascii") as fh:
        rd = _LineReader(fh)
        header = rd.next(DATASET_FORMAT).split()
        if len(header) != 2 or header[1] != f"v{DATASET_VERSION}":
            raise DataFormatError(f"line 1: unsupported dataset header {header}")
        count_parts = rd.next("instances").split()
        try:
            n = int(count_parts[1])
        except (IndexError, ValueError):
            raise DataFormatError("line 2: bad instance count") from None
        instances: list[tuple[WorldMap, NodeSet]] = []
        for k in range(n):
            rd.next(f"instance {k}")
            wparts = rd.next("world ").split()
            if len(wparts) != 5:
                raise DataFormatError(f"line {rd.lineno}: bad world header")
            try:
                width, height = int(wparts[2]), int(wparts[3])
                resolution = float(wparts[4])
            except ValueError:
                raise DataFormatError(f"line {rd.lineno}: bad world dimensions") from None
            rle_line = rd.next("rle")
            cells = _rle_decode(rle_line.split()[1:], width, height, rd.lineno)
            nparts = rd.next("nodes").split()
            try:
                node_count, start_index = int(nparts[1]), int(nparts[2])
            except (IndexError, ValueError):
                raise DataFormatError(f"line {rd.lineno}: bad nodes header") from None
            coords = np.empty((node_count, 2), dtype=np.float64)
            for i in range(node_count):
                parts = rd.next().split()
                if len(parts) != 2:
                    raise DataFormatError(f"line {rd.lineno}: bad node line")
                try:
                    coords[i] = (float(parts[0]), float(parts[1]))
                except ValueError:
                    raise DataFormatError(f"line {rd.lineno}: bad node coords") from None
            world = WorldMap(
                width=width, height=height, cells=cells,
                resolution=resolution, id=wparts[1],
            )
            instances.append((world, NodeSet(nodes=coords, start_index=start_index)))
        rd.next("end")
    return instances


def dataset_content_hash(path: str) -> str:
    """sha256 of the dataset file bytes (used in run manifests)."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()
