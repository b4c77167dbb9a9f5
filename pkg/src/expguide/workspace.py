"""Occupancy-grid worlds, decomposition into local 8x8 blocks, and the
desk-scale scene/problem generators.

Grid conventions: occupancy has shape (W_x, W_y); cell (i, j) covers the
half-open world square [origin + i*cell, origin + (i+1)*cell) on each axis.
Block bit order is row-major over the (x, y) cell offsets inside a block:
bit k maps to cell offset (k // 8, k % 8).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import geom
from .util import SceneGenerationError, derive_rng

BLOCK_SIDE_CELLS = 8
BLOCK_BITS = BLOCK_SIDE_CELLS * BLOCK_SIDE_CELLS

FAMILIES = ("gap-wall", "shelf2d", "thin-shelf2d", "table2d", "cage2d")


@dataclass(frozen=True)
class Workspace:
    """Dense binary occupancy grid placed in the world."""

    origin: tuple
    cell_size: float
    occupancy: np.ndarray

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        occ = np.ascontiguousarray(np.asarray(self.occupancy, dtype=bool))
        occ.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)
        nx, ny = occ.shape
        if nx % BLOCK_SIDE_CELLS or ny % BLOCK_SIDE_CELLS:
            raise ValueError(
                f"grid dims {occ.shape} not divisible by block side {BLOCK_SIDE_CELLS}"
            )

    @property
    def dims(self) -> tuple:
        return self.occupancy.shape

    @property
    def bounds(self) -> np.ndarray:
        """[[x_lo, x_hi], [y_lo, y_hi]] world extents."""
        o = np.asarray(self.origin, dtype=float)
        hi = o + self.cell_size * np.asarray(self.occupancy.shape)
        return np.stack([o, hi], axis=1)

    @property
    def block_side(self) -> float:
        return BLOCK_SIDE_CELLS * self.cell_size


@dataclass(frozen=True)
class LocalWorkspace:
    """One non-empty 8x8 occupancy block: 64 bits b and world center v."""

    b: np.ndarray
    v: np.ndarray
    side: float

    def __post_init__(self):
        b = np.ascontiguousarray(np.asarray(self.b, dtype=np.uint8))
        if b.shape != (BLOCK_BITS,):
            raise ValueError(f"b must hold {BLOCK_BITS} bits, got {b.shape}")
        b.flags.writeable = False
        object.__setattr__(self, "b", b)
        v = np.asarray(self.v, dtype=float).copy()
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    def packed(self) -> bytes:
        """b packed to 8 bytes; used for exact-match keys and file records."""
        return np.packbits(self.b).tobytes()


@dataclass(frozen=True)
class MotionProblem:
    """One planning problem: endpoints, world, and the problem's chain."""

    x_start: np.ndarray
    x_goal: np.ndarray
    world: Workspace
    chain: geom.KinematicChain
    family: str = ""
    seed: int = 0


def decompose(world: Workspace) -> list:
    """Non-overlapping 8x8 blocks of the grid that contain occupied cells.

    Emits (b, v) with v at the geometric center; blocks are scanned in
    row-major (x, then y) block order.
    """
    occ = world.occupancy
    nx, ny = occ.shape
    side = world.block_side
    origin = np.asarray(world.origin, dtype=float)
    out = []
    for bi in range(nx // BLOCK_SIDE_CELLS):
        for bj in range(ny // BLOCK_SIDE_CELLS):
            block = occ[
                bi * BLOCK_SIDE_CELLS : (bi + 1) * BLOCK_SIDE_CELLS,
                bj * BLOCK_SIDE_CELLS : (bj + 1) * BLOCK_SIDE_CELLS,
            ]
            if not block.any():
                continue
            v = origin + side * (np.array([bi, bj]) + 0.5)
            out.append(
                LocalWorkspace(block.flatten().astype(np.uint8), v, side)
            )
    return out


def contains(lw: LocalWorkspace, p) -> bool:
    """True iff p lies in the block's box: low side inclusive, high exclusive.

    Adjacent blocks therefore partition the plane.
    """
    p = np.asarray(p, dtype=float)
    half = 0.5 * lw.side
    return bool(np.all(p >= lw.v - half) and np.all(p < lw.v + half))


def save_grid(world: Workspace, path) -> None:
    """Portable text grid file: header then one row of 0/1 chars per x index."""
    nx, ny = world.dims
    with open(path, "w") as f:
        f.write("expgrid 1\n")
        f.write(f"dims {nx} {ny}\n")
        f.write(f"cell_size {world.cell_size!r}\n")
        f.write(f"origin {world.origin[0]!r} {world.origin[1]!r}\n")
        for i in range(nx):
            f.write("".join("1" if v else "0" for v in world.occupancy[i]) + "\n")


def load_grid(path) -> Workspace:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != "expgrid 1":
        raise ValueError(f"{path}: not an expgrid v1 file")
    nx, ny = (int(t) for t in lines[1].split()[1:])
    cell = float(lines[2].split()[1])
    origin = tuple(float(t) for t in lines[3].split()[1:])
    rows = lines[4 : 4 + nx]
    if len(rows) != nx or any(len(r) != ny for r in rows):
        raise ValueError(f"{path}: grid body does not match declared dims")
    occ = np.array([[c == "1" for c in row] for row in rows], dtype=bool)
    return Workspace(origin, cell, occ)


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------

DEFAULT_RANGES = {
    "gap-wall": {
        "wall_x_cell": (15, 17),
        "slot_cells": (3, 4),
        "slot_y_cell": (5, 23),
        "clutter_boxes": (1, 1),
        "base_x": (1.05, 1.25),
        "base_y": (1.8, 2.2),
        "base_theta": (-0.15, 0.15),
    },
    "shelf2d": {
        "wall_x_cell": (15, 17),
        "slot_cells": (3, 4),
        "slot_lo_y_cell": (4, 10),
        "slot_hi_y_cell": (18, 24),
        "base_x": (1.05, 1.25),
        "base_y": (1.8, 2.2),
        "base_theta": (-0.15, 0.15),
    },
    "thin-shelf2d": {
        "wall_x_cell": (15, 17),
        "slot_cells": (2, 3),
        "slot_lo_y_cell": (4, 10),
        "slot_hi_y_cell": (18, 24),
        "divider_len_cells": (5, 7),
        "base_x": (1.05, 1.25),
        "base_y": (1.8, 2.2),
        "base_theta": (-0.15, 0.15),
    },
    "table2d": {
        "slab_x0_cell": (8, 11),
        "slab_x1_cell": (21, 24),
        "slab_y_cell": (13, 14),
        "clutter_boxes": (1, 2),
        "base_x": (1.6, 2.4),
        "base_y": (0.8, 1.2),
        "base_theta": (-0.15, 0.15),
    },
    "cage2d": {
        "cage_side_cells": (9, 11),
        "center_x_cell": (18, 22),
        "center_y_cell": (13, 19),
        "opening_cells": (3, 4),
        "base_x": (0.9, 1.3),
        "base_y": (1.8, 2.2),
        "base_theta": (-0.15, 0.15),
    },
}

TUCK_ANGLE = 2.6  # folded pose: every joint bent by the same angle


@dataclass(frozen=True)
class SceneSpec:
    """Everything a family generator needs; seed fully determines the output."""

    family: str
    seed: int
    chain_template: geom.KinematicChain
    grid_cells: tuple = (32, 32)
    cell_size: float = 0.125
    origin: tuple = (0.0, 0.0)
    ranges: dict = field(default_factory=dict)
    scene_attempts: int = 100
    goal_attempts: int = 2000

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        merged = dict(DEFAULT_RANGES[self.family])
        merged.update(self.ranges)
        for key, (lo, hi) in merged.items():
            if hi < lo:
                raise ValueError(f"range {key} is degenerate: {lo} > {hi}")
        object.__setattr__(self, "ranges", merged)


def _fill(occ, x0, x1, y0, y1):
    """Set cells [x0, x1) x [y0, y1), clipped to the grid."""
    nx, ny = occ.shape
    occ[max(x0, 0) : min(x1, nx), max(y0, 0) : min(y1, ny)] = True


def _loint(rng, lo, hi):
    return int(rng.integers(lo, hi + 1))


def _jitter_base(rng, spec: SceneSpec) -> geom.KinematicChain:
    r = spec.ranges
    bx = rng.uniform(*r["base_x"])
    by = rng.uniform(*r["base_y"])
    bt = rng.uniform(*r["base_theta"])
    return replace(spec.chain_template, base_xy=(bx, by), base_theta=bt)


def _layout_gap_wall(rng, spec, occ):
    r = spec.ranges
    nx, ny = occ.shape
    wx = _loint(rng, *r["wall_x_cell"])
    h = _loint(rng, *r["slot_cells"])
    sy = _loint(rng, *r["slot_y_cell"])
    _fill(occ, wx, wx + 2, 0, ny)
    occ[wx : wx + 2, sy : sy + h] = False
    for _ in range(_loint(rng, *r["clutter_boxes"])):
        cx = _loint(rng, 2, 10)
        cy = _loint(rng, 2, 28)
        _fill(occ, cx, cx + 2, cy, cy + 2)
    wall_hi = (wx + 2) * spec.cell_size
    slot_mid = (sy + 0.5 * h) * spec.cell_size
    return {"wall_hi": wall_hi, "slot_mid": slot_mid}


def _layout_shelves(rng, spec, occ, thin: bool):
    r = spec.ranges
    nx, ny = occ.shape
    wx = _loint(rng, *r["wall_x_cell"])
    h1 = _loint(rng, *r["slot_cells"])
    h2 = _loint(rng, *r["slot_cells"])
    y1 = _loint(rng, *r["slot_lo_y_cell"])
    y2 = _loint(rng, *r["slot_hi_y_cell"])
    _fill(occ, wx, wx + 2, 0, ny)
    occ[wx : wx + 2, y1 : y1 + h1] = False
    occ[wx : wx + 2, y2 : y2 + h2] = False
    pick_hi = bool(rng.integers(0, 2))
    if thin:
        dl = _loint(rng, *r["divider_len_cells"])
        dy = (y1 + h1 + y2) // 2
        _fill(occ, wx + 2, wx + 2 + dl, dy, dy + 2)
    sy, h = (y2, h2) if pick_hi else (y1, h1)
    wall_hi = (wx + 2) * spec.cell_size
    slot_mid = (sy + 0.5 * h) * spec.cell_size
    return {"wall_hi": wall_hi, "slot_mid": slot_mid}


def _layout_table(rng, spec, occ):
    r = spec.ranges
    x0 = _loint(rng, *r["slab_x0_cell"])
    x1 = _loint(rng, *r["slab_x1_cell"])
    y = _loint(rng, *r["slab_y_cell"])
    _fill(occ, x0, x1, y, y + 2)
    for _ in range(_loint(rng, *r["clutter_boxes"])):
        w = _loint(rng, 2, 3)
        cx = _loint(rng, x0 + 1, max(x0 + 1, x1 - 1 - w))
        _fill(occ, cx, cx + w, y + 2, y + 4)
    return {
        "slab_x": ((x0) * spec.cell_size, x1 * spec.cell_size),
        "slab_top": (y + 2) * spec.cell_size,
    }


def _layout_cage(rng, spec, occ):
    r = spec.ranges
    s = _loint(rng, *r["cage_side_cells"])
    cx = _loint(rng, *r["center_x_cell"])
    cy = _loint(rng, *r["center_y_cell"])
    half = s // 2
    x0, x1 = cx - half, cx - half + s
    y0, y1 = cy - half, cy - half + s
    _fill(occ, x0, x1, y0, y0 + 1)
    _fill(occ, x0, x1, y1 - 1, y1)
    _fill(occ, x0, x0 + 1, y0, y1)
    _fill(occ, x1 - 1, x1, y0, y1)
    w = _loint(rng, *r["opening_cells"])
    side = int(rng.integers(0, 3))  # 0 left, 1 top, 2 bottom
    off = _loint(rng, 1, max(1, s - 1 - w))
    if side == 0:
        occ[x0 : x0 + 1, y0 + off : y0 + off + w] = False
    elif side == 1:
        occ[x0 + off : x0 + off + w, y1 - 1 : y1] = False
    else:
        occ[x0 + off : x0 + off + w, y0 : y0 + 1] = False
    c = spec.cell_size
    return {
        "inner": ((x0 + 2) * c, (x1 - 2) * c, (y0 + 2) * c, (y1 - 2) * c),
    }


def _goal_box(spec, info, bounds, reach, base_xy):
    fam = spec.family
    if fam in ("gap-wall", "shelf2d", "thin-shelf2d"):
        x_lo = info["wall_hi"] + 0.1
        x_hi = min(bounds[0, 1] - 0.1, base_xy[0] + reach - 0.05)
        y_lo = max(bounds[1, 0] + 0.1, info["slot_mid"] - 0.45)
        y_hi = min(bounds[1, 1] - 0.1, info["slot_mid"] + 0.45)
    elif fam == "table2d":
        x_lo = info["slab_x"][0] + 0.1
        x_hi = info["slab_x"][1] - 0.1
        y_lo = info["slab_top"] + 0.15
        y_hi = min(bounds[1, 1] - 0.1, info["slab_top"] + 0.6)
    else:  # cage2d
        x_lo, x_hi, y_lo, y_hi = info["inner"]
    if x_hi <= x_lo or y_hi <= y_lo:
        return None
    return np.array([[x_lo, x_hi], [y_lo, y_hi]])


def _sample_tip_in_box(rng, chain, world, box, attempts):
    lim = chain.limits_array
    for _ in range(attempts):
        q = rng.uniform(lim[:, 0], lim[:, 1])
        tip = geom.forward_kinematics(chain, q)[-1]
        if not (np.all(tip >= box[:, 0]) and np.all(tip <= box[:, 1])):
            continue
        if not geom.in_collision(world, chain, q):
            return q
    return None


def _sample_valid(rng, chain, world, attempts):
    lim = chain.limits_array
    for _ in range(attempts):
        q = rng.uniform(lim[:, 0], lim[:, 1])
        if not geom.in_collision(world, chain, q):
            return q
    return None


def generate_scene(spec: SceneSpec) -> MotionProblem:
    """Generate one problem with collision-free endpoints.

    x_start is the folded tuck configuration except for table2d, where it
    is a random valid configuration. x_goal is rejection-sampled so the
    end-effector tip lands in the family's goal box. Raises
    SceneGenerationError (carrying the seed) when the budget runs out.
    """
    rng = derive_rng(spec.seed, "scene", spec.family)
    layouts = {
        "gap-wall": _layout_gap_wall,
        "shelf2d": lambda r, s, o: _layout_shelves(r, s, o, thin=False),
        "thin-shelf2d": lambda r, s, o: _layout_shelves(r, s, o, thin=True),
        "table2d": _layout_table,
        "cage2d": _layout_cage,
    }[spec.family]

    for _ in range(spec.scene_attempts):
        occ = np.zeros(spec.grid_cells, dtype=bool)
        chain = _jitter_base(rng, spec)
        info = layouts(rng, spec, occ)
        world = Workspace(spec.origin, spec.cell_size, occ)

        if spec.family == "table2d":
            x_start = _sample_valid(rng, chain, world, 500)
        else:
            x_start = np.full(chain.dof, TUCK_ANGLE)
            if geom.in_collision(world, chain, x_start):
                x_start = None
        if x_start is None:
            continue

        box = _goal_box(spec, info, world.bounds, chain.reach, chain.base_xy)
        if box is None:
            continue
        x_goal = _sample_tip_in_box(rng, chain, world, box, spec.goal_attempts)
        if x_goal is None:
            continue
        return MotionProblem(
            np.asarray(x_start, dtype=float),
            np.asarray(x_goal, dtype=float),
            world,
            chain,
            family=spec.family,
            seed=spec.seed,
        )
    raise SceneGenerationError(
        f"could not generate a valid {spec.family} problem", spec.seed
    )
