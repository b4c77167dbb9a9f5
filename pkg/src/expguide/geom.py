"""Planar kinematic chain: forward kinematics, workspace projections,
collision and edge validity against occupancy-grid worlds.

Conventions used throughout the package:
  * a configuration q is a float64 vector of joint angles (radians),
  * the C-space metric is the unweighted Euclidean norm on q,
  * workspace dimension is 2 (all shapes carry it as a parameter so a
    third axis is a config change, not a rewrite).
"""

from dataclasses import dataclass, field

import numpy as np

from .util import JointLimitError


@dataclass(frozen=True)
class KinematicChain:
    """Planar chain of revolute joints, one link per joint.

    link_lengths are world units; joint_limits is a (D, 2) array of
    [lo, hi] radians; base_xy/base_theta place the chain in the world.
    """

    link_lengths: tuple
    joint_limits: tuple
    base_xy: tuple = (0.0, 0.0)
    base_theta: float = 0.0

    def __post_init__(self):
        if len(self.link_lengths) < 2:
            raise ValueError("chain needs at least 2 joints")
        if any(l <= 0 for l in self.link_lengths):
            raise ValueError("link lengths must be positive")
        if len(self.joint_limits) != len(self.link_lengths):
            raise ValueError("one [lo, hi] limit pair per joint required")
        for lo, hi in self.joint_limits:
            if not lo < hi:
                raise ValueError(f"degenerate joint limit [{lo}, {hi}]")

    @property
    def dof(self) -> int:
        return len(self.link_lengths)

    @property
    def limits_array(self) -> np.ndarray:
        return np.asarray(self.joint_limits, dtype=float)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    def within_limits(self, q) -> bool:
        q = np.asarray(q, dtype=float)
        lim = self.limits_array
        return bool(np.all(q >= lim[:, 0]) and np.all(q <= lim[:, 1]))


@dataclass(frozen=True)
class ProjectionSet:
    """Workspace projections of a configuration.

    Projection p (p = 1..D) is the world position of the end of link p;
    the final projection is the end-effector tip (coincident with the end
    of link D for this chain model). Count defaults to D + 1 and the
    column order of project() follows this definition.
    """

    dof: int
    include_tip: bool = True

    @property
    def count(self) -> int:
        return self.dof + (1 if self.include_tip else 0)


def fk_positions(lengths, base_xy, base_theta, q) -> np.ndarray:
    """Link-end positions for joint angles q; lengths may include zeros.

    Returns an array (D, 2): position k is the end of link k, computed by
    cumulative rotation from the base pose.
    """
    q = np.asarray(q, dtype=float)
    lengths = np.asarray(lengths, dtype=float)
    if q.shape != lengths.shape:
        raise ValueError(f"expected {lengths.shape[0]} joint angles, got {q.shape}")
    ang = base_theta + np.cumsum(q)
    steps = lengths[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return np.asarray(base_xy, dtype=float) + np.cumsum(steps, axis=0)


def forward_kinematics(chain: KinematicChain, q) -> np.ndarray:
    """World positions of every link end for configuration q, shape (D, 2)."""
    return fk_positions(chain.link_lengths, chain.base_xy, chain.base_theta, q)


def fk_batch(chain: KinematicChain, Q) -> np.ndarray:
    """Joint positions for a batch of configurations.

    Q has shape (n, D); the result has shape (n, D + 1, 2) and includes the
    base position as joint 0.
    """
    Q = np.asarray(Q, dtype=float)
    ang = chain.base_theta + np.cumsum(Q, axis=1)
    L = np.asarray(chain.link_lengths, dtype=float)
    steps = L[None, :, None] * np.stack([np.cos(ang), np.sin(ang)], axis=2)
    joints = np.empty((Q.shape[0], chain.dof + 1, 2))
    joints[:, 0, :] = chain.base_xy
    joints[:, 1:, :] = chain.base_xy + np.cumsum(steps, axis=1)
    return joints


def project(chain: KinematicChain, projset: ProjectionSet, q) -> np.ndarray:
    """Stacked workspace projections of q, shape (2, P).

    Column p is the end of link p + 1; the last column is the tip.
    """
    ends = forward_kinematics(chain, q)
    cols = [ends[p] for p in range(chain.dof)]
    if projset.include_tip:
        cols.append(ends[-1])
    return np.stack(cols, axis=1)


def _link_sample_params(chain: KinematicChain, cell_size: float):
    """Interpolation fractions along each link at half-cell arc resolution."""
    eps_c = 0.5 * cell_size
    ts, link_idx = [], []
    for k, L in enumerate(chain.link_lengths):
        m = max(int(np.ceil(L / eps_c)), 1) + 1
        ts.append(np.linspace(0.0, 1.0, m))
        link_idx.append(np.full(m, k))
    return np.concatenate(ts), np.concatenate(link_idx)


def _points_in_collision(world, pts: np.ndarray) -> np.ndarray:
    """Per-point occupancy test; points outside the grid count as colliding."""
    rel = (pts - np.asarray(world.origin)) / world.cell_size
    cells = np.floor(rel).astype(int)
    nx, ny = world.occupancy.shape
    outside = (
        (cells[..., 0] < 0)
        | (cells[..., 0] >= nx)
        | (cells[..., 1] < 0)
        | (cells[..., 1] >= ny)
    )
    cx = np.clip(cells[..., 0], 0, nx - 1)
    cy = np.clip(cells[..., 1], 0, ny - 1)
    return outside | world.occupancy[cx, cy]


def in_collision_batch(world, chain: KinematicChain, Q) -> np.ndarray:
    """Vectorized in_collision over rows of Q (no joint-limit checking).

    Links are treated as line segments sampled at arc resolution of half
    the grid cell size; a configuration collides when any sample lands in
    an occupied cell or leaves the grid.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    joints = fk_batch(chain, Q)
    ts, link_idx = _link_sample_params(chain, world.cell_size)
    a = joints[:, link_idx, :]
    b = joints[:, link_idx + 1, :]
    pts = a + ts[None, :, None] * (b - a)
    return _points_in_collision(world, pts).any(axis=1)


def in_collision(world, chain: KinematicChain, q) -> bool:
    """True iff any link segment of q touches occupied or out-of-grid space.

    Raises JointLimitError for q outside the joint limits so callers can
    distinguish "infeasible" from "colliding".
    """
    if not chain.within_limits(q):
        raise JointLimitError(f"configuration {q} outside joint limits")
    return bool(in_collision_batch(world, chain, np.atleast_2d(q))[0])


def interpolate_edge(qa, qb, eps: float) -> np.ndarray:
    """Configurations along qa -> qb at C-space step <= eps, endpoints included.

    The interpolation fractions i/n form a set symmetric under reversal, so
    validity checks over them are symmetric in (qa, qb).
    """
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    dist = float(np.linalg.norm(qb - qa))
    n = max(int(np.ceil(dist / eps)), 1)
    t = np.linspace(0.0, 1.0, n + 1)
    return qa + t[:, None] * (qb - qa)


def edge_valid(world, chain: KinematicChain, qa, qb, eps: float) -> bool:
    """True iff the straight C-space segment qa -> qb is collision-free.

    Both endpoints are checked; either endpoint outside the joint limits
    raises JointLimitError.
    """
    for q in (qa, qb):
        if not chain.within_limits(q):
            raise JointLimitError(f"edge endpoint {q} outside joint limits")
    Q = interpolate_edge(qa, qb, eps)
    return not bool(in_collision_batch(world, chain, Q).any())
