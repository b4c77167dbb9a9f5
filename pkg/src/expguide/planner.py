"""Sampling-based planners (RRT-Connect, bidirectional EST) with a
pluggable sampler, plus path shortcutting.

Planning cost is metered in configuration collision checks and converted
to seconds at a calibrated rate (PlannerParams.checks_per_second), so a
trial's outcome, iteration count, and reported time are a pure function
of (problem, params, seed). Wall-clock time is measured and reported
separately but never drives a decision.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import geom
from .util import derive_rng

# Calibrated once on commodity hardware (see bench.calibrate_check_rate);
# results only rescale reported seconds, never change planner decisions.
DEFAULT_CHECKS_PER_SECOND = 40000.0


@dataclass(frozen=True)
class Path:
    """Ordered waypoints, shape (n, D); endpoints are the query endpoints."""

    waypoints: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.waypoints, dtype=float)).copy()
        if w.shape[0] < 2:
            raise ValueError("a path needs at least 2 waypoints")
        w.flags.writeable = False
        object.__setattr__(self, "waypoints", w)

    def __len__(self):
        return self.waypoints.shape[0]

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())


@dataclass(frozen=True)
class PlannerParams:
    range: float
    goal_bias: float = 0.0  # validated but unused by these two planners
    max_iterations: int = 50000
    timeout_s: float = 10.0
    seed: int = 0
    variant: str = "default"
    checks_per_second: float = DEFAULT_CHECKS_PER_SECOND

    def __post_init__(self):
        if self.range <= 0:
            raise ValueError("range must be positive")
        if not 0 <= self.goal_bias < 1:
            raise ValueError("goal_bias must be in [0, 1)")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "uniform"  # "uniform" | "gmm-biased"
    lam: float = 0.0
    gmm: object = None

    def __post_init__(self):
        if self.kind not in ("uniform", "gmm-biased"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if not 0 <= self.lam < 1:
            raise ValueError("lambda must be in [0, 1)")
        if self.kind == "gmm-biased" and self.gmm is None:
            raise ValueError("gmm-biased sampler requires a gmm")


@dataclass
class PlanResult:
    path: object
    iterations: int
    checks: int
    time_s: float
    wall_s: float
    reason: str  # "solved" | "timeout" | "max_iterations"

    @property
    def success(self) -> bool:
        return self.reason == "solved"


def default_range(limits) -> float:
    """20% of the C-space extent, the usual auto-configured step."""
    lim = np.asarray(limits, dtype=float)
    return 0.2 * float(np.linalg.norm(lim[:, 1] - lim[:, 0]))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def draw_gaussian_clamped(mean, sigma2, rng, limits):
    """Isotropic Gaussian draw, re-drawn up to 20 times to land inside the
    joint limits, then clamped."""
    lim = np.asarray(limits, dtype=float)
    sd = np.sqrt(sigma2)
    for _ in range(20):
        q = mean + sd * rng.standard_normal(len(mean))
        if np.all(q >= lim[:, 0]) and np.all(q <= lim[:, 1]):
            return q
    return np.clip(q, lim[:, 0], lim[:, 1])


def sample_tagged(sampler: SamplerSpec, rng, bounds):
    """One global sample plus the branch that produced it ('uniform'/'gmm')."""
    lim = np.asarray(bounds, dtype=float)
    if sampler.kind == "gmm-biased" and rng.random() < sampler.lam:
        gmm = sampler.gmm
        k = int(rng.integers(gmm.k))
        return draw_gaussian_clamped(gmm.means[k], gmm.sigma2, rng, lim), "gmm"
    return rng.uniform(lim[:, 0], lim[:, 1]), "uniform"


def sample(sampler: SamplerSpec, rng, bounds):
    return sample_tagged(sampler, rng, bounds)[0]


def _uniform_in_ball(rng, center, radius, limits):
    d = len(center)
    direction = rng.standard_normal(d)
    n = np.linalg.norm(direction)
    if n == 0.0:
        return np.asarray(center, dtype=float)
    r = radius * rng.random() ** (1.0 / d)
    q = center + (r / n) * direction
    lim = np.asarray(limits, dtype=float)
    return np.clip(q, lim[:, 0], lim[:, 1])


def est_local_target(sampler: SamplerSpec, rng, node, radius, bounds):
    """Expansion target for EST around `node`.

    Biased samplers draw from the mixture components whose mean lies within
    the local sampling radius; with no component in range (or on the uniform
    branch) the target is uniform in the range-ball. Returns (q, branch) with
    branch in {'uniform-local', 'gmm-local', 'gmm-empty'}.
    """
    if sampler.kind == "gmm-biased" and rng.random() < sampler.lam:
        gmm = sampler.gmm
        dist = np.linalg.norm(gmm.means - node, axis=1)
        near = np.flatnonzero(dist <= radius)
        if near.size:
            k = int(near[rng.integers(near.size)])
            q = draw_gaussian_clamped(gmm.means[k], gmm.sigma2, rng, bounds)
            return q, "gmm-local"
        return _uniform_in_ball(rng, node, radius, bounds), "gmm-empty"
    return _uniform_in_ball(rng, node, radius, bounds), "uniform-local"


# ---------------------------------------------------------------------------
# Collision budget and trees
# ---------------------------------------------------------------------------


class Validator:
    """Collision checking against one (world, chain) with a check budget.

    Counts every configuration probed. Assumes configurations are already
    inside the joint limits (planners sample within them by construction).
    """

    def __init__(self, world, chain, eps, max_checks=None):
        self.world = world
        self.chain = chain
        self.eps = eps
        self.checks = 0
        self.max_checks = np.inf if max_checks is None else max_checks

    def exhausted(self) -> bool:
        return self.checks >= self.max_checks

    def state_free(self, q) -> bool:
        self.checks += 1
        return not bool(geom.in_collision_batch(self.world, self.chain, q)[0])

    def edge_free(self, qa, qb) -> bool:
        Q = geom.interpolate_edge(qa, qb, self.eps)
        self.checks += Q.shape[0]
        return not bool(geom.in_collision_batch(self.world, self.chain, Q).any())


class _Tree:
    def __init__(self, root, cap=256):
        d = len(root)
        self.q = np.empty((cap, d))
        self.q[0] = root
        self.n = 1
        self.parent = [-1]
        self.deg = np.zeros(cap, dtype=int)

    def _grow(self):
        if self.n == self.q.shape[0]:
            self.q = np.vstack([self.q, np.empty_like(self.q)])
            self.deg = np.concatenate([self.deg, np.zeros_like(self.deg)])

    def add(self, q, parent) -> int:
        self._grow()
        self.q[self.n] = q
        self.parent.append(parent)
        self.n += 1
        return self.n - 1

    def add_with_degrees(self, q, parent, radius) -> int:
        nbrs = self.within(q, radius)
        idx = self.add(q, parent)
        self.deg[nbrs] += 1
        self.deg[idx] = nbrs.size
        return idx

    def nearest(self, q):
        d2 = np.square(self.q[: self.n] - q).sum(axis=1)
        i = int(np.argmin(d2))
        return i, float(np.sqrt(d2[i]))

    def within(self, q, radius):
        d2 = np.square(self.q[: self.n] - q).sum(axis=1)
        return np.flatnonzero(d2 <= radius * radius)

    def branch(self, idx):
        out = []
        while idx != -1:
            out.append(self.q[idx].copy())
            idx = self.parent[idx]
        return out[::-1]


def _join(start_tree, ia, goal_tree, ib, swapped) -> Path:
    if swapped:
        start_tree, goal_tree = goal_tree, start_tree
        ia, ib = ib, ia
    fwd = start_tree.branch(ia)
    bwd = goal_tree.branch(ib)[::-1]
    # the meet configuration appears in both trees; keep one copy
    if np.array_equal(fwd[-1], bwd[0]):
        bwd = bwd[1:]
    return Path(np.array(fwd + bwd))


def _validate_endpoints(problem, chain):
    for name, q in (("x_start", problem.x_start), ("x_goal", problem.x_goal)):
        if geom.in_collision(problem.world, chain, q):
            raise ValueError(f"{name} is in collision; refusing to plan")


# ---------------------------------------------------------------------------
# RRT-Connect
# ---------------------------------------------------------------------------


def _extend(tree: _Tree, q_target, val: Validator, step):
    i_near, dist = tree.nearest(q_target)
    if dist <= 1e-12:
        return "reached", i_near
    if dist <= step:
        q_new = q_target
        status = "reached"
    else:
        q_new = tree.q[i_near] + (step / dist) * (q_target - tree.q[i_near])
        status = "advanced"
    if val.edge_free(tree.q[i_near], q_new):
        return status, tree.add(q_new, i_near)
    return "trapped", -1


def _connect(tree: _Tree, q_target, val: Validator, step):
    while True:
        status, idx = _extend(tree, q_target, val, step)
        if status != "advanced":
            return status, idx
        if val.exhausted():
            return "trapped", -1


def plan_rrtconnect(problem, chain, sampler: SamplerSpec, params: PlannerParams,
                    eps=0.05) -> PlanResult:
    """Two-tree extend/connect search from x_start and x_goal."""
    _validate_endpoints(problem, chain)
    t0 = time.perf_counter()
    rng = derive_rng(params.seed, "rrtc")
    budget = int(params.timeout_s * params.checks_per_second)
    val = Validator(problem.world, chain, eps, budget)
    limits = chain.limits_array

    ta = _Tree(problem.x_start)
    tb = _Tree(problem.x_goal)
    swapped = False
    it = 0

    def result(path, reason):
        return PlanResult(
            path, it, val.checks, val.checks / params.checks_per_second,
            time.perf_counter() - t0, reason,
        )

    while it < params.max_iterations:
        if val.exhausted():
            return result(None, "timeout")
        it += 1
        q_rand = sample(sampler, rng, limits)
        status, ia = _extend(ta, q_rand, val, params.range)
        if status != "trapped":
            status_b, ib = _connect(tb, ta.q[ia], val, params.range)
            if status_b == "reached":
                return result(_join(ta, ia, tb, ib, swapped), "solved")
        ta, tb = tb, ta
        swapped = not swapped
    return result(None, "timeout" if val.exhausted() else "max_iterations")


# ---------------------------------------------------------------------------
# Bidirectional EST
# ---------------------------------------------------------------------------


def _est_pick_node(tree: _Tree, rng) -> int:
    w = 1.0 / (1.0 + tree.deg[: tree.n])
    return int(rng.choice(tree.n, p=w / w.sum()))


def plan_biest(problem, chain, sampler: SamplerSpec, params: PlannerParams,
               eps=0.05) -> PlanResult:
    """Bidirectional EST: inverse-density node choice, local expansion,
    and a connect attempt toward the other tree after each expansion."""
    _validate_endpoints(problem, chain)
    t0 = time.perf_counter()
    rng = derive_rng(params.seed, "biest")
    budget = int(params.timeout_s * params.checks_per_second)
    val = Validator(problem.world, chain, eps, budget)
    limits = chain.limits_array

    ta = _Tree(problem.x_start)
    tb = _Tree(problem.x_goal)
    swapped = False
    it = 0

    def result(path, reason):
        return PlanResult(
            path, it, val.checks, val.checks / params.checks_per_second,
            time.perf_counter() - t0, reason,
        )

    while it < params.max_iterations:
        if val.exhausted():
            return result(None, "timeout")
        it += 1
        i_node = _est_pick_node(ta, rng)
        node = ta.q[i_node]
        q_t, _branch = est_local_target(sampler, rng, node, params.range, limits)
        d = float(np.linalg.norm(q_t - node))
        if d <= 1e-12:
            ta, tb = tb, ta
            swapped = not swapped
            continue
        if d > params.range:
            q_t = node + (params.range / d) * (q_t - node)
        if val.edge_free(node, q_t):
            ia = ta.add_with_degrees(q_t, i_node, params.range)
            i_other, dist = tb.nearest(q_t)
            if dist <= params.range and val.edge_free(q_t, tb.q[i_other]):
                ib = tb.add(q_t, i_other)
                return result(_join(ta, ia, tb, ib, swapped), "solved")
        ta, tb = tb, ta
        swapped = not swapped
    return result(None, "timeout" if val.exhausted() else "max_iterations")


# ---------------------------------------------------------------------------
# Shortcutting
# ---------------------------------------------------------------------------


def path_valid(path: Path, world, chain, eps) -> bool:
    w = path.waypoints
    return all(
        geom.edge_valid(world, chain, w[k], w[k + 1], eps) for k in range(len(w) - 1)
    )


def shortcut(path: Path, world, chain, T, eps, rng) -> Path:
    """Random splice passes followed by collinear-waypoint pruning.

    Output endpoints equal the input endpoints; total C-space length never
    increases and validity is preserved.
    """
    if not path_valid(path, world, chain, eps):
        raise ValueError("shortcut requires a valid input path")
    w = [q.copy() for q in path.waypoints]
    for _ in range(T):
        n = len(w)
        if n < 3:
            break
        i = int(rng.integers(0, n - 2))
        j = int(rng.integers(i + 2, n))
        if geom.edge_valid(world, chain, w[i], w[j], eps):
            w = w[: i + 1] + w[j:]
    pruned = [w[0]]
    for k in range(1, len(w) - 1):
        a, b, c = pruned[-1], w[k], w[k + 1]
        detour = np.linalg.norm(b - a) + np.linalg.norm(c - b) - np.linalg.norm(c - a)
        if detour > 1e-12:
            pruned.append(b)
    pruned.append(w[-1])
    return Path(np.array(pruned))


# ---------------------------------------------------------------------------
# Path files
# ---------------------------------------------------------------------------


def save_path(path: Path, fname) -> None:
    """One waypoint per line, fixed 9-decimal precision."""
    with open(fname, "w") as f:
        for q in path.waypoints:
            f.write(" ".join(f"{x:.9f}" for x in q) + "\n")


def load_path(fname) -> Path:
    w = np.loadtxt(fname, ndmin=2)
    return Path(w)
