"""Experience database: harvest <key : x_prev, x, x_next> entries from
solved problems, persist them, and load them back.

The critical sample x is a shortcut-path waypoint whose projection lands in
a non-empty local block; its neighbors exist only to support pair mining and
are not part of the retrieved experience.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geom, planner, primitive, workspace
from .util import DbFormatError, derive_rng

log = logging.getLogger(__name__)

DB_MAGIC = "expdb 1"


@dataclass(frozen=True)
class DbEntry:
    key: primitive.LocalPrimitive
    x_prev: np.ndarray
    x: np.ndarray
    x_next: np.ndarray
    provenance: int  # index of the source problem in its dataset

    def __post_init__(self):
        for name in ("x_prev", "x", "x_next"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


@dataclass
class ExperienceDb:
    """Append-only list of entries plus the shape metadata the file needs."""

    dof: int
    n_proj: int
    cell_size: float
    block_side: float
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def append(self, entry: DbEntry):
        self.entries.append(entry)


@dataclass(frozen=True)
class BuildParams:
    sigma2: float = 0.2
    target_samples: int = 20
    shortcut_passes: int = 200
    edge_eps: float = 0.05
    seed: int = 0


def select_target(problem, chain, world, rng, sigma2=0.2, m=20):
    """Pick the endpoint whose Gaussian neighborhood collides most.

    Draws m samples around each endpoint (clamped to the joint limits),
    counts in-collision hits, and returns the endpoint with the larger
    count; ties go to x_goal. Swapped start/goal problems therefore tend
    to select the same configuration.
    """
    lim = chain.limits_array
    sd = np.sqrt(sigma2)
    counts = []
    for center in (problem.x_start, problem.x_goal):
        Q = center + sd * rng.standard_normal((m, chain.dof))
        Q = np.clip(Q, lim[:, 0], lim[:, 1])
        counts.append(int(geom.in_collision_batch(world, chain, Q).sum()))
    return problem.x_start.copy() if counts[0] > counts[1] else problem.x_goal.copy()


def harvest_entries(problem, path, projset, params: BuildParams, provenance,
                    rng_shortcut, rng_target) -> list:
    """Entries contributed by one solved problem.

    Shortcut the path, pick x_target, then loop over (block, waypoint,
    projection) and insert one entry per containment hit. Endpoint
    waypoints use themselves as their missing neighbor.
    """
    chain, world = problem.chain, problem.world
    sp = planner.shortcut(
        path, world, chain, params.shortcut_passes, params.edge_eps, rng_shortcut
    )
    x_target = select_target(
        problem, chain, world, rng_target, params.sigma2, params.target_samples
    )
    pi_target = geom.project(chain, projset, x_target)
    w = sp.waypoints
    n = len(w)
    proj_per_wp = [geom.project(chain, projset, q) for q in w]

    out = []
    for lw in workspace.decompose(world):
        x_proj = primitive.compute_xproj(lw.v, pi_target)
        for k in range(n):
            cols = proj_per_wp[k]
            for p in range(projset.count):
                if workspace.contains(lw, cols[:, p]):
                    key = primitive.LocalPrimitive(lw, x_target, x_proj, proj_id=p)
                    out.append(
                        DbEntry(
                            key,
                            w[k - 1] if k > 0 else w[k],
                            w[k],
                            w[k + 1] if k < n - 1 else w[k],
                            provenance,
                        )
                    )
    return out


def build_db(dataset, projset, params: BuildParams) -> ExperienceDb:
    """Run the harvest over a list of (problem, path) pairs.

    Invalid inputs (path not solving its problem) are skipped with a
    warning; the build is best-effort over the batch. Deterministic given
    dataset order and params.seed: per-problem rng streams are derived as
    (seed, "shortcut"|"target", problem_index).
    """
    first_chain = dataset[0][0].chain if dataset else None
    db = ExperienceDb(
        dof=first_chain.dof if first_chain else 0,
        n_proj=projset.count,
        cell_size=dataset[0][0].world.cell_size if dataset else 0.0,
        block_side=dataset[0][0].world.block_side if dataset else 0.0,
    )
    for i, (problem, path) in enumerate(dataset):
        if not _path_solves(problem, path, params.edge_eps):
            log.warning("dataset item %d: path does not solve its problem; skipped", i)
            continue
        entries = harvest_entries(
            problem, path, projset, params, i,
            derive_rng(params.seed, "shortcut", i),
            derive_rng(params.seed, "target", i),
        )
        for e in entries:
            db.append(e)
    return db


def _path_solves(problem, path, eps) -> bool:
    w = path.waypoints
    if not (np.allclose(w[0], problem.x_start) and np.allclose(w[-1], problem.x_goal)):
        return False
    try:
        return planner.path_valid(path, problem.world, problem.chain, eps)
    except Exception:
        return False


# ---------------------------------------------------------------------------
# Persistence (binary records after a 3-line text header; layout documented
# in the README)
# ---------------------------------------------------------------------------


def _record_dtype(dof, n_proj):
    return np.dtype(
        [
            ("b", "u1", (8,)),
            ("v", "<f8", (2,)),
            ("proj_id", "<i4"),
            ("prov", "<i4"),
            ("x_target", "<f8", (dof,)),
            ("x_proj", "<f8", (n_proj,)),
            ("x_prev", "<f8", (dof,)),
            ("x", "<f8", (dof,)),
            ("x_next", "<f8", (dof,)),
        ]
    )


def save_db(db: ExperienceDb, path) -> None:
    dt = _record_dtype(db.dof, db.n_proj)
    rec = np.zeros(len(db.entries), dtype=dt)
    for i, e in enumerate(db.entries):
        rec[i]["b"] = np.frombuffer(e.key.lw.packed(), dtype=np.uint8)
        rec[i]["v"] = e.key.lw.v
        rec[i]["proj_id"] = e.key.proj_id
        rec[i]["prov"] = e.provenance
        rec[i]["x_target"] = e.key.x_target
        rec[i]["x_proj"] = e.key.x_proj
        rec[i]["x_prev"] = e.x_prev
        rec[i]["x"] = e.x
        rec[i]["x_next"] = e.x_next
    header = (
        f"{DB_MAGIC}\n"
        f"dof {db.dof} proj {db.n_proj} cell_size {db.cell_size!r} "
        f"side {db.block_side!r}\n"
        f"entries {len(db.entries)}\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode())
        rec.tofile(f)


def load_db(path) -> ExperienceDb:
    with open(path, "rb") as f:
        header_lines = [f.readline() for _ in range(3)]
        offset = sum(len(l) for l in header_lines)
        try:
            magic = header_lines[0].decode().strip()
            fields = header_lines[1].decode().split()
            dof, n_proj = int(fields[1]), int(fields[3])
            cell_size, side = float(fields[5]), float(fields[7])
            n = int(header_lines[2].decode().split()[1])
        except (IndexError, ValueError, UnicodeDecodeError) as exc:
            raise DbFormatError(f"{path}: malformed header: {exc}") from exc
        if magic != DB_MAGIC:
            raise DbFormatError(f"{path}: bad magic {magic!r}")
        dt = _record_dtype(dof, n_proj)
        rec = np.fromfile(f, dtype=dt, count=n)
    if rec.shape[0] != n:
        raise DbFormatError(
            f"{path}: truncated at byte {offset + rec.shape[0] * dt.itemsize}: "
            f"expected {n} records, read {rec.shape[0]}"
        )
    db = ExperienceDb(dof, n_proj, cell_size, side)
    for r in rec:
        bits = np.unpackbits(r["b"]).astype(np.uint8)
        lw = workspace.LocalWorkspace(bits, r["v"], side)
        key = primitive.LocalPrimitive(
            lw, r["x_target"], r["x_proj"], int(r["proj_id"])
        )
        db.append(DbEntry(key, r["x_prev"], r["x"], r["x_next"], int(r["prov"])))
    return db
