"""Local primitives: the retrieval keys combining a local occupancy block,
a target configuration, and their interleaved distance features."""

from dataclasses import dataclass

import numpy as np

from . import geom, workspace

QUERY_PROJ = -1  # proj_id marker for query-time primitives


@dataclass(frozen=True)
class LocalPrimitive:
    """Key indexed by the similarity function.

    x_proj[p] is the Euclidean distance from the block center lw.v to
    projection p of x_target (recomputable; asserted in tests). proj_id
    records which projection generated a database-side primitive and is
    QUERY_PROJ for query-time primitives; it is not encoder input.
    """

    lw: workspace.LocalWorkspace
    x_target: np.ndarray
    x_proj: np.ndarray
    proj_id: int = QUERY_PROJ

    def __post_init__(self):
        for name in ("x_target", "x_proj"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def compute_xproj(v, projections: np.ndarray) -> np.ndarray:
    """Distances from v to each projection column, in projection order."""
    v = np.asarray(v, dtype=float)
    return np.linalg.norm(projections - v[:, None], axis=0)


def make_primitive(lw, x_target, chain, projset, proj_id=QUERY_PROJ) -> LocalPrimitive:
    pi = geom.project(chain, projset, x_target)
    return LocalPrimitive(lw, x_target, compute_xproj(lw.v, pi), proj_id)


def make_query_primitives(problem, chain, projset) -> list:
    """Two primitives per non-empty block: targets x_start and x_goal."""
    prims = []
    for lw in workspace.decompose(problem.world):
        prims.append(make_primitive(lw, problem.x_start, chain, projset))
        prims.append(make_primitive(lw, problem.x_goal, chain, projset))
    return prims
