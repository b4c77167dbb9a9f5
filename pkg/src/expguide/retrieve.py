"""Latent-space index over the experience database, the binary similarity
predicate, query-time retrieval, and mixture construction.

The similarity predicate compares the *squared* latent distance to the
retrieval radius R with a strict inequality; the KD-tree is therefore
queried with Euclidean radius sqrt(R) and candidates re-filtered through
one shared conversion helper so predicate and index can never drift.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import learn, primitive

DEFAULT_RADIUS = 0.1  # R = 0.2 * d_m with d_m = 0.5


@dataclass(frozen=True)
class Gmm:
    """Uniform-weight isotropic Gaussian mixture over critical samples."""

    means: np.ndarray  # (K, D)
    sigma2: float

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float)).copy()
        if means.shape[0] < 1:
            raise ValueError("a mixture needs at least one component")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        means.flags.writeable = False
        object.__setattr__(self, "means", means)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    def pdf(self, x) -> float:
        x = np.asarray(x, dtype=float)
        d = self.means.shape[1]
        norm = (2 * np.pi * self.sigma2) ** (d / 2)
        d2 = np.square(self.means - x).sum(axis=1)
        return float(np.exp(-d2 / (2 * self.sigma2)).sum() / (self.k * norm))


@dataclass(frozen=True)
class LatentIndex:
    tree: cKDTree
    points: np.ndarray  # (n, 8)
    samples: np.ndarray  # (n, D) critical samples, aligned with points
    provenance: np.ndarray  # (n,) source problem ids
    params: learn.EncoderParams


def build_index(db, params: learn.EncoderParams) -> LatentIndex:
    """Encode every database key and index the latent points.

    Duplicate keys stay duplicated: retrieval has multiset semantics.
    """
    if len(db.entries) == 0:
        raise ValueError("cannot index an empty database")
    keys = [e.key for e in db.entries]
    z = learn.encode_batch(params, keys)
    samples = np.array([e.x for e in db.entries])
    prov = np.array([e.provenance for e in db.entries])
    return LatentIndex(cKDTree(z), z, samples, prov, params)


def _within_radius(points, z, radius_sq) -> np.ndarray:
    """Indices of points with squared distance strictly below radius_sq."""
    d2 = np.square(points - z).sum(axis=1)
    return np.flatnonzero(d2 < radius_sq)


def radius_query(index: LatentIndex, z, radius_sq) -> np.ndarray:
    """Strict squared-radius ball query; exact (tree prunes, filter decides)."""
    cand = index.tree.query_ball_point(z, np.sqrt(radius_sq))
    cand = np.asarray(sorted(cand), dtype=int)
    if cand.size == 0:
        return cand
    keep = _within_radius(index.points[cand], z, radius_sq)
    return cand[keep]


def sim(prim_i, prim_j, params: learn.EncoderParams, radius_sq=DEFAULT_RADIUS) -> int:
    """1 iff the squared latent distance is strictly below the radius."""
    zi = learn.encode(params, prim_i)
    zj = learn.encode(params, prim_j)
    return int(np.sum(np.square(zi - zj)) < radius_sq)


def retrieve_samples(index: LatentIndex, problem, chain, projset,
                     radius_sq=DEFAULT_RADIUS) -> list:
    """Critical samples for a new problem, with multiplicity.

    Two query primitives per non-empty block (targets x_start / x_goal);
    every database point inside the latent ball contributes its sample.
    An empty list is legal: the caller falls back to uniform sampling.
    """
    prims = primitive.make_query_primitives(problem, chain, projset)
    if not prims:
        return []
    Z = learn.encode_batch(index.params, prims)
    out = []
    for z in Z:
        for idx in radius_query(index, z, radius_sq):
            out.append(index.samples[idx].copy())
    return out


def build_gmm(samples, sigma2) -> Gmm:
    """Mixture with one component per sample; None when nothing retrieved."""
    if len(samples) == 0:
        return None
    return Gmm(np.array(samples), sigma2)
