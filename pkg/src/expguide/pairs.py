"""Self-supervised mining of similar / dissimilar primitive pairs.

A pair (a, b) is similar when a Gaussian perturbation of entry a's critical
sample can splice into entry b's path context (between b's stored neighbors,
checked in b's source world). Dissimilar pairs are uniform random index
pairs. Mining is deterministic: the outer loop over entry i uses the rng
stream derived from (seed, "similar", i), drawing candidates in ascending j
order, up to `attempts` perturbations each.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .util import PairExhaustionError, derive_rng


@dataclass(frozen=True)
class MiningParams:
    sigma2: float = 0.2
    attempts: int = 10  # perturbation draws per candidate pair
    edge_eps: float = 0.05
    seed: int = 0

    @property
    def cspace_gate(self) -> float:
        # the literal 10-sigma^2 admission threshold, in radians
        return 10.0 * self.sigma2


@dataclass
class PairSet:
    similar: list = field(default_factory=list)  # (a, b, witness) tuples
    dissimilar: list = field(default_factory=list)  # (a, b) tuples
    params: MiningParams = MiningParams()

    def __post_init__(self):
        if len(self.similar) != len(self.dissimilar) and self.dissimilar:
            raise ValueError("similar and dissimilar sets must match in size")


def valid_substitute(x_prev, x_near, x_next, world, chain, eps=0.05) -> bool:
    """Can x_near connect to both stored neighbors through free edges?

    A perturbation outside the joint limits is never a valid substitute.
    """
    if not chain.within_limits(x_near):
        return False
    return geom.edge_valid(world, chain, x_prev, x_near, eps) and geom.edge_valid(
        world, chain, x_near, x_next, eps
    )


def mine_similar(db, worlds, chains, params: MiningParams) -> list:
    """All admitted similar pairs (a, b, witness) over ordered entry pairs.

    Gates per ordered pair (i, j), i != j: same generating projection,
    block centers within one block side in L1, critical samples within the
    C-space gate; then up to `attempts` draws x_near ~ N(x_j, sigma2*I),
    admitting (j, i) with the first draw that splices into i's context.
    """
    n = len(db.entries)
    if n == 0:
        return []
    proj = np.array([e.key.proj_id for e in db.entries])
    V = np.array([e.key.lw.v for e in db.entries])
    X = np.array([e.x for e in db.entries])
    side = db.block_side
    sd = np.sqrt(params.sigma2)
    out = []
    for i, ei in enumerate(db.entries):
        rng = derive_rng(params.seed, "similar", i)
        mask = (
            (proj == proj[i])
            & (np.abs(V - V[i]).sum(axis=1) <= side)
            & (np.linalg.norm(X - X[i], axis=1) < params.cspace_gate)
        )
        mask[i] = False
        world_i = worlds[ei.provenance]
        chain_i = chains[ei.provenance]
        for j in np.flatnonzero(mask):
            xj = db.entries[j].x
            for _ in range(params.attempts):
                x_near = xj + sd * rng.standard_normal(len(xj))
                if valid_substitute(
                    ei.x_prev, x_near, ei.x_next, world_i, chain_i, params.edge_eps
                ):
                    out.append((int(j), int(i), x_near))
                    break
    return out


def mine_dissimilar(db, count, rng, similar) -> list:
    """`count` uniform random ordered index pairs avoiding (i,i) and S."""
    n = len(db.entries)
    if count == 0:
        return []
    if n < 2:
        raise PairExhaustionError("need at least 2 entries for dissimilar pairs")
    s_set = {(a, b) for a, b, *_ in similar}
    out = []
    budget = 1000 + 200 * count
    while len(out) < count and budget > 0:
        budget -= 1
        a = int(rng.integers(n))
        b = int(rng.integers(n))
        if a == b or (a, b) in s_set:
            continue
        out.append((a, b))
    if len(out) < count:
        raise PairExhaustionError(
            f"could not draw {count} dissimilar pairs from {n} entries"
        )
    return out


def mine_pairs(db, worlds, chains, params: MiningParams) -> PairSet:
    """Algorithm run end to end: similar pairs then an equal number of
    dissimilar ones."""
    similar = mine_similar(db, worlds, chains, params)
    rng = derive_rng(params.seed, "dissimilar")
    dissimilar = mine_dissimilar(db, len(similar), rng, similar)
    return PairSet(similar, dissimilar, params)


def save_pairs(ps: PairSet, path) -> None:
    with open(path, "w") as f:
        f.write(f"exppairs 1 sigma2 {ps.params.sigma2!r} attempts "
                f"{ps.params.attempts} seed {ps.params.seed}\n")
        for a, b, w in ps.similar:
            witness = " ".join(f"{x!r}" for x in w)
            f.write(f"S {a} {b} {witness}\n")
        for a, b in ps.dissimilar:
            f.write(f"NS {a} {b}\n")


def load_pairs(path) -> PairSet:
    with open(path) as f:
        head = f.readline().split()
        if head[:2] != ["exppairs", "1"]:
            raise ValueError(f"{path}: not an exppairs v1 file")
        params = MiningParams(
            sigma2=float(head[3]), attempts=int(head[5]), seed=int(head[7])
        )
        similar, dissimilar = [], []
        for line in f:
            tok = line.split()
            if tok[0] == "S":
                similar.append(
                    (int(tok[1]), int(tok[2]), np.array([float(t) for t in tok[3:]]))
                )
            else:
                dissimilar.append((int(tok[1]), int(tok[2])))
    return PairSet(similar, dissimilar, params)
