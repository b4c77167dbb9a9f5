"""Siamese encoder over local primitives, contrastive training with
hand-rolled gradients, and the finite-difference gradient verifier.

Architecture (double precision end to end):
    grid branch   dense 64 -> 24, ReLU
    fusion        dense (24 + 2 + D + P) -> 32, ReLU
    output        dense 32 -> 8, linear
Parameter count is ~3e3, in line with the design target. Inputs are
normalized with constants frozen into EncoderParams: occupancy bits as
0/1 reals, block centers scaled to [0, 1] by the workspace bounds, target
joints to [-1, 1] by the joint limits, and projection distances by the
workspace diameter.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .util import TrainingDivergedError, derive_rng

GRID_HIDDEN = 24
FUSION_HIDDEN = 32
LATENT_DIM = 8
GRID_BITS = 64

SIMILAR = "S"
DISSIMILAR = "NS"

_TENSORS = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class EncoderParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    joint_limits: np.ndarray  # (D, 2)
    workspace_bounds: np.ndarray  # (2, 2) rows [lo, hi] per axis
    n_proj: int

    @property
    def dof(self) -> int:
        return self.joint_limits.shape[0]

    @property
    def diameter(self) -> float:
        wb = self.workspace_bounds
        return float(np.linalg.norm(wb[:, 1] - wb[:, 0]))

    @property
    def n_params(self) -> int:
        return sum(getattr(self, t).size for t in _TENSORS)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    step_size: float = 1e-3
    momentum: float = 0.9
    margin: float = 0.5  # d_m
    seed: int = 0
    val_split: float = 0.1


def init_params(joint_limits, workspace_bounds, n_proj, seed=0) -> EncoderParams:
    """Glorot-uniform weights, zero biases, seed-fixed."""
    rng = derive_rng(seed, "init")
    joint_limits = np.asarray(joint_limits, dtype=float)
    dof = joint_limits.shape[0]
    fusion_in = GRID_HIDDEN + 2 + dof + n_proj

    def glorot(fan_out, fan_in):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    return EncoderParams(
        w1=glorot(GRID_HIDDEN, GRID_BITS),
        b1=np.zeros(GRID_HIDDEN),
        w2=glorot(FUSION_HIDDEN, fusion_in),
        b2=np.zeros(FUSION_HIDDEN),
        w3=glorot(LATENT_DIM, FUSION_HIDDEN),
        b3=np.zeros(LATENT_DIM),
        joint_limits=joint_limits,
        workspace_bounds=np.asarray(workspace_bounds, dtype=float),
        n_proj=n_proj,
    )


def featurize(params: EncoderParams, prims) -> tuple:
    """Normalized input blocks (B, Vn, Xn, XPn) for a list of primitives."""
    lim = params.joint_limits
    wb = params.workspace_bounds
    B = np.array([p.lw.b for p in prims], dtype=float)
    V = np.array([p.lw.v for p in prims], dtype=float)
    X = np.array([p.x_target for p in prims], dtype=float)
    XP = np.array([p.x_proj for p in prims], dtype=float)
    Vn = (V - wb[:, 0]) / (wb[:, 1] - wb[:, 0])
    Xn = 2.0 * (X - lim[:, 0]) / (lim[:, 1] - lim[:, 0]) - 1.0
    XPn = XP / params.diameter
    return B, Vn, Xn, XPn


def _forward(params: EncoderParams, feats):
    B, Vn, Xn, XPn = feats
    pre1 = B @ params.w1.T + params.b1
    h1 = np.maximum(pre1, 0.0)
    u = np.concatenate([h1, Vn, Xn, XPn], axis=1)
    pre2 = u @ params.w2.T + params.b2
    h2 = np.maximum(pre2, 0.0)
    z = h2 @ params.w3.T + params.b3
    return {"B": B, "pre1": pre1, "u": u, "pre2": pre2, "h2": h2, "z": z}


def encode_batch(params: EncoderParams, prims) -> np.ndarray:
    """Latent points for a list of primitives, shape (n, 8)."""
    return _forward(params, featurize(params, prims))["z"]


def encode(params: EncoderParams, prim) -> np.ndarray:
    """Latent point z for one primitive; deterministic in inputs."""
    return encode_batch(params, [prim])[0]


def contrastive_loss(z_i, z_j, label, d_m=0.5) -> float:
    """Squared latent distance for similar pairs; hinge to the margin for
    dissimilar ones (both branches use the squared distance)."""
    s = float(np.sum(np.square(np.asarray(z_i) - np.asarray(z_j))))
    if label == SIMILAR:
        return s
    return max(0.0, d_m - s)


def _backward_copy(params, cache, gz):
    gw3 = gz.T @ cache["h2"]
    gb3 = gz.sum(axis=0)
    gh2 = (gz @ params.w3) * (cache["pre2"] > 0)
    gw2 = gh2.T @ cache["u"]
    gb2 = gh2.sum(axis=0)
    gu = gh2 @ params.w2
    gh1 = gu[:, :GRID_HIDDEN] * (cache["pre1"] > 0)
    gw1 = gh1.T @ cache["B"]
    gb1 = gh1.sum(axis=0)
    return {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2, "w3": gw3, "b3": gb3}


def batch_loss_and_grads(params, feats_a, feats_b, is_similar, d_m):
    """Mean loss over a batch of pairs and its gradients (shared weights)."""
    ca = _forward(params, feats_a)
    cb = _forward(params, feats_b)
    diff = ca["z"] - cb["z"]
    s = np.sum(np.square(diff), axis=1)
    sim_mask = np.asarray(is_similar, dtype=bool)
    hinge_active = (~sim_mask) & (s < d_m)
    losses = np.where(sim_mask, s, np.maximum(0.0, d_m - s))
    n = diff.shape[0]

    scale = np.zeros(n)
    scale[sim_mask] = 2.0
    scale[hinge_active] = -2.0
    gza = (scale[:, None] * diff) / n
    ga = _backward_copy(params, ca, gza)
    gb = _backward_copy(params, cb, -gza)
    grads = {k: ga[k] + gb[k] for k in ga}
    return float(losses.mean()), grads


def loss_gradients(params: EncoderParams, prim_i, prim_j, label, d_m=0.5):
    """Loss and analytic gradients for a single labeled pair.

    ReLU subgradient at 0 is taken as 0; an inactive hinge contributes a
    zero gradient everywhere.
    """
    fa = featurize(params, [prim_i])
    fb = featurize(params, [prim_j])
    return batch_loss_and_grads(params, fa, fb, [label == SIMILAR], d_m)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(pairset, db, config: TrainConfig, params0: EncoderParams = None):
    """Mini-batch SGD with momentum over the shuffled union of labeled pairs.

    Returns (params, curve) where curve rows are (epoch, train_loss,
    val_loss). Aborts with diagnostics when the loss goes non-finite.
    """
    if params0 is None:
        raise ValueError("params0 with normalization constants is required")
    entries = db.entries
    labeled = [(a, b, True) for a, b, _w in pairset.similar]
    labeled += [(a, b, False) for a, b in pairset.dissimilar]
    if not pairset.similar:
        raise ValueError("training needs at least one similar pair")

    keys = [e.key for e in entries]
    feats = featurize(params0, keys)

    rng = derive_rng(config.seed, "train")
    order = rng.permutation(len(labeled))
    n_val = int(round(config.val_split * len(labeled)))
    val_idx = order[:n_val]
    train_idx = order[n_val:]

    def take(idx_list):
        a = np.array([labeled[k][0] for k in idx_list], dtype=int)
        b = np.array([labeled[k][1] for k in idx_list], dtype=int)
        y = np.array([labeled[k][2] for k in idx_list], dtype=bool)
        fa = tuple(f[a] for f in feats)
        fb = tuple(f[b] for f in feats)
        return fa, fb, y

    params = params0
    vel = {t: np.zeros_like(getattr(params, t)) for t in _TENSORS}
    curve = []
    for epoch in range(config.epochs):
        perm = train_idx[rng.permutation(len(train_idx))]
        loss_sum = 0.0
        for lo in range(0, len(perm), config.batch_size):
            batch = perm[lo : lo + config.batch_size]
            fa, fb, y = take(batch)
            loss, grads = batch_loss_and_grads(
                params, fa, fb, y, config.margin
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {lo // config.batch_size}"
                    f" (step_size={config.step_size})"
                )
            loss_sum += loss * len(batch)
            updates = {}
            for t in _TENSORS:
                vel[t] = config.momentum * vel[t] + grads[t]
                updates[t] = getattr(params, t) - config.step_size * vel[t]
            params = replace(params, **updates)
        train_loss = loss_sum / max(len(perm), 1)
        if len(val_idx):
            fa, fb, y = take(val_idx)
            val_loss, _ = batch_loss_and_grads(params, fa, fb, y, config.margin)
        else:
            val_loss = float("nan")
        curve.append((epoch, train_loss, float(val_loss)))
    return params, curve


# ---------------------------------------------------------------------------
# Parameter files and training-curve CSV
# ---------------------------------------------------------------------------


def save_params(params: EncoderParams, path) -> None:
    """Layer-tagged container: text headers, little-endian float64 payloads."""
    with open(path, "wb") as f:
        f.write(b"expenc 1\n")
        f.write(f"dof {params.dof} proj {params.n_proj}\n".encode())
        tensors = dict(
            {t: getattr(params, t) for t in _TENSORS},
            joint_limits=params.joint_limits,
            workspace_bounds=params.workspace_bounds,
        )
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            shape = " ".join(str(s) for s in arr.shape)
            f.write(f"tensor {name} {shape}\n".encode())
            f.write(arr.tobytes())


def load_params(path) -> EncoderParams:
    with open(path, "rb") as f:
        if f.readline().strip() != b"expenc 1":
            raise ValueError(f"{path}: not an expenc v1 file")
        head = f.readline().split()
        n_proj = int(head[3])
        tensors = {}
        while True:
            line = f.readline()
            if not line:
                break
            tok = line.split()
            name = tok[1].decode()
            shape = tuple(int(t) for t in tok[2:])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape)
            tensors[name] = data.astype(float)
    return EncoderParams(
        **{t: tensors[t] for t in _TENSORS},
        joint_limits=tensors["joint_limits"],
        workspace_bounds=tensors["workspace_bounds"],
        n_proj=n_proj,
    )


def save_curve(curve, path) -> None:
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_loss\n")
        for epoch, tr, va in curve:
            f.write(f"{epoch},{tr!r},{va!r}\n")


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def _params_vector(params):
    return np.concatenate([getattr(params, t).ravel() for t in _TENSORS])


def _with_vector(params, vec):
    out = {}
    at = 0
    for t in _TENSORS:
        arr = getattr(params, t)
        out[t] = vec[at : at + arr.size].reshape(arr.shape)
        at += arr.size
    return replace(params, **out)


def _activation_signature(params, feats_a, feats_b, d_m):
    ca = _forward(params, feats_a)
    cb = _forward(params, feats_b)
    s = float(np.sum(np.square(ca["z"] - cb["z"])))
    bits = np.concatenate(
        [
            (ca["pre1"] > 0).ravel(), (ca["pre2"] > 0).ravel(),
            (cb["pre1"] > 0).ravel(), (cb["pre2"] > 0).ravel(),
            [s < d_m],
        ]
    )
    return bits, s


def pair_loss(params, feats_a, feats_b, is_similar, d_m):
    ca = _forward(params, feats_a)
    cb = _forward(params, feats_b)
    s = float(np.sum(np.square(ca["z"] - cb["z"])))
    return s if is_similar else max(0.0, d_m - s)


def fd_check_pair(params, prim_i, prim_j, label, d_m=0.5, h=1e-5):
    """Central finite differences against the analytic gradient.

    Returns (max_rel_err, n_checked, n_excluded). A coordinate is excluded
    when the +h / -h evaluations disagree on any ReLU or hinge activation
    (the loss is non-smooth there). Relative error uses
    |ga - gf| / max(|ga| + |gf|, 1e-6).
    """
    fa = featurize(params, [prim_i])
    fb = featurize(params, [prim_j])
    is_sim = label == SIMILAR
    _loss, grads = batch_loss_and_grads(params, fa, fb, [is_sim], d_m)
    ga = np.concatenate([grads[t].ravel() for t in _TENSORS])
    theta = _params_vector(params)

    max_err = 0.0
    checked = excluded = 0
    for k in range(theta.size):
        tp = theta.copy()
        tp[k] += h
        tm = theta.copy()
        tm[k] -= h
        pp, pm = _with_vector(params, tp), _with_vector(params, tm)
        sig_p, _ = _activation_signature(pp, fa, fb, d_m)
        sig_m, _ = _activation_signature(pm, fa, fb, d_m)
        if not np.array_equal(sig_p, sig_m):
            excluded += 1
            continue
        gf = (pair_loss(pp, fa, fb, is_sim, d_m) - pair_loss(pm, fa, fb, is_sim, d_m)) / (2 * h)
        err = abs(ga[k] - gf) / max(abs(ga[k]) + abs(gf), 1e-6)
        max_err = max(max_err, err)
        checked += 1
    return max_err, checked, excluded


def random_primitive(rng, joint_limits, workspace_bounds, n_proj):
    """Synthetic primitive for gradient checking: random bits, center in
    bounds, target in limits, distances up to the diameter."""
    from . import primitive as prim_mod
    from . import workspace as ws_mod

    lim = np.asarray(joint_limits, dtype=float)
    wb = np.asarray(workspace_bounds, dtype=float)
    b = rng.integers(0, 2, GRID_BITS).astype(np.uint8)
    if not b.any():
        b[int(rng.integers(GRID_BITS))] = 1
    v = rng.uniform(wb[:, 0], wb[:, 1])
    lw = ws_mod.LocalWorkspace(b, v, side=float(wb[0, 1] - wb[0, 0]) / 4)
    x_t = rng.uniform(lim[:, 0], lim[:, 1])
    diam = float(np.linalg.norm(wb[:, 1] - wb[:, 0]))
    x_proj = rng.uniform(0.0, diam, n_proj)
    return prim_mod.LocalPrimitive(lw, x_t, x_proj, proj_id=int(rng.integers(n_proj)))


def gradient_check(joint_limits, workspace_bounds, n_proj, draws=50, h=1e-5,
                   seed=0, d_m=0.5):
    """Run the verifier over `draws` random (params, pair, label) triples."""
    rng = derive_rng(seed, "gradcheck")
    worst = 0.0
    total_excluded = 0
    for d in range(draws):
        params = init_params(joint_limits, workspace_bounds, n_proj,
                             seed=int(rng.integers(2**31)))
        # random rescale so checks cover non-initialization regimes too
        scale = float(rng.uniform(0.5, 2.0))
        params = _with_vector(params, _params_vector(params) * scale)
        pi = random_primitive(rng, joint_limits, workspace_bounds, n_proj)
        pj = random_primitive(rng, joint_limits, workspace_bounds, n_proj)
        label = SIMILAR if rng.random() < 0.5 else DISSIMILAR
        err, _checked, excl = fd_check_pair(params, pi, pj, label, d_m, h)
        worst = max(worst, err)
        total_excluded += excl
    return {"max_rel_err": worst, "draws": draws, "excluded": total_excluded}
