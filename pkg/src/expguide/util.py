"""Shared helpers: seeded rng derivation, hashing, errors."""

import hashlib
import json
import zlib

import numpy as np


class JointLimitError(ValueError):
    """A configuration violates the chain's joint limits."""


class SceneGenerationError(RuntimeError):
    """Scene/goal rejection sampling exhausted its budget; carries the seed."""

    def __init__(self, message, seed):
        super().__init__(f"{message} (seed={seed})")
        self.seed = seed


class DbFormatError(ValueError):
    """An experience-database file is corrupt or truncated."""


class PairExhaustionError(RuntimeError):
    """Dissimilar-pair rejection sampling could not produce enough pairs."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


class ConfigError(ValueError):
    """Run configuration is malformed or violates the schema."""


def derive_rng(seed, *keys):
    """Deterministic per-stage rng stream.

    String keys are hashed with crc32 (stable across platforms and runs)
    so streams like (seed, "scenes", i) never collide with (seed, "solve", i).
    """
    ints = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            ints.append(zlib.crc32(k.encode()))
        else:
            ints.append(int(k) & 0xFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))


def config_hash(obj) -> str:
    """sha256 over the canonical JSON form of a (nested) plain-python object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
