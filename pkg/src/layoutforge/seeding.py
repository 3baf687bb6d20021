"""Stable seed derivation: every random stream is a hash of (root seed, names)."""

import hashlib

import numpy as np


def derive_seed(root: int, *names) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root)).encode())
    for name in names:
        h.update(b"\x1f")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


def rng_for(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))


def scene_latent(scene_id: int, dim: int, salt: int = 0) -> np.ndarray:
    """The fixed latent vector owned by a dataset scene."""
    return rng_for(salt, "latent", scene_id).standard_normal(dim)
