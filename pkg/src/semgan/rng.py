"""Counter-based random streams.

Every source of randomness in the package is a Philox stream keyed by a
user seed plus a string tag path, so independent consumers (dataset items,
latent sampling, metric subsampling, ...) never share or race a stream.
Philox is counter-based: results are identical across platforms, runs and
thread counts.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, *tags: object) -> int:
    """Derive a 128-bit Philox key from a seed and a tag path."""
    msg = "/".join(str(t) for t in tags).encode()
    h = hashlib.blake2b(msg, digest_size=16, key=(seed % 2**64).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *tags: object, counter: int = 0) -> np.random.Generator:
    """Independent generator for (seed, tags); `counter` selects a substream.

    Substreams are spaced 2**64 Philox blocks apart, far more than any one
    consumer draws, so stream(s, t, counter=i) and counter=j never overlap.
    """
    bitgen = np.random.Philox(counter=counter << 64, key=derive_key(seed, *tags))
    return np.random.Generator(bitgen)


def torch_seed(seed: int, *tags: object) -> int:
    """64-bit seed for a torch.Generator, derived like a stream key."""
    return derive_key(seed, *tags) % 2**63
