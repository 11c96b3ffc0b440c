"""Counter-based random streams keyed by integer tuples.

Every draw in the package comes from a Philox generator whose key is derived
from ``(seed, *key)``, so results do not depend on the order or thread in
which streams are consumed.
"""
import numpy as np

# Stream identifiers; appended to keys so one trial's coefficient draws and
# sample noise come from independent streams.
COEFFS = 0
SAMPLE_NOISE = 1
AMPLITUDE_NOISE = 2


def stream(seed, *key) -> np.random.Generator:
    words = [int(seed), *(int(k) for k in key)]
    if any(w < 0 for w in words):
        raise ValueError(f"seed and key words must be non-negative, got {words}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
