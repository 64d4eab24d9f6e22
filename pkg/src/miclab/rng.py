"""Named deterministic random streams.

All randomness in the library flows from a single integer seed through
named streams so that changing, say, the augmentation schedule never
shifts the draws used for mask sampling.  Each stream is an independent
PCG64 generator derived from ``SeedSequence((seed, stream_id))``.

Stream states are plain dicts (as exposed by numpy's bit generators) so
they can be embedded in checkpoints and restored bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

# Stable ids; order matters only for reproducibility of derivations.
STREAM_IDS = {
    "init": 0,   # parameter initialization
    "data": 1,   # batch sampling order
    "mask": 2,   # patch mask draws
    "aug": 3,    # color augmentation draws
    "mix": 4,    # class-mix selection
    "plnoise": 5,  # pseudo-label corruption
}


def named_stream(seed: int, name: str) -> np.random.Generator:
    """One generator for stream `name`, derived from the experiment seed."""
    if name not in STREAM_IDS:
        raise ConfigError(f"unknown rng stream {name!r}; expected one of {sorted(STREAM_IDS)}")
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    ss = np.random.SeedSequence((int(seed), STREAM_IDS[name]))
    return np.random.Generator(np.random.PCG64(ss))


def stream_bundle(seed: int) -> dict[str, np.random.Generator]:
    """All named streams for one experiment seed."""
    return {name: named_stream(seed, name) for name in STREAM_IDS}


def sample_stream(dataset_seed: int, sample_index: int) -> np.random.Generator:
    """Per-sample generator used by the scene synthesizer.

    Keyed by (dataset seed, global sample index) so individual samples are
    reproducible in isolation and splits can be partitioned by index range.
    """
    ss = np.random.SeedSequence((int(dataset_seed), 1_000_003, int(sample_index)))
    return np.random.Generator(np.random.PCG64(ss))


def get_state(gen: np.random.Generator) -> dict:
    """JSON-compatible snapshot of a generator's state."""
    return gen.bit_generator.state


def set_state(gen: np.random.Generator, state: dict) -> None:
    gen.bit_generator.state = state
