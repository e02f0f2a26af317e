"""Seeded, counter-based random streams.

Every stochastic object in the simulator (codebooks, messages, channels,
noise) draws from its own substream derived from the master seed plus a
fixed integer tag, so trials are replayable and independent of execution
order or worker count.
"""

from __future__ import annotations

import numpy as np

# Substream tags. Values are arbitrary but frozen: changing them changes
# every simulated realization.
PILOT_ROWS = 101
PILOT_PATTERN = 102
DATA_PATTERN = 103
MESSAGES = 201
CHANNEL = 202
NOISE = 203
SIC_MODE_INITIAL = 301
SIC_MODE_REESTIMATE = 302


def make_generator(seed: int, *path: int) -> np.random.Generator:
    """Generator on a Philox (counter-based) substream keyed by (seed, *path)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, *path))))


def derive_seed(seed: int, *path: int) -> int:
    """Collapse (seed, *path) into a fresh 63-bit seed for a child experiment."""
    state = np.random.SeedSequence((seed, *path)).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))


def complex_normal(rng: np.random.Generator, shape, var: float = 1.0) -> np.ndarray:
    """Circularly symmetric complex Gaussian entries, zero mean, variance `var`.

    Uses a Box-Muller pair per complex entry: the radius and angle come from
    two uniforms, so each entry consumes a fixed amount of the stream.
    """
    u1 = rng.random(shape)
    u2 = rng.random(shape)
    radius = np.sqrt(-var * np.log1p(-u1))
    return radius * np.exp(2j * np.pi * u2)
