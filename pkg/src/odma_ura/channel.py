"""Quasi-static Rayleigh MIMO channel and receiver noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .streams import complex_normal


@dataclass(frozen=True)
class ChannelRealization:
    """One channel row vector per user, constant over the whole frame."""

    H: np.ndarray  # (Ka, M) complex, i.i.d. CN(0, 1) entries


@dataclass(frozen=True)
class ReceivedFrame:
    """Received n x M matrix with views onto the pilot and data parts."""

    Y: np.ndarray
    pilot_rows: int  # n_p_prime

    @property
    def Yp(self) -> np.ndarray:
        return self.Y[: self.pilot_rows]

    @property
    def Yd(self) -> np.ndarray:
        return self.Y[self.pilot_rows:]


def draw_channel(ka: int, m: int, rng: np.random.Generator) -> ChannelRealization:
    if ka < 1 or m < 1:
        raise ValueError("need at least one user and one antenna")
    return ChannelRealization(H=complex_normal(rng, (ka, m)))


def add_noise(noiseless: np.ndarray, n0: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. CN(0, n0) entries; n0 = 0 returns the input bit-exactly."""
    if n0 < 0:
        raise ValueError("noise variance must be nonnegative")
    if n0 == 0:
        return noiseless.copy()
    return noiseless + complex_normal(rng, noiseless.shape, var=n0)
