"""Per-user encoding pipeline and multi-user frame superposition.

A message splits into a prefix that selects the pilot/pattern index and a
payload that is CRC-protected, polar-encoded, and QPSK-modulated. Pilot and
data symbols land on the on-off supports owned by that index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fec
from .codebooks import CodebookSet
from .config import SystemConfig


@dataclass(frozen=True)
class UserMessage:
    bits: np.ndarray       # full B-bit message
    prefix_len: int        # Bp

    @property
    def mp(self) -> np.ndarray:
        return self.bits[: self.prefix_len]

    @property
    def md(self) -> np.ndarray:
        return self.bits[self.prefix_len:]

    @property
    def index(self) -> int:
        """1-based pilot/pattern index, big-endian decoding of the prefix."""
        return bits_to_int(self.mp) + 1


@dataclass(frozen=True)
class TxFrame:
    signal: np.ndarray         # length-n complex frame, zero off-support
    pilot_support: np.ndarray  # active rows in [0, n_p_prime)
    data_support: np.ndarray   # active rows in [n_p_prime, n)


def bits_to_int(bits) -> int:
    """Big-endian bits to integer (first bit most significant)."""
    value = 0
    for b in np.asarray(bits, dtype=np.int64):
        value = (value << 1) | int(b)
    return value


def int_to_bits(value: int, width: int) -> np.ndarray:
    if not 0 <= value < (1 << width):
        raise ValueError(f"{value} does not fit in {width} bits")
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.int8)


def split_message(bits, prefix_len: int) -> UserMessage:
    arr = np.asarray(bits, dtype=np.int8)
    if arr.ndim != 1:
        raise ValueError("message must be a flat bit vector")
    if not 0 < prefix_len < arr.size:
        raise ValueError(f"prefix length {prefix_len} invalid for {arr.size} message bits")
    return UserMessage(bits=arr.copy(), prefix_len=prefix_len)


def draw_messages(count: int, n_bits: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. uniform messages, shape (count, n_bits)."""
    return rng.integers(0, 2, size=(count, n_bits), dtype=np.int8)


def encode_user(msg: UserMessage, books: CodebookSet, spec: fec.PolarCodeSpec,
                cfg: SystemConfig) -> TxFrame:
    """Assemble one user's length-n transmit frame."""
    if msg.bits.size != cfg.B or msg.prefix_len != cfg.Bp:
        raise ValueError("message does not match the configured B/Bp split")
    idx0 = msg.index - 1
    signal = np.zeros(cfg.n, dtype=complex)

    pilot_support = books.pilot_pattern.column_support(idx0).astype(np.int64)
    signal[pilot_support] = books.pilot.matrix[:, idx0]

    coded = fec.polar_encode(spec, fec.crc_attach(msg.md, spec))
    symbols = fec.qpsk_map(coded, cfg.Pd)
    data_support = cfg.n_p_prime + books.data_pattern.column_support(idx0).astype(np.int64)
    signal[data_support] = symbols
    return TxFrame(signal=signal, pilot_support=pilot_support, data_support=data_support)


def superimpose(frames: list[TxFrame], channel_matrix: np.ndarray) -> np.ndarray:
    """Noiseless received matrix: sum over users of (frame column) x (channel row)."""
    if len(frames) != channel_matrix.shape[0]:
        raise ValueError("one channel row is required per transmitted frame")
    signals = np.stack([f.signal for f in frames], axis=1)  # (n, Ka)
    return signals @ channel_matrix
