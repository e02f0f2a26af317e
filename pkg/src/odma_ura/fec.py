"""Channel coding chain: CRC, polar encode, CRC-aided list decode, QPSK.

The code construction freezes the least reliable bit positions according to
the shipped universal reliability order (verified against a checksum at load
time). Decoding is successive-cancellation list decoding over LLRs with a
CRC-aided final selection.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .config import SystemConfig

_RELIABILITY_FILE = "data/polar_reliability_1024.txt"
_RELIABILITY_SHA256 = "16b201807fd46372f056aaea4fea053ece44d45c1924378a86c6e7a834cc1cae"

# Generator polynomials (leading x^r term implicit), keyed by CRC length.
CRC_POLYNOMIALS = {
    6: 0x21,
    8: 0x9B,
    11: 0x621,
    16: 0x1021,      # x^16 + x^12 + x^5 + 1
    24: 0xB2B117,
}

# Decoder numerics: incoming LLRs are clipped so the exact check-node update
# never produces infinities (atanh of a product clipped below 1).
_LLR_CLIP = 1.0e3
_TANH_CLIP = np.nextafter(1.0, 0.0)


@lru_cache(maxsize=1)
def reliability_order() -> np.ndarray:
    """Universal bit-reliability order for block lengths up to 1024, ascending."""
    text = resources.files("odma_ura").joinpath(_RELIABILITY_FILE).read_text(encoding="utf-8")
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    if digest != _RELIABILITY_SHA256:
        raise RuntimeError("reliability order data file failed its checksum")
    order = np.array(text.split(), dtype=np.int64)
    if order.size != 1024 or not np.array_equal(np.sort(order), np.arange(1024)):
        raise RuntimeError("reliability order data file is not a permutation of 0..1023")
    return order


def crc_remainder(bits, poly: int, r: int) -> np.ndarray:
    """Bitwise long-division CRC, zero initial register, MSB-first.

    Reference implementation; the hot paths use the GF(2) matrices below.
    """
    reg = 0
    top = 1 << r
    mask = top | poly
    for b in bits:
        reg = (reg << 1) | int(b)
        if reg & top:
            reg ^= mask
    for _ in range(r):
        reg <<= 1
        if reg & top:
            reg ^= mask
    return np.array([(reg >> (r - 1 - i)) & 1 for i in range(r)], dtype=np.int8)


def _crc_matrix(length: int, poly: int, r: int) -> np.ndarray:
    """Rows are CRCs of unit vectors; valid because the zero-init CRC is linear."""
    out = np.zeros((length, r), dtype=np.int8)
    unit = np.zeros(length, dtype=np.int8)
    for i in range(length):
        unit[i] = 1
        out[i] = crc_remainder(unit, poly, r)
        unit[i] = 0
    return out


@dataclass(frozen=True, eq=False)
class PolarCodeSpec:
    """Code layout: block length, info+CRC length, frozen set, CRC polynomial."""

    block_length: int
    info_length: int
    crc_bits: int
    crc_poly: int
    info_positions: np.ndarray    # ascending, size info_length
    frozen_positions: np.ndarray  # ascending, size block_length - info_length
    attach_matrix: np.ndarray     # (payload_length, crc_bits)
    syndrome_matrix: np.ndarray   # (info_length, crc_bits)
    frozen_mask: np.ndarray       # bool, size block_length

    @property
    def payload_length(self) -> int:
        return self.info_length - self.crc_bits


def make_polar_spec(block_length: int, info_length: int, crc_bits: int = 16,
                    crc_poly: int | None = None) -> PolarCodeSpec:
    if block_length < 2 or block_length & (block_length - 1):
        raise ValueError("block length must be a power of two >= 2")
    if block_length > 1024:
        raise ValueError("block length exceeds the shipped reliability order")
    if not 0 <= info_length <= block_length or crc_bits < 0:
        raise ValueError("need 0 <= info_length <= block_length and crc_bits >= 0")
    if crc_bits and crc_bits >= info_length:
        raise ValueError("CRC bits must leave at least one payload bit")
    if crc_poly is None:
        crc_poly = CRC_POLYNOMIALS.get(crc_bits, 0)
        if crc_bits and not crc_poly:
            raise ValueError(f"no default polynomial for a {crc_bits}-bit CRC")

    order = reliability_order()
    order = order[order < block_length]
    frozen = np.sort(order[: block_length - info_length])
    info = np.sort(order[block_length - info_length:])
    mask = np.zeros(block_length, dtype=bool)
    mask[frozen] = True

    payload = info_length - crc_bits
    attach = _crc_matrix(payload, crc_poly, crc_bits)
    syndrome = np.vstack([attach, np.eye(crc_bits, dtype=np.int8)]) if crc_bits \
        else np.zeros((info_length, 0), dtype=np.int8)
    return PolarCodeSpec(block_length=block_length, info_length=info_length,
                         crc_bits=crc_bits, crc_poly=crc_poly,
                         info_positions=info, frozen_positions=frozen,
                         attach_matrix=attach, syndrome_matrix=syndrome,
                         frozen_mask=mask)


def spec_from_config(cfg: SystemConfig) -> PolarCodeSpec:
    return make_polar_spec(cfg.n_c, cfg.code_info_bits, cfg.r)


def crc_attach(payload_bits, spec: PolarCodeSpec) -> np.ndarray:
    bits = np.asarray(payload_bits, dtype=np.int8)
    if bits.shape != (spec.payload_length,):
        raise ValueError(f"payload must have {spec.payload_length} bits, got {bits.shape}")
    crc = (bits @ spec.attach_matrix) % 2 if spec.crc_bits else np.zeros(0, np.int8)
    return np.concatenate([bits, crc.astype(np.int8)])


def crc_check(info_bits, spec: PolarCodeSpec) -> bool:
    bits = np.asarray(info_bits, dtype=np.int8)
    if bits.shape != (spec.info_length,):
        raise ValueError(f"expected {spec.info_length} bits, got {bits.shape}")
    if not spec.crc_bits:
        return True
    return not ((bits @ spec.syndrome_matrix) % 2).any()


def polar_encode(spec: PolarCodeSpec, info_bits) -> np.ndarray:
    """Place info bits on the unfrozen positions and apply the butterfly transform."""
    bits = np.asarray(info_bits, dtype=np.int8)
    if bits.shape != (spec.info_length,):
        raise ValueError(f"expected {spec.info_length} info bits, got {bits.shape}")
    x = np.zeros(spec.block_length, dtype=np.int8)
    x[spec.info_positions] = bits
    half = 1
    while half < spec.block_length:
        pairs = x.reshape(-1, 2, half)
        pairs[:, 0, :] ^= pairs[:, 1, :]
        half *= 2
    return x


@dataclass(frozen=True)
class ListDecodeResult:
    info_bits: np.ndarray | None  # info+CRC bits of the selected path, None if no pass
    passed: bool
    path_metric: float


class _ListDecoder:
    """Successive-cancellation list decode, vectorized across surviving paths."""

    def __init__(self, frozen_mask: np.ndarray, cap: int, exact: bool,
                 collapse_frozen: bool = True):
        self.frozen_mask = frozen_mask
        self.cap = cap
        self.exact = exact
        self.collapse_frozen = collapse_frozen
        # prefix counts of info positions, for the all-frozen subtree shortcut
        self._info_cum = np.concatenate([[0], np.cumsum(~frozen_mask)])
        self.pm = np.zeros(1)
        self.u = np.zeros((1, frozen_mask.size), dtype=np.int8)

    def run(self, llrs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        clipped = np.clip(llrs, -_LLR_CLIP, _LLR_CLIP)
        self._node(clipped[None, :], 0)
        return self.u, self.pm

    # check-node combine: LLR of (left xor right)
    def _combine(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.exact:
            t = np.tanh(0.5 * a) * np.tanh(0.5 * b)
            np.minimum(t, _TANH_CLIP, out=t)
            np.maximum(t, -_TANH_CLIP, out=t)
            return 2.0 * np.arctanh(t)
        return np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))

    def _penalty(self, llr: np.ndarray, bit: int) -> np.ndarray:
        signed = -llr if bit == 0 else llr
        if self.exact:
            return np.logaddexp(0.0, signed)
        return np.maximum(0.0, signed)

    def _node(self, llrs: np.ndarray, pos: int) -> tuple[np.ndarray, np.ndarray]:
        count, width = llrs.shape
        info_here = self._info_cum[pos + width] - self._info_cum[pos]
        if self.collapse_frozen and info_here == 0:
            # all-frozen subtree: output is all zero and the path penalty
            # telescopes to the sum over the node's input LLRs
            self.pm = self.pm + self._penalty(llrs, 0).sum(axis=1)
            return np.zeros((count, width), dtype=np.int8), np.arange(count)
        if self.collapse_frozen and width > 1 and info_here == 1 \
                and not self.frozen_mask[pos + width - 1]:
            # repetition subtree: only codewords 0..0 and 1..1 survive, with
            # penalties summing directly over the node's input LLRs
            return self._repetition(llrs, pos)
        if width == 1:
            return self._leaf(llrs[:, 0], pos)
        half = width // 2
        first, second = llrs[:, :half], llrs[:, half:]
        x_left, anc_left = self._node(self._combine(first, second), pos)
        right_in = second[anc_left] + (1 - 2 * x_left) * first[anc_left]
        x_right, anc_right = self._node(right_in, pos + half)
        x = np.concatenate([x_left[anc_right] ^ x_right, x_right], axis=1)
        return x, anc_left[anc_right]

    def _leaf(self, llr: np.ndarray, pos: int) -> tuple[np.ndarray, np.ndarray]:
        count = llr.shape[0]
        if self.frozen_mask[pos]:
            self.pm = self.pm + self._penalty(llr, 0)
            return np.zeros((count, 1), dtype=np.int8), np.arange(count)
        kept_bits, parents = self._fork(self.pm + self._penalty(llr, 0),
                                        self.pm + self._penalty(llr, 1), pos)
        return kept_bits[:, None], parents

    def _repetition(self, llrs: np.ndarray, pos: int) -> tuple[np.ndarray, np.ndarray]:
        width = llrs.shape[1]
        kept_bits, parents = self._fork(
            self.pm + self._penalty(llrs, 0).sum(axis=1),
            self.pm + self._penalty(llrs, 1).sum(axis=1), pos + width - 1)
        return np.repeat(kept_bits[:, None], width, axis=1), parents

    def _fork(self, metrics0: np.ndarray, metrics1: np.ndarray,
              pos: int) -> tuple[np.ndarray, np.ndarray]:
        """Split every path on the info bit at `pos`, keep the best `cap`."""
        count = metrics0.shape[0]
        metrics = np.concatenate([metrics0, metrics1])
        parents = np.concatenate([np.arange(count), np.arange(count)])
        bits = np.concatenate([np.zeros(count, np.int8), np.ones(count, np.int8)])
        if metrics.size > self.cap:
            # stable sort: ties resolve to the lower path index, bit 0 first
            keep = np.argsort(metrics, kind="stable")[: self.cap]
        else:
            keep = np.arange(metrics.size)
        self.pm = metrics[keep]
        self.u = self.u[parents[keep]]
        self.u[:, pos] = bits[keep]
        return bits[keep], parents[keep]


def scl_decode(spec: PolarCodeSpec, llrs, n_list: int,
               method: str = "exact") -> ListDecodeResult:
    """List-decode LLRs; return the best path that satisfies the CRC.

    `method` selects the check-node/path-metric arithmetic: "exact" uses the
    full tanh rule and soft path penalties, "minsum" the usual approximation.
    A failed CRC on every surviving path reports passed=False with no bits.

    An exactly-zero LLR vector carries no information, yet the all-zero path
    would pass any zero-initialized CRC; that degenerate input reports
    failure outright.
    """
    values = np.asarray(llrs, dtype=float)
    if values.shape != (spec.block_length,):
        raise ValueError(f"expected {spec.block_length} LLRs, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("LLRs must be finite")
    if method not in ("exact", "minsum"):
        raise ValueError(f"unknown decode method {method!r}")
    if not values.any():
        return ListDecodeResult(info_bits=None, passed=False, path_metric=float("inf"))
    decoder = _ListDecoder(spec.frozen_mask, max(1, int(n_list)), method == "exact")
    u_paths, metrics = decoder.run(values)

    order = np.argsort(metrics, kind="stable")
    info = u_paths[:, spec.info_positions]
    if spec.crc_bits:
        passing = ~(((info.astype(np.int64) @ spec.syndrome_matrix) % 2).any(axis=1))
    else:
        passing = np.ones(info.shape[0], dtype=bool)
    ranked_pass = passing[order]
    if not ranked_pass.any():
        return ListDecodeResult(info_bits=None, passed=False, path_metric=float("inf"))
    best = order[int(np.argmax(ranked_pass))]
    return ListDecodeResult(info_bits=info[best].copy(), passed=True,
                            path_metric=float(metrics[best]))


def payload_of(result: ListDecodeResult, spec: PolarCodeSpec) -> np.ndarray | None:
    """Strip the CRC bits off a successful decode."""
    if result.info_bits is None:
        return None
    return result.info_bits[: spec.payload_length]


def qpsk_map(bits, power: float) -> np.ndarray:
    """Gray QPSK: pair (b0, b1) -> sqrt(power/2) * ((1-2*b0) + 1j*(1-2*b1))."""
    b = np.asarray(bits, dtype=np.int8)
    if b.ndim != 1 or b.size % 2:
        raise ValueError("QPSK needs a flat, even-length bit vector")
    amp = np.sqrt(power / 2.0)
    return amp * ((1 - 2 * b[0::2]) + 1j * (1 - 2 * b[1::2]))


def qpsk_llr(symbol_estimates, gain: float, noise_var: float, power: float) -> np.ndarray:
    """Per-bit LLRs of Gray QPSK through y = gain*x + CN(0, noise_var).

    Positive LLR favors bit 0. Output is interleaved to match qpsk_map's bit
    order: even entries from the real part, odd entries from the imaginary.
    """
    if gain <= 0 or noise_var <= 0:
        raise ValueError("gain and noise variance must be positive")
    s = np.asarray(symbol_estimates, dtype=complex)
    scale = 2.0 * np.sqrt(2.0 * power) * gain / noise_var
    out = np.empty(2 * s.size, dtype=float)
    out[0::2] = scale * s.real
    out[1::2] = scale * s.imag
    return out
