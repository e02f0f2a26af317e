"""Pilot codebook, on-off transmission patterns, and the extended codebook.

The pilot codebook is a row-sub-sampled DFT matrix with power-normalized
columns. Each pilot/pattern index also owns one sparse on-off pattern for
the pilot part and one for the data part; embedding the pilot columns onto
their pattern supports yields the extended codebook used for joint
detection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import streams
from .config import SystemConfig

PILOT_KIND = "pilot"
DATA_KIND = "data"

# Columns are drawn per chunk so pattern builds stay memory-bounded at large
# codebook sizes. The value is part of the reproducibility contract: changing
# it changes how the substream is consumed.
_PATTERN_CHUNK = 512


@dataclass(frozen=True)
class PilotCodebook:
    """Complex pilot matrix of shape (n_p, N); every column has norm sqrt(n_p*Pp)."""

    matrix: np.ndarray
    rows: np.ndarray      # DFT rows kept by the sub-sampling, sorted
    power: float          # per-symbol pilot power Pp

    @property
    def length(self) -> int:
        return self.matrix.shape[0]

    @property
    def size(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class PatternMatrix:
    """On-off pattern of one frame part: per column, `weight` active rows."""

    kind: str
    supports: np.ndarray  # (N, weight) int32, each row sorted ascending
    rows: int

    @property
    def weight(self) -> int:
        return self.supports.shape[1]

    @property
    def size(self) -> int:
        return self.supports.shape[0]

    def column_support(self, index0: int) -> np.ndarray:
        """Active row indices of one column, increasing order."""
        return self.supports[index0]

    def mask(self) -> np.ndarray:
        """Dense boolean mask of shape (rows, N). Built on demand; large for big N."""
        out = np.zeros((self.rows, self.size), dtype=bool)
        cols = np.repeat(np.arange(self.size), self.weight)
        out[self.supports.ravel(), cols] = True
        return out


@dataclass(frozen=True)
class ExtendedPilotCodebook:
    """Pilot columns embedded onto their pattern supports, shape (n_p_prime, N)."""

    matrix: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class CodebookSet:
    pilot: PilotCodebook
    pilot_pattern: PatternMatrix
    data_pattern: PatternMatrix
    extended: ExtendedPilotCodebook
    seed: int


def build_pilot_codebook(cfg: SystemConfig) -> PilotCodebook:
    """Sub-sample n_p rows of the N-point DFT and normalize column power.

    Rows are drawn uniformly without replacement from a dedicated substream.
    A draw is rejected (deterministically re-drawn) when gcd(rows, N) > 1,
    which is exactly the condition under which two sub-sampled DFT columns
    coincide.
    """
    n_p, big_n = cfg.n_p, cfg.codebook_size
    if big_n < n_p:
        raise ValueError(f"codebook size {big_n} smaller than pilot length {n_p}")
    rng = streams.make_generator(cfg.seed, streams.PILOT_ROWS)
    while True:
        rows = np.sort(rng.choice(big_n, size=n_p, replace=False))
        if math.gcd(int(np.gcd.reduce(rows)), big_n) == 1:
            break
    cols = np.arange(big_n)
    matrix = np.sqrt(cfg.Pp) * np.exp(-2j * np.pi / big_n * np.outer(rows, cols))
    return PilotCodebook(matrix=matrix, rows=rows.astype(np.int64), power=cfg.Pp)


def build_pattern_matrix(cfg: SystemConfig, kind: str) -> PatternMatrix:
    """Draw each column's support uniformly without replacement.

    The pilot-part and data-part patterns use independent substreams keyed by
    (seed, kind), so they are individually reproducible.
    """
    if kind == PILOT_KIND:
        rows, weight, tag = cfg.n_p_prime, cfg.n_p, streams.PILOT_PATTERN
    elif kind == DATA_KIND:
        rows, weight, tag = cfg.n - cfg.n_p_prime, cfg.n_d, streams.DATA_PATTERN
    else:
        raise ValueError(f"unknown pattern kind {kind!r}")
    if weight > rows:
        raise ValueError(f"{kind} pattern weight {weight} exceeds {rows} rows")

    big_n = cfg.codebook_size
    supports = np.empty((big_n, weight), dtype=np.int32)
    if weight == rows:
        supports[:] = np.arange(rows, dtype=np.int32)
        return PatternMatrix(kind=kind, supports=supports, rows=rows)

    rng = streams.make_generator(cfg.seed, tag)
    for start in range(0, big_n, _PATTERN_CHUNK):
        stop = min(start + _PATTERN_CHUNK, big_n)
        # Order statistics of i.i.d. uniforms: the `weight` smallest per
        # column form a uniform random subset.
        u = rng.random((rows, stop - start))
        picked = np.argpartition(u, weight - 1, axis=0)[:weight]
        supports[start:stop] = np.sort(picked.T, axis=1)
    return PatternMatrix(kind=kind, supports=supports, rows=rows)


def extend_pilot_codebook(pilot: PilotCodebook, pattern: PatternMatrix) -> ExtendedPilotCodebook:
    """Embed pilot column i onto the support of pattern column i.

    The k-th active row (in increasing row order) carries the k-th pilot
    symbol; all other entries are zero, so column norms are preserved.
    """
    n_p, big_n = pilot.matrix.shape
    if pattern.size != big_n:
        raise ValueError("pattern and pilot codebook disagree on the number of columns")
    if pattern.weight != n_p:
        raise ValueError(
            f"pattern support size {pattern.weight} does not match pilot length {n_p}")
    out = np.zeros((pattern.rows, big_n), dtype=complex)
    cols = np.repeat(np.arange(big_n), n_p)
    out[pattern.supports.ravel(), cols] = pilot.matrix.T.ravel()
    return ExtendedPilotCodebook(matrix=out)


def build_codebooks(cfg: SystemConfig) -> CodebookSet:
    pilot = build_pilot_codebook(cfg)
    pilot_pattern = build_pattern_matrix(cfg, PILOT_KIND)
    data_pattern = build_pattern_matrix(cfg, DATA_KIND)
    extended = extend_pilot_codebook(pilot, pilot_pattern)
    return CodebookSet(pilot=pilot, pilot_pattern=pilot_pattern,
                       data_pattern=data_pattern, extended=extended, seed=cfg.seed)


def save_codebooks(path: str, books: CodebookSet) -> None:
    """Binary dump: one-line JSON header, then raw little-endian arrays.

    Array payload order matches the header's `arrays` list. Complex data is
    complex128, supports are int32, all row-major.
    """
    arrays = [
        ("pilot_matrix", books.pilot.matrix.astype("<c16")),
        ("pilot_rows", books.pilot.rows.astype("<i4")),
        ("pilot_supports", books.pilot_pattern.supports.astype("<i4")),
        ("data_supports", books.data_pattern.supports.astype("<i4")),
        ("extended_matrix", books.extended.matrix.astype("<c16")),
    ]
    header = {
        "format": 1,
        "seed": books.seed,
        "pilot_power": books.pilot.power,
        "pilot_rows_total": books.pilot_pattern.rows,
        "data_rows_total": books.data_pattern.rows,
        "arrays": [
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
            for name, arr in arrays
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_codebooks(path: str) -> CodebookSet:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != 1:
            raise ValueError(f"unsupported codebook dump format {header.get('format')!r}")
        data = {}
        for meta in header["arrays"]:
            dtype = np.dtype(meta["dtype"])
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ValueError(f"truncated codebook dump while reading {meta['name']}")
            data[meta["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()

    pilot = PilotCodebook(matrix=data["pilot_matrix"].astype(complex),
                          rows=data["pilot_rows"].astype(np.int64),
                          power=float(header["pilot_power"]))
    pilot_pattern = PatternMatrix(kind=PILOT_KIND,
                                  supports=data["pilot_supports"].astype(np.int32),
                                  rows=int(header["pilot_rows_total"]))
    data_pattern = PatternMatrix(kind=DATA_KIND,
                                 supports=data["data_supports"].astype(np.int32),
                                 rows=int(header["data_rows_total"]))
    extended = ExtendedPilotCodebook(matrix=data["extended_matrix"].astype(complex))
    return CodebookSet(pilot=pilot, pilot_pattern=pilot_pattern,
                       data_pattern=data_pattern, extended=extended,
                       seed=int(header["seed"]))
