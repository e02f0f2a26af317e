"""System parameters and derived quantities.

A :class:`SystemConfig` carries every scalar knob of the link simulation.
Instances are frozen so they can be shared freely across parallel trials.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

SIC_INITIAL = "initial"
SIC_REESTIMATE = "reest"
SIC_MODES = (SIC_INITIAL, SIC_REESTIMATE)


@dataclass(frozen=True)
class SystemConfig:
    n: int = 3200            # frame length in channel uses
    B: int = 100             # message bits per user
    Bp: int = 15             # leading bits selecting the pilot/pattern index
    n_p: int = 600           # pilot sequence length (symbols)
    n_p_prime: int = 1000    # pilot part length (time instances)
    n_c: int = 1024          # channel code block length
    r: int = 16              # CRC bits appended to the coded payload
    n_d: int = 512           # data symbols per user (= n_c / 2 under QPSK)
    M: int = 50              # receive antennas
    Ka: int = 100            # active users per frame
    Kt: int = 0              # total user population, reporting only (0 = unspecified)
    N0: float = 1.0          # noise variance per complex sample
    Pp: float = 1.0          # average pilot symbol power
    Pd: float = 1.0          # average data symbol power
    delta: int = 10          # detector over-selection margin on top of Ka
    n_omp: int = 4           # greedy detection iterations
    n_max: int = 10          # max receiver decoding iterations
    n_list: int = 128        # list size of the list decoder
    epsilon: float = 0.05    # target per-user probability of error
    sic_mode: str = SIC_REESTIMATE
    seed: int = 0            # master RNG seed

    @property
    def codebook_size(self) -> int:
        """Number of pilot/pattern choices, 2**Bp."""
        return 1 << self.Bp

    @property
    def payload_bits(self) -> int:
        """Message bits carried by the channel code, B - Bp."""
        return self.B - self.Bp

    @property
    def code_info_bits(self) -> int:
        """Information length of the channel code including CRC, B - Bp + r."""
        return self.B - self.Bp + self.r

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "SystemConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise ValueError("invalid config: " + "; ".join(self.violations))


def validate(cfg: SystemConfig) -> ValidationReport:
    """Check every structural invariant, naming each violation individually."""
    bad: list[str] = []

    for name in ("n", "B", "Bp", "n_p", "n_p_prime", "n_c", "r", "n_d",
                 "M", "Ka", "delta", "n_omp", "n_max", "n_list"):
        if getattr(cfg, name) < 1:
            bad.append(f"{name} must be strictly positive")
    for name in ("N0", "Pp", "Pd"):
        if getattr(cfg, name) <= 0:
            bad.append(f"{name} must be strictly positive")

    if cfg.Bp > 32:
        bad.append("Bp exceeds 32")
    if cfg.Bp >= cfg.B:
        bad.append("Bp must leave at least one coded payload bit (Bp < B)")
    if cfg.n_p > cfg.n_p_prime:
        bad.append("pilot part shorter than pilot sequence")
    if cfg.n_p_prime >= cfg.n:
        bad.append("pilot part must leave room for the data part (n_p_prime < n)")
    if 2 * cfg.n_d != cfg.n_c:
        bad.append("QPSK symbol count mismatch")
    if cfg.n_d > cfg.n - cfg.n_p_prime:
        bad.append("data symbols exceed the data part length")
    if cfg.n_c & (cfg.n_c - 1):
        bad.append("code length must be a power of two")
    if cfg.n_c > 1024:
        bad.append("code length exceeds the shipped reliability order (1024)")
    if cfg.code_info_bits > cfg.n_c:
        bad.append("information+CRC bits exceed the code length")
    if cfg.Bp <= 32 and cfg.codebook_size < cfg.n_p:
        bad.append("codebook size 2^Bp smaller than pilot length (DFT row sub-sampling undefined)")
    if not 0 < cfg.epsilon < 1:
        bad.append("epsilon must lie in (0, 1)")
    if cfg.sic_mode not in SIC_MODES:
        bad.append(f"sic_mode must be one of {SIC_MODES}")
    if cfg.Kt and cfg.Kt < cfg.Ka:
        bad.append("total users Kt smaller than active users Ka")

    return ValidationReport(tuple(bad))


def energy_per_bit(cfg: SystemConfig) -> tuple[float, float]:
    """Energy per information bit over noise level, linear and in dB.

    (n_p*Pp + n_d*Pd) / (B*N0). The dB value is -inf when the total power
    is zero.
    """
    linear = (cfg.n_p * cfg.Pp + cfg.n_d * cfg.Pd) / (cfg.B * cfg.N0)
    db = 10.0 * math.log10(linear) if linear > 0 else -math.inf
    return linear, db
