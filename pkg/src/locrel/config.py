"""System configuration: channel settings plus numerical-method settings.

Powers are given in dBm in the JSON document and converted to watts once,
when the :class:`SystemConfig` is constructed.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ParseError, ValidationError

SPEED_OF_LIGHT = 299_792_458.0


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


@dataclass(frozen=True)
class Numerics:
    """Grid extents, sample counts and quadrature orders."""

    seed: int = 20221
    min_bs_distance: float = 1.0
    # radio map
    map_xmin: float = -400.0
    map_xmax: float = 1400.0
    map_step: float = 1.0
    map_samples: int = 1_000_000
    map_eps_levels: tuple[float, ...] = (1e-3,)
    map_node_ratio: float = 1.03
    map_table_levels: int = 400
    bs_select_mc: int = 10_000
    # quadrature
    phase_nodes: int = 64
    throughput_phase_nodes: int = 32
    hermite_nodes: int = 41
    # evaluation / calibration
    eps: float = 1e-3
    delta: float = 1e-3
    calib_xmin: float = 45.0
    calib_xmax: float = 955.0
    calib_step: float = 5.0
    fig_xmin: float = 10.0
    fig_xmax: float = 990.0
    fig_step: float = 10.0
    threads: int = 0

    def __post_init__(self) -> None:
        errors = []
        if self.min_bs_distance <= 0:
            errors.append("min_bs_distance must be > 0")
        if not self.map_xmin < self.map_xmax:
            errors.append("map_xmin must be < map_xmax")
        if self.map_step <= 0:
            errors.append("map_step must be > 0")
        if self.map_samples < 1:
            errors.append("map_samples must be >= 1")
        if not self.map_eps_levels or any(not 0 < e < 1 for e in self.map_eps_levels):
            errors.append("map_eps_levels must be non-empty with entries in (0, 1)")
        if self.map_node_ratio <= 1:
            errors.append("map_node_ratio must be > 1")
        if self.map_table_levels < 2:
            errors.append("map_table_levels must be >= 2")
        if self.bs_select_mc < 1:
            errors.append("bs_select_mc must be >= 1")
        for name in ("phase_nodes", "throughput_phase_nodes", "hermite_nodes"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if not 0 < self.eps < 1:
            errors.append("eps must be in (0, 1)")
        if not 0 < self.delta < 1:
            errors.append("delta must be in (0, 1)")
        if not self.calib_xmin <= self.calib_xmax or self.calib_step <= 0:
            errors.append("calibration grid is empty")
        if not self.fig_xmin <= self.fig_xmax or self.fig_step <= 0:
            errors.append("figure grid is empty")
        if self.threads < 0:
            errors.append("threads must be >= 0")
        if errors:
            raise ValidationError("; ".join(f"numerics.{e}" for e in errors))


@dataclass(frozen=True)
class SystemConfig:
    """Two-BS, one-dimensional OFDM system (defaults: the reference system settings)."""

    bs_positions: tuple[float, float] = (0.0, 1000.0)
    tx_power_dbm: float = 10.0
    noise_power_dbm: float = -70.0
    bandwidth_hz: float = 10e6
    carrier_freq_hz: float = 2.1e9
    n_subcarriers: int = 600
    excess_delay_s: float = 50e-9
    pdp_rho: float = 2.0
    numerics: Numerics = field(default_factory=Numerics)

    # linear-unit views, filled in __post_init__
    tx_power: float = field(init=False, repr=False, compare=False)
    noise_power: float = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        errors = []
        if len(self.bs_positions) != 2:
            errors.append("bs_positions must hold exactly two positions")
        elif self.bs_positions[0] == self.bs_positions[1]:
            errors.append("bs_positions must be distinct")
        for name in ("tx_power_dbm", "noise_power_dbm"):
            if not math.isfinite(getattr(self, name)):
                errors.append(f"{name} must be finite")
        if not self.bandwidth_hz > 0:
            errors.append("bandwidth_hz must be > 0")
        if not self.carrier_freq_hz > 0:
            errors.append("carrier_freq_hz must be > 0")
        if int(self.n_subcarriers) != self.n_subcarriers or self.n_subcarriers < 1:
            errors.append("n_subcarriers must be a positive integer")
        if not self.excess_delay_s > 0:
            errors.append("excess_delay_s must be > 0")
        if not self.pdp_rho > 0:
            errors.append("pdp_rho must be > 0")
        if errors:
            raise ValidationError("; ".join(errors))
        object.__setattr__(self, "bs_positions", tuple(float(b) for b in self.bs_positions))
        object.__setattr__(self, "tx_power", dbm_to_watt(self.tx_power_dbm))
        object.__setattr__(self, "noise_power", dbm_to_watt(self.noise_power_dbm))

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth_hz / self.n_subcarriers

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    def replace(self, **changes: Any) -> "SystemConfig":
        """Copy with top-level or ``numerics.*`` fields replaced."""
        num = {k[len("numerics."):]: v for k, v in changes.items() if k.startswith("numerics.")}
        top = {k: v for k, v in changes.items() if not k.startswith("numerics.")}
        if num:
            top["numerics"] = dataclasses.replace(top.get("numerics", self.numerics), **num)
        return dataclasses.replace(self, **top)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "bs_positions": list(self.bs_positions),
            "tx_power_dbm": self.tx_power_dbm,
            "noise_power_dbm": self.noise_power_dbm,
            "bandwidth_hz": self.bandwidth_hz,
            "carrier_freq_hz": self.carrier_freq_hz,
            "n_subcarriers": self.n_subcarriers,
            "excess_delay_s": self.excess_delay_s,
            "pdp_rho": self.pdp_rho,
        }
        num = dataclasses.asdict(self.numerics)
        num["map_eps_levels"] = list(num["map_eps_levels"])
        out["numerics"] = num
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        """Short content hash, recorded in every emitted artifact."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


_TOP_KEYS = {f.name for f in dataclasses.fields(SystemConfig) if f.init} - {"numerics"}
_NUM_KEYS = {f.name for f in dataclasses.fields(Numerics)}


def config_from_dict(doc: dict[str, Any]) -> SystemConfig:
    if not isinstance(doc, dict):
        raise ParseError("configuration document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS - {"numerics"}
    if unknown:
        raise ValidationError(f"unknown configuration keys: {sorted(unknown)}")
    num_doc = doc.get("numerics", {})
    if not isinstance(num_doc, dict):
        raise ValidationError("numerics must be an object")
    unknown = set(num_doc) - _NUM_KEYS
    if unknown:
        raise ValidationError(f"unknown numerics keys: {sorted(unknown)}")
    num_kw = dict(num_doc)
    if "map_eps_levels" in num_kw:
        num_kw["map_eps_levels"] = tuple(num_kw["map_eps_levels"])
    top = {k: v for k, v in doc.items() if k != "numerics"}
    if "bs_positions" in top:
        top["bs_positions"] = tuple(top["bs_positions"])
    try:
        return SystemConfig(numerics=Numerics(**num_kw), **top)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


def load_config(path: str | Path | None) -> SystemConfig:
    """Read a JSON configuration; missing keys take the defaults."""
    if path is None:
        return SystemConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(doc)
