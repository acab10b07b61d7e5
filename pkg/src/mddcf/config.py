"""Scenario configuration: system sizes, frame timing, power budgets, residual
interference levels, QoS targets and solver knobs.

Everything is stored in linear SI units (watts, seconds, Hz). Config files may
give interference levels in dB and the noise floor in dBm through ``*_db`` /
``*_dbm`` keys; those are converted once at load time and all downstream
computation stays linear.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, fields, replace

SPEED_OF_LIGHT = 3.0e8  # m/s

# Residual interference levels used when a scenario is evaluated under in-band
# full duplex: analog/digital cancellation leaves far more cross-talk than a
# subcarrier-orthogonal design.
IBFD_IAI = 10.0 ** (-40 / 10)
IBFD_IMI = 1.0


class ConfigError(ValueError):
    """A config file failed schema or invariant checks."""


# --------------------------------------------------------------------------
# sections
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemConfig:
    """Network dimensions and the duplexing arrangement."""

    num_aps: int = 12            # L
    num_ms: int = 4              # D, single-antenna terminals
    antennas_per_ap: int = 6     # N
    dl_subcarriers: int = 32     # M
    ul_subcarriers: int = 16     # M_bar
    total_subcarriers: int = 48  # M_sum, the shared pool
    delay_taps: int = 4          # U, CIR length
    cell_length: float = 400.0   # side of the square area, m
    duplex_mode: str = "mdd"     # mdd | tdd | ibfd


@dataclass(frozen=True)
class FrameConfig:
    """Timing of one coherence interval and of the radio frame.

    ``coherence_symbols`` is normally derived from mobility via
    :func:`derive_frame`; the defaults below correspond to 5 km/h at 5 GHz
    with a 71.35 us OFDM symbol.
    """

    symbol_duration: float = 71.35e-6   # s
    coherence_symbols: int = 302        # T_c
    pilot_symbols: int = 15             # gamma_P
    guard_symbols: int = 15             # gamma_G, TDD only
    tdd_dl_symbols: int = 181
    tdd_ul_symbols: int = 91
    intervals_per_frame: int = 10       # N_c
    relative_speed: float = 5.0         # km/h
    carrier_freq: float = 5.0e9         # Hz


@dataclass(frozen=True)
class PowerConfig:
    ap_budget: float = 10.0        # P_l, W per AP
    ms_budget: float = 1.0         # P_d, W per MS
    pilot_power: float = 0.6       # W per UL subcarrier during training
    noise_power: float = 10.0 ** ((-94 - 30) / 10)  # -94 dBm in W


@dataclass(frozen=True)
class InterferenceProfile:
    """Residual interference levels after cancellation, linear scale."""

    si_ap: float = 1e-13             # -130 dB, AP self-interference
    si_ms: float = 1e-12             # -120 dB, MS self-interference
    iai: float = 10.0 ** (-72 / 10)  # inter-AP
    imi: float = 10.0 ** (-42 / 10)  # inter-MS


#: Interference-free profile used for half-duplex (TDD) evaluation. Built
#: directly, bypassing the (0, 1] checks that apply to loaded profiles.
SILENT_PROFILE = InterferenceProfile(si_ap=0.0, si_ms=0.0, iai=0.0, imi=0.0)


@dataclass(frozen=True)
class QoSConfig:
    chi_dl: float = 0.5   # nats/s/Hz per MS, downlink
    chi_ul: float = 0.1   # uplink


@dataclass(frozen=True)
class OptimizerConfig:
    kappa: float = 1e-3             # activation threshold on p/budget
    inner_tol: float = 1e-5         # relative objective tolerance
    max_inner_iters: int = 25
    max_outer_iters: int = 8
    bisection_tol: float = 1e-3     # on the eta interval, relative to eta_max
    max_bisection_iters: int = 10
    prediction_error_eps: float = 0.0  # [0, 1]; 0 = perfect prediction


@dataclass(frozen=True)
class SimulationConfig:
    system: SystemConfig = SystemConfig()
    frame: FrameConfig = FrameConfig()
    power: PowerConfig = PowerConfig()
    interference: InterferenceProfile = InterferenceProfile()
    qos: QoSConfig = QoSConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    # Use the literally printed radio-frame coefficient instead of the
    # time-share convex combination; see metrics.se_radio_frame.
    literal_frame_formula: bool = False


_SECTIONS = ("system", "frame", "power", "interference", "qos", "optimizer")

# flat key -> (section, field); built once from the dataclasses
_KEY_MAP = {}
for _sec, _cls in zip(_SECTIONS, (SystemConfig, FrameConfig, PowerConfig,
                                  InterferenceProfile, QoSConfig, OptimizerConfig)):
    for _f in fields(_cls):
        _KEY_MAP[_f.name] = (_sec, _f.name)

_DB_KEYS = {f"{name}_db": name for name in ("si_ap", "si_ms", "iai", "imi")}
_DBM_KEYS = {"noise_power_dbm": "noise_power"}


# --------------------------------------------------------------------------
# loading / validation
# --------------------------------------------------------------------------

def _coerce(section_cls, name, value):
    ftype = next(f.type for f in fields(section_cls) if f.name == name)
    if ftype == "int":
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"key '{name}': expected an integer, got {value!r}")
        return int(value)
    if ftype == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{name}': expected a number, got {value!r}")
        return float(value)
    if ftype == "str":
        if not isinstance(value, str):
            raise ConfigError(f"key '{name}': expected a string, got {value!r}")
        return value.lower()
    raise ConfigError(f"key '{name}': unsupported type")


def config_from_dict(raw: dict) -> SimulationConfig:
    """Build and validate a config from a flat key dict; absent keys keep
    their defaults."""
    staged = {sec: {} for sec in _SECTIONS}
    top = {}
    for key, value in raw.items():
        if key in _DB_KEYS:
            key, value = _DB_KEYS[key], 10.0 ** (float(value) / 10)
        elif key in _DBM_KEYS:
            key, value = _DBM_KEYS[key], 10.0 ** ((float(value) - 30) / 10)
        if key == "literal_frame_formula":
            if not isinstance(value, bool):
                raise ConfigError("key 'literal_frame_formula': expected a boolean")
            top[key] = value
            continue
        if key not in _KEY_MAP:
            raise ConfigError(f"unknown config key '{key}'")
        sec, name = _KEY_MAP[key]
        staged[sec][name] = value

    classes = dict(zip(_SECTIONS, (SystemConfig, FrameConfig, PowerConfig,
                                   InterferenceProfile, QoSConfig, OptimizerConfig)))
    built = {}
    for sec, cls in classes.items():
        kwargs = {n: _coerce(cls, n, v) for n, v in staged[sec].items()}
        built[sec] = cls(**kwargs)
    cfg = SimulationConfig(**built, **top)
    validate(cfg)
    return cfg


def load_config(path=None) -> SimulationConfig:
    """Load a JSON config file; ``None`` falls back to $MDDCF_CONFIG and then
    to the built-in defaults."""
    if path is None:
        path = os.environ.get("MDDCF_CONFIG")
    if path is None:
        cfg = SimulationConfig()
        validate(cfg)
        return cfg
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error at {path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    return config_from_dict(raw)


def serialize(cfg: SimulationConfig) -> dict:
    """Flat dict of every field in linear units; inverse of config_from_dict."""
    out = {}
    for sec in _SECTIONS:
        section = getattr(cfg, sec)
        for f in fields(section):
            out[f.name] = getattr(section, f.name)
    out["literal_frame_formula"] = cfg.literal_frame_formula
    return out


def save_config(cfg: SimulationConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(serialize(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def validate(cfg: SimulationConfig) -> None:
    """Raise ConfigError naming the offending field on any invariant break."""
    s, fr, pw = cfg.system, cfg.frame, cfg.power
    prof, qos, opt = cfg.interference, cfg.qos, cfg.optimizer

    for name in ("num_aps", "num_ms", "antennas_per_ap", "dl_subcarriers",
                 "ul_subcarriers", "total_subcarriers", "delay_taps"):
        _require(getattr(s, name) >= 1, f"{name} must be a positive integer")
    _require(s.cell_length > 0, "cell_length must be positive")
    _require(s.duplex_mode in ("mdd", "tdd", "ibfd"),
             f"duplex_mode must be mdd, tdd or ibfd, got {s.duplex_mode!r}")
    if s.duplex_mode == "mdd":
        _require(s.total_subcarriers == s.dl_subcarriers + s.ul_subcarriers,
                 "total_subcarriers must equal dl_subcarriers + ul_subcarriers")
    else:
        _require(s.dl_subcarriers == s.ul_subcarriers == s.total_subcarriers,
                 "tdd/ibfd modes use the full pool in both directions "
                 "(dl_subcarriers = ul_subcarriers = total_subcarriers)")
    _require(s.antennas_per_ap >= s.num_ms,
             "antennas_per_ap must be >= num_ms for zero-forcing")

    _require(fr.symbol_duration > 0, "symbol_duration must be positive")
    _require(fr.carrier_freq > 0, "carrier_freq must be positive")
    _require(fr.relative_speed > 0, "relative_speed must be positive")
    for name in ("coherence_symbols", "pilot_symbols", "guard_symbols",
                 "tdd_dl_symbols", "tdd_ul_symbols", "intervals_per_frame"):
        _require(getattr(fr, name) >= 1, f"{name} must be a positive integer")
    _require(fr.pilot_symbols < fr.coherence_symbols,
             "pilot_symbols must be smaller than coherence_symbols")
    if s.duplex_mode == "tdd":
        total = (fr.pilot_symbols + fr.guard_symbols
                 + fr.tdd_dl_symbols + fr.tdd_ul_symbols)
        _require(total == fr.coherence_symbols,
                 "tdd frame sections must sum to coherence_symbols "
                 f"({total} != {fr.coherence_symbols})")

    for name in ("ap_budget", "ms_budget", "pilot_power", "noise_power"):
        _require(getattr(pw, name) > 0, f"{name} must be positive")

    # half-duplex evaluation runs interference-free, so zero is legal there
    si_low = 0.0 if s.duplex_mode == "tdd" else None
    for name in ("si_ap", "si_ms"):
        value = getattr(prof, name)
        ok = (0 <= value <= 1) if si_low == 0.0 else (0 < value <= 1)
        _require(ok, f"{name} must lie in (0, 1]")
    _require(prof.si_ap <= prof.si_ms,
             "si_ap must not exceed si_ms (AP-side cancellation is stronger)")
    for name in ("iai", "imi"):
        _require(getattr(prof, name) >= 0, f"{name} must be non-negative")

    _require(qos.chi_dl >= 0 and qos.chi_ul >= 0, "QoS targets must be non-negative")

    _require(0 < opt.kappa < 1, "kappa must lie in (0, 1)")
    for name in ("inner_tol", "bisection_tol"):
        _require(getattr(opt, name) > 0, f"{name} must be positive")
    for name in ("max_inner_iters", "max_outer_iters", "max_bisection_iters"):
        _require(getattr(opt, name) >= 1, f"{name} must be a positive integer")
    _require(0 <= opt.prediction_error_eps <= 1,
             "prediction_error_eps must lie in [0, 1]")


# --------------------------------------------------------------------------
# frame derivation
# --------------------------------------------------------------------------

def derive_frame(relative_speed, carrier_freq, symbol_duration, pilot_symbols,
                 guard_symbols=15, dl_subcarriers=32, ul_subcarriers=16,
                 intervals_per_frame=10, coherence_symbols=None) -> FrameConfig:
    """Derive frame timing from mobility.

    The coherence time is t_ct = c / (2 v f_c), so T_c = floor(t_ct / t_s)
    symbols fit in one interval. The TDD data section splits in the ratio of
    DL to UL subcarrier counts. ``coherence_symbols`` overrides the derived
    T_c when a fixed interval length is wanted.
    """
    if relative_speed <= 0:
        raise ConfigError("relative_speed must be positive")
    if carrier_freq <= 0:
        raise ConfigError("carrier_freq must be positive")
    if symbol_duration <= 0:
        raise ConfigError("symbol_duration must be positive")

    if coherence_symbols is None:
        v_ms = relative_speed * (1000.0 / 3600.0)
        t_ct = SPEED_OF_LIGHT / (2.0 * v_ms * carrier_freq)
        coherence_symbols = int(math.floor(t_ct / symbol_duration))

    remaining = coherence_symbols - pilot_symbols - guard_symbols
    if remaining < 2:
        raise ConfigError(
            "coherence interval too short: "
            f"T_c={coherence_symbols} leaves {remaining} data symbols after "
            f"{pilot_symbols} pilot and {guard_symbols} guard symbols")
    dl = int(remaining * dl_subcarriers / (dl_subcarriers + ul_subcarriers) + 0.5)
    dl = min(max(dl, 1), remaining - 1)
    return FrameConfig(
        symbol_duration=symbol_duration,
        coherence_symbols=coherence_symbols,
        pilot_symbols=pilot_symbols,
        guard_symbols=guard_symbols,
        tdd_dl_symbols=dl,
        tdd_ul_symbols=remaining - dl,
        intervals_per_frame=intervals_per_frame,
        relative_speed=relative_speed,
        carrier_freq=carrier_freq,
    )


def with_speed(cfg: SimulationConfig, relative_speed: float) -> SimulationConfig:
    """Config with frame timing re-derived for a new MS speed."""
    frame = derive_frame(
        relative_speed, cfg.frame.carrier_freq, cfg.frame.symbol_duration,
        cfg.frame.pilot_symbols, cfg.frame.guard_symbols,
        cfg.system.dl_subcarriers, cfg.system.ul_subcarriers,
        cfg.frame.intervals_per_frame)
    return replace(cfg, frame=frame)


def config_for_mode(cfg: SimulationConfig, mode: str) -> SimulationConfig:
    """Variant of ``cfg`` evaluated under a given duplex mode.

    TDD and IBFD occupy the full subcarrier pool in both directions; TDD is
    interference-free, IBFD carries the heavy co-channel residual levels.
    The underlying channel statistics are untouched.
    """
    mode = mode.lower()
    if mode not in ("mdd", "tdd", "ibfd"):
        raise ConfigError(f"unknown duplex mode {mode!r}")
    if mode == "mdd":
        system = replace(cfg.system, duplex_mode="mdd")
        return replace(cfg, system=system)
    system = replace(cfg.system, duplex_mode=mode,
                     dl_subcarriers=cfg.system.total_subcarriers,
                     ul_subcarriers=cfg.system.total_subcarriers)
    if mode == "tdd":
        return replace(cfg, system=system, interference=SILENT_PROFILE)
    profile = replace(cfg.interference, iai=IBFD_IAI, imi=IBFD_IMI)
    return replace(cfg, system=system, interference=profile)
