"""Network layouts, large-scale fading, multipath CIR and self-interference
draws, and the mapping from time-domain taps to per-subcarrier channels.

All randomness flows through an explicitly passed numpy Generator, so every
artifact here is a pure function of (config, seed). The draw order inside
each function is fixed and must not be reordered: replay depends on it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig, InterferenceProfile

D_MIN = 1.0          # m, distance clamp before path-loss evaluation
PL_INTERCEPT = -30.5  # dB at 1 m
PL_EXPONENT = 3.8
SHADOWING_STD = 4.0   # dB


@dataclass(frozen=True)
class Layout:
    ap_positions: np.ndarray  # [L, 2] in meters
    ms_positions: np.ndarray  # [D, 2]


@dataclass(frozen=True)
class LargeScaleFading:
    beta_ap_ms: np.ndarray  # [L, D] linear
    beta_ap_ap: np.ndarray  # [L, L], zero diagonal, symmetric
    beta_ms_ms: np.ndarray  # [D, D], zero diagonal, symmetric


@dataclass(frozen=True)
class ChannelSet:
    cir_ap_ms: np.ndarray  # [L, D, N, U]
    cir_ap_ap: np.ndarray  # [L, L, N, N, U]
    cir_ms_ms: np.ndarray  # [D, D, U]
    si_ap: np.ndarray      # [L, N, N]
    si_ms: np.ndarray      # [D]


@dataclass(frozen=True)
class SubcarrierMap:
    dl_indices: np.ndarray   # ordered, size M
    ul_indices: np.ndarray   # ordered, size M_bar, evenly spaced in MDD
    dft: np.ndarray          # unitary M_sum x M_sum DFT matrix
    tap_selector: np.ndarray  # M_sum x U, first U columns of identity


@dataclass(frozen=True)
class FrequencyChannels:
    h_ap_ms_dl: np.ndarray  # [L, D, N, M]
    h_ap_ms_ul: np.ndarray  # [L, D, N, M_bar]
    h_ap_ap_dl: np.ndarray  # [L, L, N, N, M]
    h_ms_ms_ul: np.ndarray  # [D, D, M_bar]


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circular complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


# --------------------------------------------------------------------------
# geometry and large-scale fading
# --------------------------------------------------------------------------

def generate_layout(cfg: SystemConfig, rng: np.random.Generator) -> Layout:
    """APs then MSs, i.i.d. uniform over the square deployment area."""
    ap = rng.uniform(0.0, cfg.cell_length, size=(cfg.num_aps, 2))
    ms = rng.uniform(0.0, cfg.cell_length, size=(cfg.num_ms, 2))
    return Layout(ap_positions=ap, ms_positions=ms)


def path_loss_db(distance_m) -> np.ndarray:
    d = np.maximum(np.asarray(distance_m, dtype=float), D_MIN)
    return PL_INTERCEPT - 10.0 * PL_EXPONENT * np.log10(d)


def _pairwise(a, b):
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def large_scale(layout: Layout, rng: np.random.Generator) -> LargeScaleFading:
    """Linear large-scale gains: path loss plus log-normal shadowing.

    Shadowing draws, in order: AP-MS grid, AP-AP upper triangle, MS-MS upper
    triangle. AP-AP and MS-MS matrices are symmetric with zero diagonal.
    """
    d_ap_ms = _pairwise(layout.ap_positions, layout.ms_positions)
    d_ap_ap = _pairwise(layout.ap_positions, layout.ap_positions)
    d_ms_ms = _pairwise(layout.ms_positions, layout.ms_positions)

    L = d_ap_ap.shape[0]
    D = d_ms_ms.shape[0]

    # shadowing can push a near-field gain past unity; clamp keeps it passive
    beta_ap_ms = np.minimum(
        10.0 ** ((path_loss_db(d_ap_ms)
                  + SHADOWING_STD * rng.standard_normal((L, D))) / 10), 1.0)

    def symmetric(dist, n):
        sh = np.zeros((n, n))
        iu = np.triu_indices(n, k=1)
        sh[iu] = SHADOWING_STD * rng.standard_normal(len(iu[0]))
        sh += sh.T
        beta = np.minimum(10.0 ** ((path_loss_db(dist) + sh) / 10), 1.0)
        np.fill_diagonal(beta, 0.0)
        return beta

    return LargeScaleFading(
        beta_ap_ms=beta_ap_ms,
        beta_ap_ap=symmetric(d_ap_ap, L),
        beta_ms_ms=symmetric(d_ms_ms, D),
    )


# --------------------------------------------------------------------------
# small-scale channels
# --------------------------------------------------------------------------

def generate_channels(fading: LargeScaleFading, cfg: SystemConfig,
                      profile: InterferenceProfile,
                      rng: np.random.Generator) -> ChannelSet:
    """Draw every CIR tap i.i.d. CN(0, beta/U) and the self-interference
    channels at their residual levels.

    Draw order: AP-MS taps, AP-AP taps, MS-MS taps, AP SI matrices, MS SI
    scalars.
    """
    L, D, N, U = cfg.num_aps, cfg.num_ms, cfg.antennas_per_ap, cfg.delay_taps

    scale_ap_ms = np.sqrt(fading.beta_ap_ms / U)[:, :, None, None]
    cir_ap_ms = scale_ap_ms * _crandn(rng, (L, D, N, U))

    scale_ap_ap = np.sqrt(fading.beta_ap_ap / U)[:, :, None, None, None]
    cir_ap_ap = scale_ap_ap * _crandn(rng, (L, L, N, N, U))

    scale_ms_ms = np.sqrt(fading.beta_ms_ms / U)[:, :, None]
    cir_ms_ms = scale_ms_ms * _crandn(rng, (D, D, U))

    si_ap = np.sqrt(profile.si_ap) * _crandn(rng, (L, N, N))
    si_ms = np.sqrt(profile.si_ms) * _crandn(rng, (D,))

    return ChannelSet(cir_ap_ms=cir_ap_ms, cir_ap_ap=cir_ap_ap,
                      cir_ms_ms=cir_ms_ms, si_ap=si_ap, si_ms=si_ms)


def predict_channels(channels: ChannelSet, fading: LargeScaleFading,
                     cfg: SystemConfig, profile: InterferenceProfile,
                     eps: float, rng: np.random.Generator) -> ChannelSet:
    """One-step channel prediction surrogate.

    Blends each CIR with an independent fresh draw of the same variance,
    sqrt(1 - eps^2) * g + eps * fresh, so per-tap power is preserved for any
    eps in [0, 1]. eps = 0 returns the input unchanged. SI draws are local
    hardware leakage, not predicted: they pass through.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    if eps == 0.0:
        return channels
    fresh = generate_channels(fading, cfg, profile, rng)
    keep = np.sqrt(1.0 - eps ** 2)
    return ChannelSet(
        cir_ap_ms=keep * channels.cir_ap_ms + eps * fresh.cir_ap_ms,
        cir_ap_ap=keep * channels.cir_ap_ap + eps * fresh.cir_ap_ap,
        cir_ms_ms=keep * channels.cir_ms_ms + eps * fresh.cir_ms_ms,
        si_ap=channels.si_ap,
        si_ms=channels.si_ms,
    )


# --------------------------------------------------------------------------
# frequency mapping
# --------------------------------------------------------------------------

def partition_subcarriers(cfg: SystemConfig) -> SubcarrierMap:
    """Index sets plus the DFT/tap-selection matrices.

    In MDD the UL subcarriers sit on an even grid {0, s, 2s, ...} with
    stride s = M_sum / M_bar and the DL takes the complement; TDD and IBFD
    hand the full pool to both directions.
    """
    m_sum, m_bar = cfg.total_subcarriers, cfg.ul_subcarriers
    if cfg.duplex_mode == "mdd":
        if m_sum % m_bar != 0:
            raise ValueError(
                f"uneven UL grid: {m_sum} subcarriers cannot host {m_bar} "
                "evenly spaced UL subcarriers")
        stride = m_sum // m_bar
        ul = np.arange(0, m_sum, stride)
        dl = np.setdiff1d(np.arange(m_sum), ul)
    else:
        ul = np.arange(m_sum)
        dl = np.arange(m_sum)

    k = np.arange(m_sum)
    dft = np.exp(-2j * np.pi * np.outer(k, k) / m_sum) / np.sqrt(m_sum)
    selector = np.eye(m_sum, cfg.delay_taps)
    return SubcarrierMap(dl_indices=dl, ul_indices=ul, dft=dft,
                         tap_selector=selector)


def to_frequency(channels: ChannelSet, smap: SubcarrierMap) -> FrequencyChannels:
    """Per-subcarrier channels h = F Psi g, sliced to the DL/UL index sets.

    The unitary DFT normalization makes the per-subcarrier ensemble power
    exactly beta / M_sum.
    """
    trans = smap.dft @ smap.tap_selector  # [M_sum, U]
    u = channels.cir_ap_ms.shape[-1]
    if trans.shape[1] != u:
        raise ValueError(
            f"tap selector expects {trans.shape[1]} taps, channels have {u}")

    def lift(g):
        return np.einsum("mu,...u->...m", trans, g)

    ap_ms = lift(channels.cir_ap_ms)
    ap_ap = lift(channels.cir_ap_ap)
    ms_ms = lift(channels.cir_ms_ms)
    return FrequencyChannels(
        h_ap_ms_dl=ap_ms[..., smap.dl_indices],
        h_ap_ms_ul=ap_ms[..., smap.ul_indices],
        h_ap_ap_dl=ap_ap[..., smap.dl_indices],
        h_ms_ms_ul=ms_ms[..., smap.ul_indices],
    )


# --------------------------------------------------------------------------
# dump / replay
# --------------------------------------------------------------------------

def save_channels(channels: ChannelSet, path) -> None:
    """Dump a ChannelSet to an .npz archive (keys = field names), bit-exact."""
    np.savez(path, cir_ap_ms=channels.cir_ap_ms, cir_ap_ap=channels.cir_ap_ap,
             cir_ms_ms=channels.cir_ms_ms, si_ap=channels.si_ap,
             si_ms=channels.si_ms)


def load_channels(path) -> ChannelSet:
    with np.load(path) as data:
        return ChannelSet(cir_ap_ms=data["cir_ap_ms"],
                          cir_ap_ap=data["cir_ap_ap"],
                          cir_ms_ms=data["cir_ms_ms"],
                          si_ap=data["si_ap"], si_ms=data["si_ms"])
