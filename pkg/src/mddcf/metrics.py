"""Interference aggregates, SINRs and spectral-efficiency objectives.

Two SINR routes are kept deliberately separate. The simplified closed forms
(sinr_dl / sinr_ul) are the model the optimizer works on: ZF has removed
multi-user interference and the residual loopback terms enter as statistical
variances. The direct forms (sinr_dl_direct / sinr_ul_direct) evaluate the
received-signal expressions from actual beamformer inner products, with the
same variance model for the loopback terms. Under complete per-subcarrier
zero-forcing the two agree to numerical precision; with mismatched or
estimated beams the direct route prices in the leakage, which is exactly why
it also serves as the evaluation path for imperfectly known channels.

Subcarrier indices here are positions within the DL or UL index list of the
active SubcarrierMap, not absolute subcarrier numbers.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import SimulationConfig, InterferenceProfile, SILENT_PROFILE
from .channel import LargeScaleFading, FrequencyChannels
from .beamforming import BeamformerSet


@dataclass
class AllocationState:
    """AP-MS association, per-subcarrier activations and transmit powers.

    assoc[l, d] is binary AP-MS association, mu_dl[l, d, m] / mu_ul[d, m_bar]
    are binary subcarrier activations and p_dl / p_ul the matching transmit
    powers in watts.
    """
    assoc: np.ndarray
    mu_dl: np.ndarray
    mu_ul: np.ndarray
    p_dl: np.ndarray
    p_ul: np.ndarray

    def copy(self) -> "AllocationState":
        return AllocationState(self.assoc.copy(), self.mu_dl.copy(),
                               self.mu_ul.copy(), self.p_dl.copy(),
                               self.p_ul.copy())


def served_dl_mask(alloc: AllocationState) -> np.ndarray:
    """[L, D, M] bool: AP l precodes for MS d on DL subcarrier m."""
    return (alloc.assoc[:, :, None] * alloc.mu_dl) > 0


def served_ul_mask(alloc: AllocationState) -> np.ndarray:
    """[L, D, M_bar] bool: AP l combines MS d on UL subcarrier m_bar.

    Only associated APs take part in a user's uplink combination; an AP
    that was dropped from a user's serving set forwards nothing for it.
    """
    return (alloc.assoc[:, :, None] * alloc.mu_ul[None, :, :]) > 0


def ap_power(alloc: AllocationState) -> np.ndarray:
    """Spent DL power per AP, [L]."""
    return np.einsum("ld,ldm->l", alloc.assoc, alloc.mu_dl * alloc.p_dl)


def ms_power(alloc: AllocationState) -> np.ndarray:
    """Spent UL power per MS, [D]."""
    return np.sum(alloc.mu_ul * alloc.p_ul, axis=1)


@dataclass(frozen=True)
class SEReport:
    per_ms_dl: np.ndarray  # [D] nats/s/Hz
    per_ms_ul: np.ndarray  # [D]
    phases: dict | None = None  # two-phase breakdown where applicable

    @property
    def per_ms_total(self) -> np.ndarray:
        return self.per_ms_dl + self.per_ms_ul

    @property
    def system_total(self) -> float:
        return float(np.sum(self.per_ms_total))


# --------------------------------------------------------------------------
# interference aggregates
# --------------------------------------------------------------------------

def _ratio(num: float, den: float) -> float:
    if den == 0.0:
        if num == 0.0:
            return 0.0
        raise ValueError("interference ratio undefined: zero SI level with "
                         "a non-zero cross-interference level")
    return num / den


def _dl_cross_power(d: int, alloc: AllocationState,
                    fading: LargeScaleFading, m_sum: int) -> float:
    """Sum over other MSs of (beta_dd' / M_sum) times their spent UL power."""
    spent = np.sum(alloc.mu_ul * alloc.p_ul, axis=1)  # [D]
    weights = fading.beta_ms_ms[d] / m_sum            # zero at d itself
    return float(np.dot(weights, spent))


def _ul_cross_power(l: int, alloc: AllocationState,
                    fading: LargeScaleFading, m_sum: int) -> float:
    """Sum over other APs of (beta_ll' / M_sum) times their spent DL power."""
    spent = ap_power(alloc)
    weights = fading.beta_ap_ap[l] / m_sum
    return float(np.dot(weights, spent))


def theta_dl(d: int, alloc: AllocationState, fading: LargeScaleFading,
             profile: InterferenceProfile, m_sum: int) -> float:
    """DL-side interference aggregate for MS d: own UL spend plus the
    IMI-to-SI weighted cross-MS UL spend."""
    own = float(np.dot(alloc.mu_ul[d], alloc.p_ul[d]))
    cross = _dl_cross_power(d, alloc, fading, m_sum)
    return own + _ratio(profile.imi, profile.si_ms) * cross


def theta_ul(l: int, alloc: AllocationState, fading: LargeScaleFading,
             profile: InterferenceProfile, m_sum: int) -> float:
    """UL-side interference aggregate at AP l: own DL spend plus the
    IAI-to-SI weighted cross-AP DL spend."""
    own = float(ap_power(alloc)[l])
    cross = _ul_cross_power(l, alloc, fading, m_sum)
    return own + _ratio(profile.iai, profile.si_ap) * cross


def _dl_leak_variance(d, alloc, fading, profile, m_sum) -> float:
    # distributed form of si * theta_dl; stays finite for silent profiles
    own = float(np.dot(alloc.mu_ul[d], alloc.p_ul[d]))
    return (profile.si_ms * own
            + profile.imi * _dl_cross_power(d, alloc, fading, m_sum))


def _ul_leak_variance(l, alloc, fading, profile, m_sum) -> float:
    own = float(ap_power(alloc)[l])
    return (profile.si_ap * own
            + profile.iai * _ul_cross_power(l, alloc, fading, m_sum))


# --------------------------------------------------------------------------
# simplified SINRs
# --------------------------------------------------------------------------

def sinr_dl(d: int, m: int, alloc: AllocationState, beams: BeamformerSet,
            fading: LargeScaleFading, cfg: SimulationConfig) -> float:
    profile = cfg.interference
    m_sum = cfg.system.total_subcarriers
    gains = (alloc.assoc[:, d] * alloc.mu_dl[:, d, m]
             * np.sqrt(alloc.p_dl[:, d, m]) * beams.omega[:, d, m])
    num = float(np.sum(gains)) ** 2
    den = (_dl_leak_variance(d, alloc, fading, profile, m_sum)
           + cfg.power.noise_power)
    return num / den


def sinr_ul(d: int, m_bar: int, alloc: AllocationState, beams: BeamformerSet,
            fading: LargeScaleFading, cfg: SimulationConfig) -> float:
    if alloc.mu_ul[d, m_bar] == 0:
        return 0.0
    profile = cfg.interference
    m_sum = cfg.system.total_subcarriers
    serving = np.flatnonzero(alloc.assoc[:, d])
    if serving.size == 0:
        raise ValueError(
            f"MS {d} has an active UL subcarrier {m_bar} but no serving AP")
    # combining gain counts the serving set, not the full AP roster
    num = alloc.p_ul[d, m_bar] * float(serving.size) ** 2
    den = 0.0
    for l in serving:
        den += beams.upsilon[l, d, m_bar] * (
            _ul_leak_variance(l, alloc, fading, profile, m_sum)
            + cfg.power.noise_power)
    if den == 0.0:
        raise ValueError(
            f"combiners carry no energy for MS {d} on UL subcarrier {m_bar}; "
            "beams are inconsistent with the allocation")
    return num / den


# --------------------------------------------------------------------------
# direct-form SINRs
# --------------------------------------------------------------------------

def sinr_dl_direct(d: int, m: int, alloc: AllocationState,
                   beams: BeamformerSet, freq: FrequencyChannels,
                   fading: LargeScaleFading, cfg: SimulationConfig) -> float:
    profile = cfg.interference
    m_sum = cfg.system.total_subcarriers
    L, D = alloc.assoc.shape
    h = freq.h_ap_ms_dl[:, :, :, m]   # [L, D, N]
    f = beams.precoders[:, m]         # [L, N, D]

    amp = 0.0 + 0.0j
    mui = 0.0
    for l in range(L):
        coupling = h[l, d].conj() @ f[l]  # [D], h_ld^H f_ld'
        for d2 in range(D):
            drive = (alloc.assoc[l, d2] * alloc.mu_dl[l, d2, m]
                     * np.sqrt(alloc.p_dl[l, d2, m]))
            if d2 == d:
                amp += drive * coupling[d2]
            else:
                mui += drive ** 2 * abs(coupling[d2]) ** 2
    num = abs(amp) ** 2
    den = (mui + _dl_leak_variance(d, alloc, fading, profile, m_sum)
           + cfg.power.noise_power)
    return num / den


def sinr_ul_direct(d: int, m_bar: int, alloc: AllocationState,
                   beams: BeamformerSet, freq: FrequencyChannels,
                   fading: LargeScaleFading, cfg: SimulationConfig) -> float:
    if alloc.mu_ul[d, m_bar] == 0:
        return 0.0
    profile = cfg.interference
    m_sum = cfg.system.total_subcarriers
    L, D = alloc.assoc.shape
    h = freq.h_ap_ms_ul[:, :, :, m_bar]  # [L, D, N]
    w = beams.combiners[:, m_bar, :, d]  # [L, N]

    # stacked combiner applied to each MS's stacked channel
    gains = np.einsum("ln,ldn->d", w.conj(), h)  # [D], sum_l w^H h_ld'
    num = alloc.p_ul[d, m_bar] * abs(gains[d]) ** 2

    mui = 0.0
    for d2 in range(D):
        if d2 != d:
            mui += (alloc.mu_ul[d2, m_bar] * alloc.p_ul[d2, m_bar]
                    * abs(gains[d2]) ** 2)

    leak = 0.0
    noise_amp = 0.0
    for l in range(L):
        norm_sq = float(np.sum(np.abs(w[l]) ** 2))
        leak += norm_sq * _ul_leak_variance(l, alloc, fading, profile, m_sum)
        noise_amp += norm_sq
    den = mui + leak + cfg.power.noise_power * noise_amp
    if den == 0.0:
        raise ValueError(
            f"combiners carry no energy for MS {d} on UL subcarrier {m_bar}; "
            "beams are inconsistent with the allocation")
    return num / den


# --------------------------------------------------------------------------
# spectral efficiency
# --------------------------------------------------------------------------

def _rate_sums(alloc, beams, fading, cfg):
    D = alloc.assoc.shape[1]
    M = alloc.mu_dl.shape[2]
    M_bar = alloc.mu_ul.shape[1]
    dl = np.zeros(D)
    ul = np.zeros(D)
    for d in range(D):
        for m in range(M):
            dl[d] += np.log1p(sinr_dl(d, m, alloc, beams, fading, cfg))
        for m_bar in range(M_bar):
            ul[d] += np.log1p(sinr_ul(d, m_bar, alloc, beams, fading, cfg))
    return dl, ul


def se_mdd(alloc: AllocationState, beams: BeamformerSet,
           fading: LargeScaleFading, cfg: SimulationConfig) -> SEReport:
    """Per-interval MDD SE: simultaneous DL/UL on the split subcarrier sets,
    discounted by the pilot share of the interval."""
    frame = cfg.frame
    prefactor = 1.0 - frame.pilot_symbols / frame.coherence_symbols
    scale = prefactor / cfg.system.total_subcarriers
    dl, ul = _rate_sums(alloc, beams, fading, cfg)
    return SEReport(per_ms_dl=scale * dl, per_ms_ul=scale * ul)


def se_ibfd(alloc: AllocationState, beams: BeamformerSet,
            fading: LargeScaleFading, cfg: SimulationConfig) -> SEReport:
    """Same accounting as se_mdd; the IBFD character lives entirely in the
    config (full subcarrier pool in both directions, IBFD residual levels)."""
    return se_mdd(alloc, beams, fading, cfg)


def se_tdd(alloc: AllocationState, beams: BeamformerSet,
           fading: LargeScaleFading, cfg: SimulationConfig) -> SEReport:
    """Sequential DL then UL over the full pool, each weighted by its share
    of the interval; loopback interference forced to zero."""
    frame = cfg.frame
    quiet = dataclasses.replace(cfg, interference=SILENT_PROFILE)
    dl, ul = _rate_sums(alloc, beams, fading, quiet)
    w_dl = frame.tdd_dl_symbols / frame.coherence_symbols
    w_ul = frame.tdd_ul_symbols / frame.coherence_symbols
    m_sum = cfg.system.total_subcarriers
    return SEReport(per_ms_dl=w_dl / m_sum * dl, per_ms_ul=w_ul / m_sum * ul)


def se_radio_frame(se_ct1: float, se_tpct: float, n_c: int,
                   literal: bool = False) -> float:
    """Frame-level SE from the leading interval and the per-TPCT-interval SE.

    Default is the time-share convex combination. literal=True reproduces
    the amplified TPCT coefficient n_c/(n_c - 1) instead.
    """
    if n_c < 1:
        raise ValueError(f"a radio frame needs at least one interval, got {n_c}")
    if n_c == 1:
        return se_ct1
    if literal:
        return se_ct1 / n_c + n_c / (n_c - 1) * se_tpct
    return se_ct1 / n_c + (n_c - 1) / n_c * se_tpct
