"""Frequency-domain pilot design, pilot observation under concurrent DL
transmission, MMSE CIR estimation and its error covariance.

The pilot sequences are phase ramps whose stride makes the per-MS projection
operators mutually orthogonal on an even UL grid, so each MS's taps can be
pulled out of the shared observation by a single projection. Concurrent
Phase-I DL transmission raises the observation noise floor through the
per-AP interference level, which is what couples Phase-I power to Phase-II
channel quality.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimulationConfig, InterferenceProfile
from .channel import ChannelSet, FrequencyChannels, LargeScaleFading, SubcarrierMap
from .metrics import AllocationState, theta_ul


@dataclass(frozen=True)
class PilotBook:
    x_p: np.ndarray   # [D, M_bar] unit-modulus sequences
    theta: int        # phase-ramp stride
    J: np.ndarray     # [D, M_bar, U] projection operators


@dataclass(frozen=True)
class EstimationResult:
    g_hat: np.ndarray           # [L, D, N, U] estimated CIRs
    error_cov_diag: np.ndarray  # [L, D], per-tap error variance (times I_U)
    interference: np.ndarray    # [L], I_l seen during training


def build_pilots(num_ms: int, m_bar: int, m_sum: int, u_taps: int) -> PilotBook:
    """Phase-ramp pilot book plus the per-MS projection operators.

    Requires m_bar >= num_ms * u_taps so the projections stay mutually
    orthogonal, and an even UL grid (m_sum divisible by m_bar).
    """
    if m_bar < num_ms * u_taps:
        raise ValueError(
            f"pilot capacity exceeded: {m_bar} UL subcarriers cannot "
            f"separate {num_ms} MSs with {u_taps} taps each "
            f"(need at least {num_ms * u_taps})")
    if m_sum % m_bar != 0:
        raise ValueError(
            f"uneven UL grid: {m_sum} subcarriers cannot host {m_bar} "
            "evenly spaced UL subcarriers")
    stride = m_sum // m_bar
    ul = np.arange(0, m_sum, stride)

    theta = m_bar // num_ms
    ramp = np.arange(m_bar)
    x_p = np.exp(2j * np.pi * np.outer(np.arange(num_ms) * theta, ramp) / m_bar)

    k = np.arange(m_sum)
    dft = np.exp(-2j * np.pi * np.outer(k, k) / m_sum) / np.sqrt(m_sum)
    base = dft[ul][:, :u_taps]              # rows of F Psi on the UL grid
    proj = x_p[:, :, None] * base[None, :, :]
    return PilotBook(x_p=x_p, theta=theta, J=proj)


def interference_level(l: int, phase1_alloc: AllocationState,
                       fading: LargeScaleFading,
                       profile: InterferenceProfile, m_sum: int) -> float:
    """Training-time interference at AP l caused by the Phase-I DL
    allocation: own DL spend plus IAI-weighted cross-AP spend."""
    return theta_ul(l, phase1_alloc, fading, profile, m_sum)


def observe_pilots(channels: ChannelSet, pilots: PilotBook,
                   phase1_alloc: AllocationState, fading: LargeScaleFading,
                   cfg: SimulationConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """Received training signal per (AP, antenna), [L, N, M_bar].

    Loopback of the concurrent DL transmission enters as diagonal Gaussian
    noise with per-entry variance si_ap * I_l on top of the thermal floor.
    """
    L, D, N, U = channels.cir_ap_ms.shape
    m_sum = cfg.system.total_subcarriers
    amp = np.sqrt(cfg.power.pilot_power)
    # [L, N, M_bar] signal part: sum over MSs of J_d g_ld^n
    signal = amp * np.einsum("dmu,ldnu->lnm", pilots.J, channels.cir_ap_ms)

    levels = np.array([
        interference_level(l, phase1_alloc, fading, cfg.interference, m_sum)
        for l in range(L)])
    var = cfg.power.noise_power + cfg.interference.si_ap * levels  # [L]
    m_bar = pilots.J.shape[1]
    noise = (rng.standard_normal((L, N, m_bar))
             + 1j * rng.standard_normal((L, N, m_bar))) / np.sqrt(2.0)
    return signal + np.sqrt(var)[:, None, None] * noise


def mmse_estimate(observations: np.ndarray, pilots: PilotBook,
                  fading: LargeScaleFading, interference: np.ndarray,
                  cfg: SimulationConfig) -> EstimationResult:
    """Per-tap MMSE estimate from the projected observations.

    interference is the per-AP I_l in effect while the pilots were received;
    pass zeros for interference-free training.
    """
    L, N, m_bar = observations.shape
    D = pilots.J.shape[0]
    U = pilots.J.shape[2]
    m_sum = cfg.system.total_subcarriers
    p_p = cfg.power.pilot_power
    noise = cfg.power.noise_power
    si = cfg.interference.si_ap

    # [L, D, N, U] projections J_d^H y_l^n
    projected = np.einsum("dmu,lnm->ldnu", pilots.J.conj(), observations)

    beta = fading.beta_ap_ms  # [L, D]
    floor = si * np.asarray(interference)[:, None] + noise       # [L, 1]
    den = beta * p_p * m_bar / (U * m_sum) + floor               # [L, D]
    gain = (beta * np.sqrt(p_p) / U) / den
    g_hat = gain[:, :, None, None] * projected

    err = beta / U - (beta ** 2 * p_p * m_bar / (U ** 2 * m_sum)) / den
    return EstimationResult(g_hat=g_hat, error_cov_diag=err,
                            interference=np.asarray(interference, dtype=float))


def apply_estimation_error(freq_true: FrequencyChannels,
                           result: EstimationResult,
                           smap: SubcarrierMap) -> FrequencyChannels:
    """Frequency channels as the APs believe them to be.

    AP-MS entries are lifted from the estimated CIRs; the cross-link tensors
    are not estimated (they only enter through their statistics) and pass
    through unchanged. Beams built from the result, evaluated on the true
    channels, price estimation error in as zero-forcing leakage.
    """
    trans = smap.dft @ smap.tap_selector
    lifted = np.einsum("mu,ldnu->ldnm", trans, result.g_hat)
    return FrequencyChannels(
        h_ap_ms_dl=lifted[..., smap.dl_indices],
        h_ap_ms_ul=lifted[..., smap.ul_indices],
        h_ap_ap_dl=freq_true.h_ap_ap_dl,
        h_ms_ms_ul=freq_true.h_ms_ms_ul,
    )
