"""Per-AP, per-subcarrier zero-forcing precoders and combiners.

Both directions reduce to the right pseudo-inverse of the matrix whose rows
are the served MSs' channels at one (AP, subcarrier): DL columns are then
normalized to unit power with the lost amplitude kept as omega, UL columns
are left raw so each combiner has unit gain toward its own MS and upsilon
records its noise amplification.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import FrequencyChannels

COND_LIMIT = 1e12


class DegenerateChannelError(ValueError):
    """Served channel matrix is numerically rank-deficient."""


@dataclass(frozen=True)
class BeamformerSet:
    precoders: np.ndarray  # [L, M, N, D], unit-norm columns where served
    combiners: np.ndarray  # [L, M_bar, N, D], raw ZF columns
    omega: np.ndarray      # [L, D, M], effective DL amplitude per stream
    upsilon: np.ndarray    # [L, D, M_bar], squared combiner norm


def _zf_raw(rows: np.ndarray, where: str) -> np.ndarray:
    """Right pseudo-inverse of a full-row-rank s x N matrix via SVD."""
    u, s, vh = np.linalg.svd(rows, full_matrices=False)
    if s[-1] <= 0.0 or s[0] / s[-1] > COND_LIMIT:
        raise DegenerateChannelError(
            f"ill-conditioned served channel matrix at {where} "
            f"(condition number above {COND_LIMIT:g})")
    return vh.conj().T @ np.diag(1.0 / s) @ u.conj().T


def zf_precoders(freq: FrequencyChannels, served: np.ndarray):
    """ZF precoders over each AP's served set per DL subcarrier.

    served is a boolean [L, D, M] mask. Returns (precoders, omega); columns
    of unserved streams stay zero.
    """
    h = freq.h_ap_ms_dl
    L, D, N, M = h.shape
    f = np.zeros((L, M, N, D), dtype=complex)
    omega = np.zeros((L, D, M))
    for l in range(L):
        for m in range(M):
            idx = np.flatnonzero(served[l, :, m])
            if idx.size == 0:
                continue
            if idx.size > N:
                raise DegenerateChannelError(
                    f"AP {l} serves {idx.size} streams on DL subcarrier {m} "
                    f"with only {N} antennas")
            rows = h[l, idx, :, m].conj()  # s x N, row d is h_ld^H
            raw = _zf_raw(rows, f"AP {l}, DL subcarrier {m}")
            norms = np.linalg.norm(raw, axis=0)
            f[l, m, :, idx] = (raw / norms).T
            omega[l, idx, m] = 1.0 / norms
    return f, omega


def zf_combiners(freq: FrequencyChannels, served: np.ndarray):
    """ZF combiners over each AP's served set per UL subcarrier.

    served is a boolean [L, D, M_bar] mask. Combiners are not normalized:
    w_ld^H h_ld = 1 and upsilon = ||w_ld||^2.
    """
    h = freq.h_ap_ms_ul
    L, D, N, M_bar = h.shape
    w = np.zeros((L, M_bar, N, D), dtype=complex)
    upsilon = np.zeros((L, D, M_bar))
    for l in range(L):
        for m in range(M_bar):
            idx = np.flatnonzero(served[l, :, m])
            if idx.size == 0:
                continue
            if idx.size > N:
                raise DegenerateChannelError(
                    f"AP {l} combines {idx.size} streams on UL subcarrier "
                    f"{m} with only {N} antennas")
            rows = h[l, idx, :, m].conj()
            raw = _zf_raw(rows, f"AP {l}, UL subcarrier {m}")
            w[l, m, :, idx] = raw.T
            upsilon[l, idx, m] = np.sum(np.abs(raw) ** 2, axis=0)
    return w, upsilon


def compute_beamformers(freq: FrequencyChannels, served_dl: np.ndarray,
                        served_ul: np.ndarray) -> BeamformerSet:
    f, omega = zf_precoders(freq, served_dl)
    w, upsilon = zf_combiners(freq, served_ul)
    return BeamformerSet(precoders=f, combiners=w, omega=omega,
                         upsilon=upsilon)
