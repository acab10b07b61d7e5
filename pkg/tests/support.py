"""Shared builders and checks for the optimizer-level test suites."""
import itertools
import math

import numpy as np

from mddcf.beamforming import compute_beamformers
from mddcf.channel import (generate_channels, generate_layout, large_scale,
                           partition_subcarriers, to_frequency)
from mddcf.config import config_from_dict
from mddcf.metrics import (ap_power, ms_power, served_dl_mask, served_ul_mask,
                           sinr_dl, sinr_ul)
from mddcf.optimizer import Status, qos_threshold


def build_cfg(**overrides):
    return config_from_dict(dict(overrides))


def tiny_cfg(chi_dl=0.0, chi_ul=0.0, **extra):
    """Two APs, one MS, three subcarriers: small enough for grid search.
    The cell is sized to keep the default deployment's AP density."""
    return build_cfg(num_aps=2, num_ms=1, antennas_per_ap=2,
                     dl_subcarriers=2, ul_subcarriers=1, total_subcarriers=3,
                     delay_taps=1, cell_length=163.0,
                     chi_dl=chi_dl, chi_ul=chi_ul, **extra)


def small_cfg(**extra):
    """Mid-size instance used for structural optimizer tests."""
    return build_cfg(num_aps=3, num_ms=2, antennas_per_ap=3,
                     dl_subcarriers=4, ul_subcarriers=2, total_subcarriers=6,
                     delay_taps=2, cell_length=300.0, **extra)


def tpct_cfg(**extra):
    """Like small_cfg but single-tap, so two MSs fit on the pilot grid."""
    return build_cfg(num_aps=3, num_ms=2, antennas_per_ap=3,
                     dl_subcarriers=4, ul_subcarriers=2, total_subcarriers=6,
                     delay_taps=1, cell_length=300.0, **extra)


def reduced_cfg(**extra):
    """Half-size deployment at the default AP density, default QoS floors.
    Large enough to show the network-level trends, small enough that a
    fifty-layout sweep stays within a test budget."""
    return build_cfg(num_aps=6, num_ms=3, antennas_per_ap=4,
                     dl_subcarriers=8, ul_subcarriers=4, total_subcarriers=12,
                     delay_taps=1, cell_length=283.0, **extra)


def make_instance(cfg, seed):
    """Layout, fading and per-subcarrier channels for one trial."""
    rng = np.random.default_rng(seed)
    layout = generate_layout(cfg.system, rng)
    fading = large_scale(layout, rng)
    channels = generate_channels(fading, cfg.system, cfg.interference, rng)
    smap = partition_subcarriers(cfg.system)
    freq = to_frequency(channels, smap)
    return fading, freq


def assert_hygiene(outcome, freq, fading, cfg, tol=1e-6):
    """Budgets, activation-threshold consistency and rate floors on a
    returned allocation."""
    alloc = outcome.alloc
    if outcome.status is Status.INFEASIBLE:
        assert np.all(alloc.p_dl == 0) and np.all(alloc.p_ul == 0)
        return
    pw = cfg.power
    kappa = cfg.optimizer.kappa
    assert np.all(ap_power(alloc) <= pw.ap_budget + tol)
    assert np.all(ms_power(alloc) <= pw.ms_budget + tol)

    on_dl = alloc.mu_dl > 0
    assert np.all(alloc.p_dl[~on_dl] == 0)
    assert np.all(alloc.p_dl[on_dl] >= kappa * pw.ap_budget
                  - 1e-9 * pw.ap_budget)
    on_ul = alloc.mu_ul > 0
    assert np.all(alloc.p_ul[~on_ul] == 0)
    assert np.all(alloc.p_ul[on_ul] >= kappa * pw.ms_budget
                  - 1e-9 * pw.ms_budget)

    if cfg.qos.chi_dl == 0 and cfg.qos.chi_ul == 0:
        return
    beams = compute_beamformers(freq, served_dl_mask(alloc),
                                served_ul_mask(alloc))
    term_active = served_dl_mask(alloc).any(axis=0)
    for d in range(alloc.assoc.shape[1]):
        if cfg.qos.chi_dl > 0:
            ms = np.flatnonzero(term_active[d])
            assert ms.size >= 1
            thr = qos_threshold(cfg.qos.chi_dl, ms.size)
            for m in ms:
                assert sinr_dl(d, m, alloc, beams, fading, cfg) >= thr - tol
        if cfg.qos.chi_ul > 0:
            mbs = np.flatnonzero(alloc.mu_ul[d])
            assert mbs.size >= 1
            thr = qos_threshold(cfg.qos.chi_ul, mbs.size)
            for m_bar in mbs:
                assert sinr_ul(d, m_bar, alloc, beams, fading,
                               cfg) >= thr - tol


# --------------------------------------------------------------------------
# brute-force reference for single-MS instances
# --------------------------------------------------------------------------

def grid_oracle(freq, fading, cfg, points=9, levels=3):
    """Best total SE over every activation pattern and a refined power
    grid. Single-MS instances only, where the ZF beams do not depend on
    the pattern (single-stream projection per subcarrier)."""
    sys_ = cfg.system
    assert sys_.num_ms == 1 and sys_.ul_subcarriers == 1
    L, M = sys_.num_aps, sys_.dl_subcarriers
    beams = compute_beamformers(freq, np.ones((L, 1, M), dtype=bool),
                                np.ones((L, 1, 1), dtype=bool))
    omega = beams.omega[:, 0, :]
    upsilon = beams.upsilon[:, 0, 0]
    iai_w = cfg.interference.iai * fading.beta_ap_ap / sys_.total_subcarriers

    best = None
    for bits in itertools.product((0, 1), repeat=L * M):
        mu = np.array(bits, dtype=float).reshape(L, M)
        terms = np.flatnonzero(mu.max(axis=0))
        for mu_u in (False, True):
            if cfg.qos.chi_dl > 0 and terms.size == 0:
                continue
            if cfg.qos.chi_ul > 0 and not mu_u:
                continue
            if terms.size == 0:
                # no DL anywhere means an empty serving set, so an active
                # UL subcarrier would have nobody combining it
                if not mu_u and cfg.qos.chi_dl == 0 and cfg.qos.chi_ul == 0:
                    best = max(best, 0.0) if best is not None else 0.0
                continue
            val = _pattern_best(mu, mu_u, terms, omega, upsilon,
                                iai_w, fading, cfg, points, levels)
            if val is not None and (best is None or val > best):
                best = val
    return best


def _pattern_best(mu, mu_u, terms, omega, upsilon, iai_w, fading,
                  cfg, points, levels):
    pw = cfg.power
    L, M = mu.shape
    active = [np.flatnonzero(mu[l]) for l in range(L)]

    # one axis per AP total, one split share where two subcarriers are on,
    # one axis for the UL power
    t_col, s_col = {}, {}
    ranges = []
    for l in range(L):
        if active[l].size:
            t_col[l] = len(ranges)
            ranges.append((0.0, pw.ap_budget))
        if active[l].size == 2:
            s_col[l] = len(ranges)
            ranges.append((0.0, 1.0))
    q_col = None
    if mu_u:
        q_col = len(ranges)
        ranges.append((0.0, pw.ms_budget))

    lo0 = np.array([r[0] for r in ranges])
    hi0 = np.array([r[1] for r in ranges])
    lo, hi = lo0.copy(), hi0.copy()
    best_val = None
    for _ in range(levels):
        grids = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*grids, indexing="ij")
        X = np.stack([g.ravel() for g in mesh], axis=-1)
        val = _se_samples(X, mu, active, t_col, s_col, q_col,
                          terms, omega, upsilon, iai_w, cfg)
        k = int(np.argmax(val))
        if not np.isfinite(val[k]):
            return None
        best_val = float(val[k])
        width = (hi - lo) / (points - 1)
        lo = np.maximum(lo0, X[k] - width)
        hi = np.minimum(hi0, X[k] + width)
    return best_val


def _se_samples(X, mu, active, t_col, s_col, q_col, terms, omega,
                upsilon, iai_w, cfg):
    prof = cfg.interference
    sigma2 = cfg.power.noise_power
    frame = cfg.frame
    scale = (1.0 - frame.pilot_symbols / frame.coherence_symbols) \
        / cfg.system.total_subcarriers
    n = X.shape[0]
    L, M = mu.shape

    t = np.zeros((n, L))
    p = np.zeros((n, L, M))
    for l in range(L):
        if l not in t_col:
            continue
        t[:, l] = X[:, t_col[l]]
        if l in s_col:
            share = X[:, s_col[l]]
            p[:, l, active[l][0]] = t[:, l] * share
            p[:, l, active[l][1]] = t[:, l] * (1.0 - share)
        else:
            p[:, l, active[l][0]] = t[:, l]
    q = X[:, q_col] if q_col is not None else np.zeros(n)

    amp = np.einsum("nlm,lm->nm", np.sqrt(p), omega)
    dl = amp ** 2 / (prof.si_ms * q + sigma2)[:, None]
    if q_col is not None:
        # only the serving set combines; each member's own DL spend loops
        # back into its share of the denominator
        serve = mu.max(axis=1) > 0
        leak = prof.si_ap * t + t @ iai_w
        ups_s = np.where(serve, upsilon, 0.0)
        den = (ups_s[None, :] * (leak + sigma2)).sum(axis=1)
        ul = q * float(np.count_nonzero(serve)) ** 2 / den
    else:
        ul = np.zeros(n)

    se = scale * (np.log1p(dl[:, terms]).sum(axis=1) + np.log1p(ul))
    ok = np.ones(n, dtype=bool)
    if cfg.qos.chi_dl > 0:
        thr = math.expm1(cfg.qos.chi_dl / terms.size)
        ok &= (dl[:, terms] >= thr).all(axis=1)
    if cfg.qos.chi_ul > 0:
        ok &= ul >= math.expm1(cfg.qos.chi_ul)
    se[~ok] = -np.inf
    return se
