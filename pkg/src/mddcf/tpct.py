"""Two-phase coherence-interval optimization.

Inside a training-while-transmitting interval the APs may run a
supplementary DL transmission during the pilot phase. Its loopback raises
the noise floor of the pilot observation, so Phase-I rate is bought with
Phase-II channel quality. A single shared cap eta bounds the per-AP
loopback; bisection on eta finds the best split, re-solving both phases at
every probe.

Phase-I plans on predicted channels and Phase-II on estimated ones, but all
reported rates are priced on the true channels through the direct-form
SINRs, so estimation and prediction error show up as zero-forcing leakage
rather than being assumed away.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SimulationConfig, InterferenceProfile
from .channel import (ChannelSet, FrequencyChannels, LargeScaleFading,
                      partition_subcarriers, predict_channels, to_frequency)
from .beamforming import BeamformerSet, compute_beamformers
from .metrics import (AllocationState, SEReport, served_dl_mask,
                      served_ul_mask, sinr_dl_direct, sinr_ul_direct)
from .estimation import (apply_estimation_error, build_pilots,
                         interference_level, mmse_estimate, observe_pilots)
from .optimizer import (ConvexSubproblem, SolveOutcome, Status, _mode_weights,
                        _qt_outer_loop, _zero_alloc, algorithm1)


@dataclass
class TpctState:
    """Bisection record: the shared cap, its bracket, and the incumbent."""
    eta: float
    eta_a: float
    eta_b: float
    phase1_alloc: AllocationState
    phase2_alloc: AllocationState
    best_total_se: float
    best_iteration: int


def eta_max(cfg: SimulationConfig, fading: LargeScaleFading,
            profile: InterferenceProfile) -> float:
    """Largest effective cap: the loopback seen by the worst-placed AP when
    every AP pours its full budget into the supplementary DL, in units of
    the noise floor."""
    sys_ = cfg.system
    L, D, M = sys_.num_aps, sys_.num_ms, sys_.dl_subcarriers
    per_entry = cfg.power.ap_budget / (D * M)
    full = AllocationState(
        assoc=np.ones((L, D)),
        mu_dl=np.ones((L, D, M)),
        mu_ul=np.zeros((D, sys_.ul_subcarriers)),
        p_dl=np.full((L, D, M), per_entry),
        p_ul=np.zeros((D, sys_.ul_subcarriers)))
    worst = max(interference_level(l, full, fading, profile,
                                   sys_.total_subcarriers)
                for l in range(L))
    return profile.si_ap * worst / cfg.power.noise_power


def _pilot_spend(cfg: SimulationConfig) -> np.ndarray:
    # every MS drives all its UL subcarriers at pilot power while training
    return np.full(cfg.system.num_ms,
                   cfg.power.pilot_power * cfg.system.ul_subcarriers)


def _with_pilots(alloc: AllocationState, cfg: SimulationConfig):
    """The allocation as the air sees it during training: DL data plus
    pilots on the whole UL grid."""
    return AllocationState(
        assoc=alloc.assoc, mu_dl=alloc.mu_dl,
        mu_ul=np.ones_like(alloc.mu_ul),
        p_dl=alloc.p_dl,
        p_ul=np.full_like(alloc.p_ul, cfg.power.pilot_power))


def solve_phase1(freq_pred: FrequencyChannels, fading: LargeScaleFading,
                 cfg: SimulationConfig, eta: float):
    """Supplementary DL allocation under the loopback cap.

    Runs the same pattern/power alternation as the full interval solve, but
    DL-only: the UL side of every denominator is the constant pilot spend,
    rate floors do not apply, and each AP's induced training interference
    is capped at eta times the noise floor. eta = 0 switches Phase I off.

    Returns (alloc, beams, status); beams is None when nothing transmits.
    """
    if eta < 0:
        raise ValueError(f"loopback cap must be non-negative, got {eta}")
    if eta == 0.0:
        return _zero_alloc(cfg), None, Status.CONVERGED

    frame = cfg.frame
    weight = (frame.pilot_symbols / frame.coherence_symbols
              / cfg.system.total_subcarriers)
    if weight == 0.0:
        # no pilot time means no Phase-I credit; do not transmit
        return _zero_alloc(cfg), None, Status.CONVERGED
    spend = _pilot_spend(cfg)

    def make_sub(pattern, beams, floor, relaxed=0):
        # already floor-free; the relaxed retries change nothing here
        return ConvexSubproblem(pattern, beams, fading, cfg, weight, 0.0,
                                apply_qos=False, fixed_ul_spend=spend,
                                cap_eta=eta, floor_active=floor)

    mu_ul0 = np.zeros((cfg.system.num_ms, cfg.system.ul_subcarriers))
    alloc, beams, _, status = _qt_outer_loop(freq_pred, fading, cfg,
                                             make_sub, mu_ul0)
    if status is Status.INFEASIBLE or beams is None:
        # the cap always admits the zero allocation; a solver giving up
        # here just means Phase I contributes nothing
        return _zero_alloc(cfg), None, Status.CONVERGED
    return alloc, beams, status


def phase1_rates(alloc: AllocationState, beams: BeamformerSet | None,
                 freq_true: FrequencyChannels, fading: LargeScaleFading,
                 cfg: SimulationConfig) -> np.ndarray:
    """Per-MS Phase-I SE on the true channels, pilots in flight."""
    D = cfg.system.num_ms
    rates = np.zeros(D)
    if beams is None or not np.any(alloc.mu_dl > 0):
        return rates
    loaded = _with_pilots(alloc, cfg)
    for d in range(D):
        for m in range(cfg.system.dl_subcarriers):
            rates[d] += math.log1p(
                sinr_dl_direct(d, m, loaded, beams, freq_true, fading, cfg))
    frame = cfg.frame
    scale = (frame.pilot_symbols / frame.coherence_symbols
             / cfg.system.total_subcarriers)
    return scale * rates


def solve_phase2(freq_est: FrequencyChannels, fading: LargeScaleFading,
                 cfg: SimulationConfig) -> SolveOutcome:
    """Full DL/UL allocation on the channels as estimated."""
    return algorithm1(freq_est, fading, cfg)


def phase2_rates(alloc: AllocationState, beams: BeamformerSet,
                 freq_true: FrequencyChannels, fading: LargeScaleFading,
                 cfg: SimulationConfig):
    """Per-MS Phase-II (DL, UL) SE on the true channels."""
    w_dl, w_ul = _mode_weights(cfg)
    D = cfg.system.num_ms
    dl = np.zeros(D)
    ul = np.zeros(D)
    for d in range(D):
        for m in range(cfg.system.dl_subcarriers):
            dl[d] += math.log1p(
                sinr_dl_direct(d, m, alloc, beams, freq_true, fading, cfg))
        for m_bar in range(cfg.system.ul_subcarriers):
            ul[d] += math.log1p(
                sinr_ul_direct(d, m_bar, alloc, beams, freq_true, fading,
                               cfg))
    return w_dl * dl, w_ul * ul


@dataclass
class _Candidate:
    phase1: AllocationState
    phase2: AllocationState
    lam1: np.ndarray
    lam2_dl: np.ndarray
    lam2_ul: np.ndarray

    @property
    def total(self) -> float:
        return float(self.lam1.sum() + self.lam2_dl.sum()
                     + self.lam2_ul.sum())


def algorithm2(channels: ChannelSet, fading: LargeScaleFading,
               cfg: SimulationConfig,
               rng: np.random.Generator) -> SolveOutcome:
    """Bisection on the shared loopback cap over one TPCT interval.

    Starts from the cap switched off, then probes midpoints of the bracket
    [eta_a, eta_b]: a probe beating the incumbent moves the lower edge up,
    a worse one pulls the upper edge down, per the printed update. The
    pilot observation reuses one frozen noise draw across probes so that
    candidates differ only through the cap, and the returned trace holds
    one (t, eta, phase1_se, phase2_se, total) record per probe.
    """
    if cfg.system.duplex_mode == "tdd":
        raise ValueError("TPCT intervals need concurrent training; TDD "
                         "frames re-train inside every interval instead")
    sys_ = cfg.system
    smap = partition_subcarriers(sys_)
    freq_true = to_frequency(channels, smap)
    eps = cfg.optimizer.prediction_error_eps
    pred = predict_channels(channels, fading, sys_, cfg.interference, eps,
                            rng)
    freq_pred = freq_true if eps == 0.0 else to_frequency(pred, smap)
    pilots = build_pilots(sys_.num_ms, sys_.ul_subcarriers,
                          sys_.total_subcarriers, sys_.delay_taps)
    obs_seed = int(rng.integers(2 ** 63))
    e_max = eta_max(cfg, fading, cfg.interference)

    def evaluate(eta: float) -> _Candidate | None:
        alloc1, beams1, _ = solve_phase1(freq_pred, fading, cfg, eta)
        levels = np.array([
            interference_level(l, alloc1, fading, cfg.interference,
                               sys_.total_subcarriers)
            for l in range(sys_.num_aps)])
        obs = observe_pilots(channels, pilots, alloc1, fading, cfg,
                             np.random.default_rng(obs_seed))
        est = mmse_estimate(obs, pilots, fading, levels, cfg)
        freq_est = apply_estimation_error(freq_true, est, smap)
        out2 = solve_phase2(freq_est, fading, cfg)
        if out2.status is Status.INFEASIBLE:
            return None
        beams2 = compute_beamformers(freq_est, served_dl_mask(out2.alloc),
                                     served_ul_mask(out2.alloc))
        lam1 = phase1_rates(alloc1, beams1, freq_true, fading, cfg)
        lam2_dl, lam2_ul = phase2_rates(out2.alloc, beams2, freq_true,
                                        fading, cfg)
        return _Candidate(alloc1, out2.alloc, lam1, lam2_dl, lam2_ul)

    base = evaluate(0.0)
    trace = []
    if base is None:
        D = sys_.num_ms
        se = SEReport(per_ms_dl=np.zeros(D), per_ms_ul=np.zeros(D))
        return SolveOutcome(_zero_alloc(cfg), se, trace, Status.INFEASIBLE)
    trace.append((0, 0.0, float(base.lam1.sum()),
                  float(base.lam2_dl.sum() + base.lam2_ul.sum()),
                  base.total))
    state = TpctState(eta=0.0, eta_a=0.0, eta_b=e_max,
                      phase1_alloc=base.phase1, phase2_alloc=base.phase2,
                      best_total_se=base.total, best_iteration=0)
    best = base

    opt = cfg.optimizer
    status = Status.MAX_ITERS
    t = 0
    while t < opt.max_bisection_iters:
        if state.eta_b - state.eta_a <= opt.bisection_tol * e_max:
            status = Status.CONVERGED
            break
        t += 1
        eta = 0.5 * (state.eta_a + state.eta_b)
        cand = evaluate(eta)
        if cand is None:
            # estimation got too poor for the rate floors: treat as worse
            trace.append((t, eta, math.nan, math.nan, -math.inf))
            state.eta_b = eta
            continue
        lam2 = float(cand.lam2_dl.sum() + cand.lam2_ul.sum())
        trace.append((t, eta, float(cand.lam1.sum()), lam2, cand.total))
        if cand.total < state.best_total_se:
            state.eta_b = eta
        else:
            state.eta_a = eta
            state.eta = eta
            state.best_total_se = cand.total
            state.best_iteration = t
            state.phase1_alloc = cand.phase1
            state.phase2_alloc = cand.phase2
            best = cand
    if state.eta_b - state.eta_a <= opt.bisection_tol * e_max:
        status = Status.CONVERGED

    se = SEReport(
        per_ms_dl=best.lam1 + best.lam2_dl,
        per_ms_ul=best.lam2_ul,
        phases={
            "phase1_dl": best.lam1,
            "phase2_dl": best.lam2_dl,
            "phase2_ul": best.lam2_ul,
            "eta": state.eta,
            "eta_interval": (state.eta_a, state.eta_b),
            "eta_max": e_max,
            "best_iteration": state.best_iteration,
            "iterations": t,
            "state": state,
        })
    return SolveOutcome(state.phase2_alloc, se, trace, status)
