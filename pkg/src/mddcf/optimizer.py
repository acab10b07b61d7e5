"""Joint subcarrier activation and power allocation.

The spectral-efficiency objective is a sum of logs of power ratios, which
this module maximizes by block ascent: the ratio auxiliaries have a
closed-form update at fixed powers, and at fixed auxiliaries the power
step becomes a concave conic program (log, square-root and affine atoms)
handed to Clarabel through cvxpy. Per-subcarrier rate floors stay convex
through successive linearization of the quadratic-over-linear rate
surrogate. An outer loop prunes subcarriers whose solved power lands
below the activation threshold, re-derives the AP-MS association from
the survivors and repeats until the binary pattern stops changing.

Internally every channel gain is pre-divided by the noise floor, which
keeps the conic problem data within a few orders of magnitude of unity;
transmit powers stay in watts throughout. Objective traces report the
true weighted objective in nats/s/Hz, recomputed from solved powers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .beamforming import BeamformerSet, compute_beamformers
from .channel import FrequencyChannels, LargeScaleFading
from .config import PowerConfig, SimulationConfig
from .metrics import (AllocationState, SEReport, se_ibfd, se_mdd, se_tdd,
                      sinr_dl, sinr_ul)


class Status(Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    INFEASIBLE = "infeasible"


class InfeasibleAllocationError(Exception):
    """No power allocation can satisfy the active rate floors."""


@dataclass
class SolverState:
    """Inner-loop state: ratio auxiliaries, expansion points, trace.

    Auxiliaries and expansion points live in the subproblem's noise-scaled
    units; the trace is plain nats/s/Hz.
    """
    z_dl: np.ndarray
    z_ul: np.ndarray
    varpi_dl: np.ndarray
    psi_dl: np.ndarray
    varpi_ul: np.ndarray
    psi_ul: np.ndarray
    iteration: int = 0
    objective_trace: list = field(default_factory=list)


@dataclass
class SolveOutcome:
    """Result of one optimization run.

    ``trace`` holds one list of objective values per inner loop, in outer
    order; the block-ascent guarantee applies within each list.
    """
    alloc: AllocationState
    se: SEReport
    trace: list
    status: Status


# --------------------------------------------------------------------------
# elementary updates
# --------------------------------------------------------------------------

def qos_threshold(chi: float, n_subcarriers: int) -> float:
    """Per-subcarrier SINR floor equivalent to a rate target of ``chi``
    nats spread over ``n_subcarriers`` currently assigned subcarriers."""
    if chi < 0:
        raise ValueError(f"rate target must be non-negative, got {chi}")
    if chi == 0.0:
        return 0.0
    if n_subcarriers < 1:
        raise InfeasibleAllocationError(
            f"rate target {chi} with no assigned subcarriers")
    try:
        return math.expm1(chi / n_subcarriers)
    except OverflowError:
        return math.inf


def sca_linearize(varpi_t, psi_t):
    """Coefficients (a1, a2) of the affine minorant a1*varpi - a2*psi of
    varpi^2/psi around the expansion point; tight at the point itself.
    Accepts scalars or arrays."""
    if np.any(np.asarray(psi_t) <= 0):
        raise ValueError("SCA expansion point needs psi > 0")
    ratio = np.asarray(varpi_t) / np.asarray(psi_t)
    return 2.0 * ratio, ratio * ratio


def qt_update_z(alloc: AllocationState, beams: BeamformerSet,
                fading: LargeScaleFading, cfg: SimulationConfig):
    """Closed-form ratio auxiliaries at the current powers.

    Returns (z_dl [D, M], z_ul [D, M_bar]) where each active entry is
    sqrt(numerator)/denominator of the matching simplified SINR; entries
    with no transmit power are zero.
    """
    L, D = alloc.assoc.shape
    M = alloc.mu_dl.shape[2]
    M_bar = alloc.mu_ul.shape[1]
    z_dl = np.zeros((D, M))
    z_ul = np.zeros((D, M_bar))
    for d in range(D):
        for m in range(M):
            amp = float(np.sum(alloc.assoc[:, d] * alloc.mu_dl[:, d, m]
                               * np.sqrt(alloc.p_dl[:, d, m])
                               * beams.omega[:, d, m]))
            if amp > 0.0:
                z_dl[d, m] = sinr_dl(d, m, alloc, beams, fading, cfg) / amp
        n_serving = int(np.count_nonzero(alloc.assoc[:, d]))
        for m_bar in range(M_bar):
            amp = math.sqrt(alloc.p_ul[d, m_bar]) * n_serving
            if alloc.mu_ul[d, m_bar] > 0 and amp > 0.0:
                z_ul[d, m_bar] = sinr_ul(d, m_bar, alloc, beams,
                                         fading, cfg) / amp
    return z_dl, z_ul


def reduce_mu(alloc: AllocationState, power: PowerConfig,
              kappa: float) -> AllocationState:
    """Deactivate subcarriers whose solved power fell below kappa times the
    owner's budget (boundary inclusive: exactly kappa stays active)."""
    keep_dl = (alloc.mu_dl > 0) & (alloc.p_dl >= kappa * power.ap_budget)
    keep_ul = (alloc.mu_ul > 0) & (alloc.p_ul >= kappa * power.ms_budget)
    return AllocationState(
        assoc=alloc.assoc.copy(),
        mu_dl=keep_dl.astype(float),
        mu_ul=keep_ul.astype(float),
        p_dl=np.where(keep_dl, alloc.p_dl, 0.0),
        p_ul=np.where(keep_ul, alloc.p_ul, 0.0))


def derive_lambda(mu_dl: np.ndarray) -> np.ndarray:
    """AP-MS association implied by the DL activations: serving iff any
    subcarrier is active."""
    return mu_dl.max(axis=2)


# --------------------------------------------------------------------------
# activation patterns
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Pattern:
    assoc: np.ndarray
    mu_dl: np.ndarray
    mu_ul: np.ndarray
    dl_tuples: tuple      # (l, d, m) with a transmitting AP
    dl_terms: tuple       # (d, m) reached by at least one AP
    ul_terms: tuple       # (d, m_bar) active

    @property
    def key(self):
        return (self.assoc.tobytes(), self.mu_dl.tobytes(),
                self.mu_ul.tobytes())


def _pattern_of(assoc, mu_dl, mu_ul) -> _Pattern:
    served = (assoc[:, :, None] * mu_dl) > 0
    dl_tuples = tuple(zip(*(ix.tolist() for ix in np.nonzero(served))))
    dl_terms = tuple(sorted({(d, m) for _, d, m in dl_tuples}))
    ul_terms = tuple((int(d), int(m_bar))
                     for d, m_bar in zip(*np.nonzero(mu_ul > 0)))
    return _Pattern(assoc, mu_dl, mu_ul, dl_tuples, dl_terms, ul_terms)


def _served_dl(pattern: _Pattern) -> np.ndarray:
    return (pattern.assoc[:, :, None] * pattern.mu_dl) > 0


def _served_ul(pattern: _Pattern) -> np.ndarray:
    return (pattern.assoc[:, :, None] * pattern.mu_ul[None, :, :]) > 0


def _prune(alloc: AllocationState, cfg: SimulationConfig) -> AllocationState:
    """One round of threshold pruning plus the induced association update.
    A user whose downlink died everywhere has no serving set left, so its
    uplink subcarriers are silenced with it: no AP remains to combine
    them."""
    out = reduce_mu(alloc, cfg.power, cfg.optimizer.kappa)
    out.assoc = derive_lambda(out.mu_dl)
    orphaned = out.assoc.max(axis=0) <= 0
    if np.any(orphaned):
        out.mu_ul = np.where(orphaned[:, None], 0.0, out.mu_ul)
        out.p_ul = np.where(orphaned[:, None], 0.0, out.p_ul)
    return out


# --------------------------------------------------------------------------
# the concave power subproblem
# --------------------------------------------------------------------------

class ConvexSubproblem:
    """Concave power step for one activation pattern.

    Builds the conic problem once per pattern; the ratio auxiliaries and
    the rate-floor linearization enter as solver parameters, so repeated
    solves reuse the compiled form. Without UL decision variables (the
    training-phase variant) the DL denominators become the constant
    ``base_dl`` derived from ``fixed_ul_spend``, and ``cap_eta`` bounds
    the per-AP loopback interference seen by the pilot observation.
    """

    def __init__(self, pattern: _Pattern, beams: BeamformerSet,
                 fading: LargeScaleFading, cfg: SimulationConfig,
                 weight_dl: float, weight_ul: float, *,
                 apply_qos: bool = True, skip_ul_floor: bool = False,
                 fixed_ul_spend=None, cap_eta: float | None = None,
                 floor_active: bool = False):
        if not pattern.dl_tuples:
            raise ValueError("pattern has no active DL subcarriers")
        self.pattern = pattern
        self.weight_dl = weight_dl
        self.weight_ul = weight_ul
        self.cap_eta = cap_eta
        self.floor_active = floor_active

        sigma2 = cfg.power.noise_power
        prof = cfg.interference
        m_sum = cfg.system.total_subcarriers
        L, D = pattern.assoc.shape

        self.n_dl = len(pattern.dl_tuples)
        self.n_terms = len(pattern.dl_terms)
        self.n_ul = len(pattern.ul_terms)
        self.num_aps = L
        self.num_ms = D
        self.dl_owner = np.array([l for l, _, _ in pattern.dl_tuples])
        self.ul_owner = np.array([d for d, _ in pattern.ul_terms], dtype=int)
        self.ap_budget = cfg.power.ap_budget
        self.ms_budget = cfg.power.ms_budget

        term_ix = {t: i for i, t in enumerate(pattern.dl_terms)}
        W = sp.lil_matrix((self.n_terms, self.n_dl))
        T_ap = sp.lil_matrix((L, self.n_dl))
        sigma = math.sqrt(sigma2)
        for j, (l, d, m) in enumerate(pattern.dl_tuples):
            W[term_ix[(d, m)], j] = beams.omega[l, d, m] / sigma
            T_ap[l, j] = 1.0
        self.W = W.tocsr()
        self.T_ap = T_ap.tocsr()
        T_dense = self.T_ap.toarray()

        # interference coefficients, per watt of spend, noise-normalized
        dl_own = prof.si_ms / sigma2
        dl_cross = (prof.imi / sigma2) * fading.beta_ms_ms / m_sum
        ul_own = prof.si_ap / sigma2
        ul_cross = (prof.iai / sigma2) * fading.beta_ap_ap / m_sum

        A_spend = np.zeros((self.n_terms, D))
        for i, (d, _) in enumerate(pattern.dl_terms):
            A_spend[i] = dl_cross[d]
            A_spend[i, d] = dl_own
        self.A_spend = A_spend

        self.cap_eff = None
        if cap_eta is not None:
            C = ul_cross.copy()
            np.fill_diagonal(C, ul_own)
            self.cap_eff = C @ T_dense

        self.base_dl = None
        if self.n_ul:
            S_ms = sp.lil_matrix((D, self.n_ul))
            lbar = np.zeros(self.n_ul)
            row_ap = np.zeros((self.n_ul, L))
            c_ul = np.zeros(self.n_ul)
            ups = beams.upsilon * sigma2
            for i, (d, m_bar) in enumerate(pattern.ul_terms):
                S_ms[d, i] = 1.0
                serving = pattern.assoc[:, d] > 0
                lbar[i] = float(np.count_nonzero(serving))
                if lbar[i] == 0:
                    raise InfeasibleAllocationError(
                        "active UL subcarrier with an empty serving set")
                # combining is restricted to the serving set, so only
                # those APs' leakage variances reach the denominator
                vec = ups[:, d, m_bar] * serving
                row_ap[i] = ul_own * vec + vec @ ul_cross
                c_ul[i] = vec.sum()
            self.S_ms = S_ms.tocsr()
            self.lbar = lbar
            self.B_eff = row_ap @ T_dense
            self.c_ul = c_ul
            self.A_eff = A_spend @ self.S_ms.toarray()
        else:
            spend = (np.zeros(D) if fixed_ul_spend is None
                     else np.asarray(fixed_ul_spend, dtype=float))
            self.base_dl = A_spend @ spend + 1.0

        # per-subcarrier floors from the rate targets, on current counts
        qos = cfg.qos
        self.thr_dl = self.thr_ul = None
        if apply_qos and qos.chi_dl > 0:
            counts = np.zeros(D, dtype=int)
            for d, _ in pattern.dl_terms:
                counts[d] += 1
            per_d = [qos_threshold(qos.chi_dl, int(counts[d]))
                     for d in range(D)]
            self.thr_dl = np.array([per_d[d] for d, _ in pattern.dl_terms])
        if apply_qos and not skip_ul_floor and qos.chi_ul > 0:
            counts = np.zeros(D, dtype=int)
            for d, _ in pattern.ul_terms:
                counts[d] += 1
            per_d = [qos_threshold(qos.chi_ul, int(counts[d]))
                     for d in range(D)]
            self.thr_ul = np.array([per_d[d] for d, _ in pattern.ul_terms])
        for thr in (self.thr_dl, self.thr_ul):
            if thr is not None and not np.all(np.isfinite(thr)):
                raise InfeasibleAllocationError(
                    "rate floor exceeds any finite SINR")

        p = cp.Variable(self.n_dl, nonneg=True)
        r_dl = cp.Variable(self.n_terms, nonneg=True)
        self._z_dl = cp.Parameter(self.n_terms, nonneg=True)
        self._zsq_dl = cp.Parameter(self.n_terms, nonneg=True)
        cons = [r_dl <= self.W @ cp.sqrt(p),
                self.T_ap @ p <= self.ap_budget]
        q = None
        if self.n_ul:
            q = cp.Variable(self.n_ul, nonneg=True)
            psi_dl = cp.Variable(self.n_terms)
            r_ul = cp.Variable(self.n_ul, nonneg=True)
            psi_ul = cp.Variable(self.n_ul)
            self._z_ul = cp.Parameter(self.n_ul, nonneg=True)
            self._zsq_ul = cp.Parameter(self.n_ul, nonneg=True)
            cons += [psi_dl >= self.A_eff @ q + 1.0,
                     r_ul <= cp.multiply(self.lbar, cp.sqrt(q)),
                     psi_ul >= self.B_eff @ p + self.c_ul,
                     self.S_ms @ q <= self.ms_budget]
            psi_dl_expr = psi_dl
        else:
            psi_dl_expr = self.base_dl
        if self.cap_eff is not None:
            cons.append(self.cap_eff @ p <= cap_eta)
        if floor_active:
            kappa = cfg.optimizer.kappa
            cons.append(p >= kappa * self.ap_budget)
            if self.n_ul:
                cons.append(q >= kappa * self.ms_budget)
        self._a1_dl = self._a2_dl = None
        if self.thr_dl is not None:
            self._a1_dl = cp.Parameter(self.n_terms, nonneg=True)
            self._a2_dl = cp.Parameter(self.n_terms, nonneg=True)
            cons.append(cp.multiply(self._a1_dl, r_dl)
                        - cp.multiply(self._a2_dl, psi_dl_expr)
                        >= self.thr_dl)
        if self.thr_ul is not None:
            self._a1_ul = cp.Parameter(self.n_ul, nonneg=True)
            self._a2_ul = cp.Parameter(self.n_ul, nonneg=True)
            cons.append(cp.multiply(self._a1_ul, r_ul)
                        - cp.multiply(self._a2_ul, psi_ul)
                        >= self.thr_ul)

        obj = weight_dl * cp.sum(cp.log1p(
            2.0 * cp.multiply(self._z_dl, r_dl)
            - cp.multiply(self._zsq_dl, psi_dl_expr)))
        if self.n_ul:
            obj = obj + weight_ul * cp.sum(cp.log1p(
                2.0 * cp.multiply(self._z_ul, r_ul)
                - cp.multiply(self._zsq_ul, psi_ul)))
        self._p, self._q = p, q
        self.problem = cp.Problem(cp.Maximize(obj), cons)

    # -- numeric mirrors of the constraint surface ------------------------

    def achieved(self, pv, qv):
        """Amplitudes and denominators at the given powers, in the
        subproblem's internal units; a solution sits tight on these."""
        amp_dl = self.W @ np.sqrt(pv)
        if self.n_ul:
            spend = np.bincount(self.ul_owner, weights=qv,
                                minlength=self.num_ms)
            den_dl = self.A_spend @ spend + 1.0
            amp_ul = self.lbar * np.sqrt(qv)
            den_ul = self.B_eff @ pv + self.c_ul
        else:
            den_dl = self.base_dl
            amp_ul = np.zeros(0)
            den_ul = np.zeros(0)
        return amp_dl, den_dl, amp_ul, den_ul

    def true_objective(self, pv, qv) -> float:
        amp_dl, den_dl, amp_ul, den_ul = self.achieved(pv, qv)
        val = self.weight_dl * float(np.sum(np.log1p(amp_dl ** 2 / den_dl)))
        if self.n_ul:
            val += self.weight_ul * float(
                np.sum(np.log1p(amp_ul ** 2 / den_ul)))
        return val

    def scatter(self, pv, qv) -> AllocationState:
        """Map solved power vectors back onto the full allocation grids."""
        pat = self.pattern
        p_dl = np.zeros_like(pat.mu_dl)
        p_ul = np.zeros_like(pat.mu_ul)
        for j, (l, d, m) in enumerate(pat.dl_tuples):
            p_dl[l, d, m] = pv[j]
        if qv is not None:
            for i, (d, m_bar) in enumerate(pat.ul_terms):
                p_ul[d, m_bar] = qv[i]
        return AllocationState(pat.assoc.copy(), pat.mu_dl.copy(),
                               pat.mu_ul.copy(), p_dl, p_ul)

    def _within_budget(self, v, owner, count, budget):
        spend = np.bincount(owner, weights=v, minlength=count)
        scale = np.where(spend > budget,
                         budget / np.maximum(spend, budget), 1.0)
        return v * scale[owner]

    def solve(self, state: SolverState):
        self._z_dl.value = state.z_dl
        self._zsq_dl.value = state.z_dl ** 2
        if self.n_ul:
            self._z_ul.value = state.z_ul
            self._zsq_ul.value = state.z_ul ** 2
        if self.thr_dl is not None:
            a1, a2 = sca_linearize(state.varpi_dl, state.psi_dl)
            self._a1_dl.value, self._a2_dl.value = a1, a2
        if self.thr_ul is not None:
            a1, a2 = sca_linearize(state.varpi_ul, state.psi_ul)
            self._a1_ul.value, self._a2_ul.value = a1, a2
        try:
            self.problem.solve(solver=cp.CLARABEL)
        except cp.error.SolverError:
            return "failed", None, None
        status = self.problem.status
        if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            pv = np.maximum(np.asarray(self._p.value, dtype=float), 0.0)
            pv = self._within_budget(pv, self.dl_owner, self.num_aps,
                                     self.ap_budget)
            qv = None
            if self.n_ul:
                qv = np.maximum(np.asarray(self._q.value, dtype=float), 0.0)
                qv = self._within_budget(qv, self.ul_owner, self.num_ms,
                                         self.ms_budget)
            return "ok", pv, qv
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return "infeasible", None, None
        return "failed", None, None


def solve_subproblem(problem: ConvexSubproblem, state: SolverState):
    """One concave power step at the state's auxiliaries and expansion
    points. Returns (verdict, p, q) with verdict in ok/infeasible/failed."""
    return problem.solve(state)


# --------------------------------------------------------------------------
# inner and outer loops
# --------------------------------------------------------------------------

def _floors_hold(sub: ConvexSubproblem, pv, qv) -> bool:
    amp_dl, den_dl, amp_ul, den_ul = sub.achieved(pv, qv)
    if sub.thr_dl is not None and np.any(
            amp_dl ** 2 / den_dl < sub.thr_dl):
        return False
    if sub.thr_ul is not None and sub.n_ul and np.any(
            amp_ul ** 2 / den_ul < sub.thr_ul):
        return False
    return True


# DL backoff first: full DL spend leaks into every uplink denominator
# through the AP self-interference path, so the uplink floors are the
# ones a loud start usually tramples.
_START_LADDER = [(a_dl, a_ul)
                 for a_ul in (1.0, 0.3, 0.1, 0.03)
                 for a_dl in (1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001)]


def _initial_point(sub: ConvexSubproblem, cfg: SimulationConfig):
    # uniform split at 90% of budget keeps the start strictly interior
    sys_ = cfg.system
    p0 = np.full(sub.n_dl, 0.9 * cfg.power.ap_budget
                 / (sys_.num_ms * sys_.dl_subcarriers))
    q0 = np.full(sub.n_ul, 0.9 * cfg.power.ms_budget / sys_.ul_subcarriers)

    def shape(pv, qv):
        if sub.cap_eff is not None and sub.n_dl:
            lhs = float(np.max(sub.cap_eff @ pv))
            if lhs > sub.cap_eta:
                pv = pv * (0.9 * sub.cap_eta / lhs)
        if sub.floor_active:
            kappa = cfg.optimizer.kappa
            pv = np.maximum(pv, kappa * cfg.power.ap_budget)
            qv = np.maximum(qv, kappa * cfg.power.ms_budget)
        return pv, qv

    if sub.thr_dl is None and sub.thr_ul is None:
        return shape(p0, q0)
    # A start whose own SINR sits below a rate floor poisons the whole
    # run: the minorant built around it cannot reach the floor anywhere,
    # and the first subproblem comes back infeasible no matter how much
    # slack the true rate region has. Walk the backoff ladder and take
    # the loudest start the floors admit.
    for a_dl, a_ul in _START_LADDER:
        pv, qv = shape(a_dl * p0, a_ul * q0)
        if _floors_hold(sub, pv, qv):
            return pv, qv
    return shape(p0, q0)  # nothing admissible; let the solve report it


def _fresh_state(sub: ConvexSubproblem, p0, q0) -> SolverState:
    amp_dl, den_dl, amp_ul, den_ul = sub.achieved(p0, q0)
    return SolverState(
        z_dl=amp_dl / den_dl,
        z_ul=amp_ul / den_ul if sub.n_ul else np.zeros(0),
        varpi_dl=np.ones(sub.n_terms), psi_dl=np.ones(sub.n_terms),
        varpi_ul=np.ones(sub.n_ul), psi_ul=np.ones(sub.n_ul))


def _inner_qt_loop(sub: ConvexSubproblem, cfg: SimulationConfig, p0, q0):
    opt = cfg.optimizer
    state = _fresh_state(sub, p0, q0)
    pv, qv = p0, q0
    prev = None
    retried = False
    t = 0
    while t < opt.max_inner_iters:
        state.iteration = t
        verdict, p_new, q_new = solve_subproblem(sub, state)
        if verdict != "ok":
            if t == 0 and not retried:
                # unit expansion points can exclude the whole linearized
                # rate region; restart the minorant tight at the initial
                # point and try once more
                amp_dl, den_dl, amp_ul, den_ul = sub.achieved(p0, q0)
                state.varpi_dl, state.psi_dl = amp_dl, den_dl
                state.varpi_ul, state.psi_ul = amp_ul, den_ul
                retried = True
                continue
            if t == 0:
                if verdict == "infeasible":
                    raise InfeasibleAllocationError(
                        "power subproblem infeasible under the current "
                        "rate floors")
                raise RuntimeError("conic solver failed on the power "
                                   "subproblem")
            break  # later numeric hiccup: keep the last feasible point
        pv, qv = p_new, q_new
        amp_dl, den_dl, amp_ul, den_ul = sub.achieved(pv, qv)
        state.z_dl = amp_dl / den_dl
        if sub.n_ul:
            state.z_ul = amp_ul / den_ul
        state.varpi_dl, state.psi_dl = amp_dl, den_dl
        state.varpi_ul, state.psi_ul = amp_ul, den_ul
        obj = sub.true_objective(pv, qv)
        state.objective_trace.append(obj)
        if prev is not None and abs(obj - prev) <= opt.inner_tol * max(
                1.0, abs(prev)):
            break
        prev = obj
        t += 1
    return pv, qv, state.objective_trace


def _zero_alloc(cfg: SimulationConfig) -> AllocationState:
    sys_ = cfg.system
    L, D = sys_.num_aps, sys_.num_ms
    return AllocationState(
        assoc=np.zeros((L, D)),
        mu_dl=np.zeros((L, D, sys_.dl_subcarriers)),
        mu_ul=np.zeros((D, sys_.ul_subcarriers)),
        p_dl=np.zeros((L, D, sys_.dl_subcarriers)),
        p_ul=np.zeros((D, sys_.ul_subcarriers)))


def _exit_resolve(incumbent, freq, fading, cfg, make_sub, trace):
    """Final solve for a run that stopped without a stable pattern: the
    best pattern seen is re-solved with the activation floor enforced, so
    the returned powers are consistent with the pruning rule."""
    _, alloc, beams0 = incumbent
    pruned = _prune(alloc, cfg)
    pattern = _pattern_of(pruned.assoc, pruned.mu_dl, pruned.mu_ul)
    if not pattern.dl_tuples:
        pattern = _pattern_of(alloc.assoc, alloc.mu_dl, alloc.mu_ul)
    try:
        beams = compute_beamformers(freq, _served_dl(pattern),
                                    _served_ul(pattern))
        sub = make_sub(pattern, beams, True)
        p0, q0 = _initial_point(sub, cfg)
        pv, qv, seg = _inner_qt_loop(sub, cfg, p0, q0)
    except (InfeasibleAllocationError, RuntimeError):
        return pruned, beams0
    trace.append(seg)
    return sub.scatter(pv, qv), beams


def _qt_outer_loop(freq, fading, cfg, make_sub, mu_ul0):
    sys_ = cfg.system
    assoc = np.ones((sys_.num_aps, sys_.num_ms))
    mu_dl = np.ones((sys_.num_aps, sys_.num_ms, sys_.dl_subcarriers))
    pattern = _pattern_of(assoc, mu_dl, np.asarray(mu_ul0, dtype=float))
    seen = {pattern.key}
    trace = []
    incumbent = None
    status = Status.MAX_ITERS
    final = None
    qos_on = cfg.qos.chi_dl > 0 or cfg.qos.chi_ul > 0
    for _ in range(cfg.optimizer.max_outer_iters):
        beams = compute_beamformers(freq, _served_dl(pattern),
                                    _served_ul(pattern))
        # The floors can be out of reach on a bloated pattern even when
        # the settled one meets them with slack: early periods carry
        # every AP in every serving set, and the dead weight inflates
        # the combining denominators. When that happens the period is
        # redone with the UL floor lifted (the DL floors stay: their
        # concentration pressure is what starves weak APs below kappa),
        # and as a last resort with no floors at all. Relaxed solves
        # only drive the pruning; results come from floored ones.
        solved = None
        for relax in (0, 1, 2):
            if relax and not qos_on:
                break
            try:
                sub = make_sub(pattern, beams, False, relaxed=relax)
                p0, q0 = _initial_point(sub, cfg)
                pv, qv, seg = _inner_qt_loop(sub, cfg, p0, q0)
                solved = relax
                break
            except (InfeasibleAllocationError, RuntimeError):
                continue
        if solved is None:
            if incumbent is None:
                return _zero_alloc(cfg), None, trace, Status.INFEASIBLE
            break
        floored = solved == 0
        trace.append(seg)
        alloc = sub.scatter(pv, qv)
        if floored and (incumbent is None or seg[-1] > incumbent[0]):
            incumbent = (seg[-1], alloc, beams)
        pruned = _prune(alloc, cfg)
        if not floored:
            # without its floor the uplink is priced at zero and would be
            # pruned wholesale; the relaxed pass only advances the
            # association, so the UL pattern carries over (minus users
            # whose serving sets vanished)
            pruned.mu_ul = pattern.mu_ul * (
                pruned.assoc.max(axis=0) > 0)[:, None]
        new_pattern = _pattern_of(pruned.assoc, pruned.mu_dl, pruned.mu_ul)
        if new_pattern.key == pattern.key:
            if floored:
                status = Status.CONVERGED
                final = (alloc, beams)
            # a pattern that only settles with the floors lifted cannot
            # carry a feasible allocation; fall back to the best floored
            # solve, or report the infeasibility below
            break
        if new_pattern.key in seen or not new_pattern.dl_tuples:
            break  # cycle, or the DL side pruned away: keep the incumbent
        seen.add(new_pattern.key)
        pattern = new_pattern
    if final is None and incumbent is not None:
        final = _exit_resolve(incumbent, freq, fading, cfg, make_sub, trace)
    if final is None:
        return _zero_alloc(cfg), None, trace, Status.INFEASIBLE
    return final[0], final[1], trace, status


def _mode_weights(cfg: SimulationConfig):
    frame = cfg.frame
    m_sum = cfg.system.total_subcarriers
    if cfg.system.duplex_mode == "tdd":
        return (frame.tdd_dl_symbols / frame.coherence_symbols / m_sum,
                frame.tdd_ul_symbols / frame.coherence_symbols / m_sum)
    scale = (1.0 - frame.pilot_symbols / frame.coherence_symbols) / m_sum
    return scale, scale


def _se_for_mode(alloc, beams, fading, cfg) -> SEReport:
    fn = {"mdd": se_mdd, "tdd": se_tdd, "ibfd": se_ibfd}[
        cfg.system.duplex_mode]
    return fn(alloc, beams, fading, cfg)


def algorithm1(freq: FrequencyChannels, fading: LargeScaleFading,
               cfg: SimulationConfig) -> SolveOutcome:
    """Full joint allocation for one coherence interval.

    Starts from every subcarrier active on every AP-MS pair, alternates
    the ratio-auxiliary update with the concave power step until the
    objective settles, prunes sub-threshold subcarriers, re-derives the
    association and the ZF beams, and repeats until the binary pattern is
    stable. A repeating (non-consecutive) pattern or the outer iteration
    cap ends the run with the best incumbent re-solved under the
    activation floor.
    """
    w_dl, w_ul = _mode_weights(cfg)

    def make_sub(pattern, beams, floor, relaxed=0):
        return ConvexSubproblem(pattern, beams, fading, cfg, w_dl, w_ul,
                                apply_qos=relaxed < 2,
                                skip_ul_floor=relaxed == 1,
                                floor_active=floor)

    mu_ul0 = np.ones((cfg.system.num_ms, cfg.system.ul_subcarriers))
    alloc, beams, trace, status = _qt_outer_loop(freq, fading, cfg,
                                                 make_sub, mu_ul0)
    if status is Status.INFEASIBLE or beams is None:
        D = cfg.system.num_ms
        se = SEReport(per_ms_dl=np.zeros(D), per_ms_ul=np.zeros(D))
        return SolveOutcome(alloc, se, trace, Status.INFEASIBLE)
    se = _se_for_mode(alloc, beams, fading, cfg)
    return SolveOutcome(alloc, se, trace, status)
