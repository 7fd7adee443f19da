"""Receive (MVDR) and transmit (SDR) beamforming for a fixed antenna layout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import LinkChannels, ScenarioConfig, comm_sinrs
from .convex import (
    InfeasibleError,
    SdpConstraint,
    SdpProblem,
    SolveKind,
    SolveStatus,
    SolverError,
    TraceForm,
    principal_eigvec,
    solve_sdp,
)


class DegenerateTargetError(ValueError):
    """The target echo vanishes, so no receive filter can be matched to it."""


class TightnessViolation(SolverError):
    """The relaxed transmit covariances are not (numerically) rank one."""


RANK1_THRESHOLD = 1e-3
ZERO_BLOCK = 1e-6


def _covariance(beams) -> np.ndarray:
    W = np.atleast_2d(np.asarray(beams))
    return W.T @ W.conj()


def mvdr_receive(beams_tx, H_d, H_clutter, alphas, noise: float) -> np.ndarray:
    """Minimum-variance distortionless receive filter.

    Parameters
    ----------
    beams_tx : (N_beams, N) array
        Transmit beams, one per row.
    H_d : (M, N) array
        Round-trip target channel.
    H_clutter : sequence of (M, N) arrays
    alphas : sequence of complex
        RCS coefficients, target first.
    noise : float
        Radar receiver noise power.

    Returns
    -------
    u : (M,) complex array
        ``C^-1 d / (d^H C^-1 d)`` where ``d d^H`` is the target echo covariance
        without its RCS factor and ``C`` the clutter-plus-noise covariance.
    """
    if noise <= 0:
        raise ValueError("noise power must be positive")
    W = _covariance(beams_tx)
    H_d = np.asarray(H_d)
    M = H_d.shape[0]
    lam, v = principal_eigvec(H_d @ W @ H_d.conj().T)
    if lam <= 0 or not np.isfinite(lam):
        raise DegenerateTargetError("target echo covariance is zero")
    d = np.sqrt(lam) * v
    C = noise * np.eye(M, dtype=complex)
    for H, a in zip(H_clutter, np.asarray(alphas)[1:]):
        H = np.asarray(H)
        C += abs(a) ** 2 * (H @ W @ H.conj().T)
    cd = np.linalg.solve(C, d)
    return cd / np.vdot(d, cd)


@dataclass(frozen=True)
class TightnessReport:
    ratios: np.ndarray
    ell: float
    repaired: bool
    objective: float = float("nan")
    status: SolveStatus | None = None

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios)) if len(self.ratios) else 0.0

    @property
    def tight(self) -> bool:
        return self.max_ratio <= RANK1_THRESHOLD


def verify_rank1(blocks) -> TightnessReport:
    """Eigenvalue ratio lambda_2/lambda_1 of each block.

    Blocks whose trace is below ``ZERO_BLOCK`` times the total trace carry no
    power and are reported with ratio 0.
    """
    blocks = [np.asarray(b) for b in blocks]
    traces = np.array([np.trace(b).real for b in blocks])
    total = max(float(np.sum(np.abs(traces))), 1e-300)
    ratios = []
    for b, tr in zip(blocks, traces):
        if b.shape[0] < 2 or tr <= ZERO_BLOCK * total:
            ratios.append(0.0)
            continue
        vals = np.linalg.eigvalsh(0.5 * (b + b.conj().T))
        top = vals[-1]
        ratios.append(float(np.clip(max(vals[-2], 0.0) / top, 0.0, 1.0)) if top > 0 else 0.0)
    return TightnessReport(np.array(ratios), float("nan"), False)


def _sensing_terms(links: LinkChannels, u, config: ScenarioConfig):
    """S_q = |alpha_q|^2 P / sigma_eff * a_q a_q^H with a_q = H_q^H u."""
    u = np.asarray(u)
    sigma_eff = config.radar_noise * float(np.vdot(u, u).real)
    mats = []
    for q in range(len(links.rcs)):
        a = links.target_matrix(q).conj().T @ u
        mats.append(abs(links.rcs[q]) ** 2 * config.power / sigma_eff * np.outer(a, a.conj()))
    return mats


def _comm_terms(links: LinkChannels, config: ScenarioConfig):
    return [config.power / config.user_noise * np.outer(h, h.conj()) for h in links.users]


def sdr_problem(links: LinkChannels, u, config: ScenarioConfig) -> SdpProblem:
    """Charnes-Cooper form of the relaxed sensing-SINR maximization.

    Variables are ``X_n`` (one per beam) and a scalar ``l``; beams are
    recovered as ``W_n = P X_n / l``.
    """
    N = links.users.shape[1]
    K = links.users.shape[0]
    S = _sensing_terms(links, u, config)
    C = _comm_terms(links, config)
    gamma = config.gamma
    beams = range(N)
    objective = TraceForm({n: S[0] for n in beams})
    clutter = sum(S[1:], np.zeros((N, N), dtype=complex))
    cons = [SdpConstraint(TraceForm({n: clutter for n in beams}, {0: 1.0}), "==", 1.0)]
    for k in range(K):
        blocks = {n: (C[k] if n == k else -gamma[k] * C[k]) for n in beams}
        cons.append(SdpConstraint(TraceForm(blocks, {0: -gamma[k]}), ">=", 0.0))
    cons.append(SdpConstraint(TraceForm({n: np.eye(N) for n in beams}, {0: -1.0}), "<=", 0.0))
    return SdpProblem((N,) * N, 1, objective, tuple(cons), maximize=True)


def extract_beams(blocks, scale: float) -> np.ndarray:
    """Principal-component beams ``sqrt(lambda_1) v_1`` of ``scale * X_n``."""
    rows = []
    for b in blocks:
        lam, v = principal_eigvec(scale * np.asarray(b))
        rows.append(np.sqrt(max(lam, 0.0)) * v)
    return np.array(rows)


def _repair(beams, links: LinkChannels, config: ScenarioConfig, iters: int = 60):
    """Scale up under-served communication beams until their SINR is met.

    Each factor is found by bisection and capped by the power budget.
    """
    beams = beams.copy()
    gamma = config.gamma
    noise = config.user_noise
    for _ in range(3):
        sinr = comm_sinrs(links.users, beams, noise)
        short = [k for k in range(len(gamma)) if sinr[k] < gamma[k]]
        if not short:
            break
        for k in short:
            others = np.sum(np.abs(np.delete(beams, k, axis=0)) ** 2)
            budget = config.power - others
            own = np.sum(np.abs(beams[k]) ** 2)
            if own <= 0 or budget <= own:
                continue
            lo, hi = 1.0, np.sqrt(budget / own)
            trial = beams.copy()
            trial[k] = hi * beams[k]
            if comm_sinrs(links.users, trial, noise)[k] < gamma[k]:
                beams = trial
                continue
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                trial[k] = mid * beams[k]
                if comm_sinrs(links.users, trial, noise)[k] >= gamma[k]:
                    hi = mid
                else:
                    lo = mid
            beams[k] = hi * beams[k]
    return beams


def _fit_power(beams, power):
    total = np.sum(np.abs(beams) ** 2)
    return beams * np.sqrt(power / total) if total > power else beams


def transmit_sdr(links: LinkChannels, u, config: ScenarioConfig, tol: float = 1e-7, strict: bool = False):
    """Optimal transmit beams for a fixed receive filter.

    Returns
    -------
    beams : (N, N) complex array
        One beam per row; the first K serve the users.
    report : TightnessReport
        Eigenvalue ratios of the relaxed solution, the Charnes-Cooper scalar,
        whether the rank-one repair ran, and the relaxed objective.

    Raises
    ------
    InfeasibleError
        The communication thresholds cannot be met within the power budget.
    SolverError
        The interior point method failed.
    TightnessViolation
        Only with ``strict=True``, when a ratio exceeds the rank-one threshold.
    """
    problem = sdr_problem(links, u, config)
    res = solve_sdp(problem, tol=tol)
    if res.status.kind is SolveKind.INFEASIBLE:
        raise InfeasibleError("communication thresholds are unattainable at the power budget", res.status)
    if not res.status.ok:
        raise SolverError(f"transmit SDP failed: {res.status.kind.value}", res.status)
    ell = float(res.scalars[0])
    if ell <= 0:
        raise SolverError("Charnes-Cooper scalar is not positive", res.status)
    check = verify_rank1(res.blocks)
    beams = _fit_power(extract_beams(res.blocks, config.power / ell), config.power)
    repaired = False
    if not check.tight:
        if strict:
            raise TightnessViolation(f"rank-one ratio {check.max_ratio:.3g} above {RANK1_THRESHOLD}", res.status)
        beams = _repair(beams, links, config)
        repaired = True
    report = TightnessReport(check.ratios, ell, repaired, res.status.objective, res.status)
    return beams, report


@dataclass(frozen=True)
class CrosscheckResult:
    power: float
    sinr: float
    status: SolveStatus


def power_min_crosscheck(gamma_star: float, links: LinkChannels, u, config: ScenarioConfig, tol: float = 1e-7) -> CrosscheckResult:
    """Minimum transmit power reaching sensing SINR ``gamma_star``.

    Variables are ``Y_n = W_n / P``. The returned ``sinr`` is recomputed from
    the relaxed solution.
    """
    N = links.users.shape[1]
    K = links.users.shape[0]
    S = _sensing_terms(links, u, config)
    C = _comm_terms(links, config)
    gamma = config.gamma
    beams = range(N)
    clutter = sum(S[1:], np.zeros((N, N), dtype=complex))
    sense = S[0] - gamma_star * clutter
    cons = [SdpConstraint(TraceForm({n: sense for n in beams}), ">=", gamma_star)]
    for k in range(K):
        blocks = {n: (C[k] if n == k else -gamma[k] * C[k]) for n in beams}
        cons.append(SdpConstraint(TraceForm(blocks), ">=", gamma[k]))
    problem = SdpProblem((N,) * N, 0, TraceForm({n: np.eye(N) for n in beams}), tuple(cons), maximize=False)
    res = solve_sdp(problem, tol=tol)
    if res.status.kind is SolveKind.INFEASIBLE:
        raise InfeasibleError("sensing target unattainable", res.status)
    if not res.status.ok:
        raise SolverError(f"power minimization failed: {res.status.kind.value}", res.status)
    Y = sum(res.blocks)
    signal = float(np.trace(S[0] @ Y).real)
    clut = float(np.trace(clutter @ Y).real)
    return CrosscheckResult(config.power * float(np.trace(Y).real), signal / (clut + 1.0), res.status)
