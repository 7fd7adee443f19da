"""Per-antenna position updates by successive convex approximation.

Every quantity optimized over one antenna position has the form

    F(x) = sum_t w_t |z_t(x)|^2 + c,
    z_t(x) = sum_b kappa_{t,b} sum_p gamma_{t,p} exp(s j k v_p . x_b),

where ``x_b`` are the antenna positions of one array (``x_i = x`` the moving
one), ``v_p`` the path direction cosines, ``k`` the wavenumber and ``s`` a
sign (-1 for the receive array, +1 for the transmit array). Sensing
numerator/denominator and each user's signal/interference power are built
as such objectives by the ``*_objectives`` helpers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import LinkChannels, Region, ScenarioRealization
from .convex import QcqpProblem, QuadConstraint, SolveKind, solve_qcqp


@dataclass(frozen=True)
class PathGroup:
    """Terms sharing one path set.

    directions : (L, 2); gammas : (T, L); kappas : (T, A); weights : (T,)
    """

    directions: np.ndarray
    gammas: np.ndarray
    kappas: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class ArrayObjective:
    groups: tuple[PathGroup, ...]
    positions: np.ndarray
    wavenumber: float
    sign: float
    constant: float = 0.0

    def value(self, positions=None) -> float:
        """Exact value with all antennas at ``positions`` (default: stored)."""
        pos = self.positions if positions is None else np.asarray(positions, dtype=float)
        total = self.constant
        for g in self.groups:
            E = np.exp(self.sign * 1j * self.wavenumber * (pos @ g.directions.T))  # (A, L)
            z = np.einsum("ta,tp,ap->t", g.kappas, g.gammas, E)
            total += float(np.sum(g.weights * np.abs(z) ** 2))
        return total

    def slice(self, i: int) -> "AntennaSlice":
        return AntennaSlice(self, i)


class AntennaSlice:
    """The objective as a function of antenna ``i`` alone."""

    def __init__(self, objective: ArrayObjective, i: int):
        self.objective = objective
        self.i = i
        self.k = objective.wavenumber
        self.s = objective.sign
        others = np.delete(np.arange(len(objective.positions)), i)
        self._fixed = []
        for g in objective.groups:
            pos = objective.positions[others]
            E = np.exp(self.s * 1j * self.k * (pos @ g.directions.T))
            rest = np.einsum("ta,tp,ap->t", g.kappas[:, others], g.gammas, E)
            self._fixed.append(rest)

    def _parts(self, x):
        """z_t, grad z_t and Hessian of z_t at points x of shape (P, 2)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        for g, rest in zip(self.objective.groups, self._fixed):
            E = np.exp(self.s * 1j * self.k * (x @ g.directions.T))  # (P, L)
            kg = g.kappas[:, self.i][:, None] * g.gammas  # (T, L)
            yield g, E, kg, E @ kg.T + rest  # z: (P, T)

    def value(self, x):
        """Exact objective with antenna ``i`` at ``x``; vectorized over rows of ``x``."""
        out = np.full(np.atleast_2d(x).shape[0], self.objective.constant)
        for g, _, _, z in self._parts(x):
            out += np.abs(z) ** 2 @ g.weights
        return out if np.ndim(x) > 1 else float(out[0])

    def value_cosine(self, x) -> float:
        """Same value built from its position-dependent cosine terms.

        |z|^2 splits into the self term of antenna i, the cross terms with the
        other antennas, and a part that does not depend on ``x``.
        """
        x = np.asarray(x, dtype=float)
        obj = self.objective
        total = obj.constant
        others = [b for b in range(len(obj.positions)) if b != self.i]
        for g in obj.groups:
            rho_i = g.directions @ x
            mag, ang = np.abs(g.gammas), np.angle(g.gammas)
            for t in range(len(g.weights)):
                ki = g.kappas[t, self.i]
                lam = self.s * self.k * (rho_i[None, :] - rho_i[:, None]) + ang[t][None, :] - ang[t][:, None]
                self_term = abs(ki) ** 2 * np.sum(np.outer(mag[t], mag[t]) * np.cos(lam))
                cross = 0.0
                for b in others:
                    kb = g.kappas[t, b]
                    rho_b = g.directions @ obj.positions[b]
                    lam_b = (
                        self.s * self.k * (rho_i[None, :] - rho_b[:, None])
                        + ang[t][None, :] - ang[t][:, None]
                        + np.angle(ki) - np.angle(kb)
                    )
                    cross += 2 * abs(ki) * abs(kb) * np.sum(np.outer(mag[t], mag[t]) * np.cos(lam_b))
                rest_pos = obj.positions[others]
                E = np.exp(self.s * 1j * self.k * (rest_pos @ g.directions.T))
                fixed = abs(np.einsum("a,p,ap->", g.kappas[t, others], g.gammas[t], E)) ** 2
                total += g.weights[t] * (self_term + cross + fixed)
        return float(total)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        grad = np.zeros(2)
        for g, E, kg, z in self._parts(x):
            # dz/dx: (T, 2)
            dz = (self.s * 1j * self.k) * ((kg * E[0]) @ g.directions)
            grad += 2 * np.real(np.conj(z[0])[:, None] * dz).T @ g.weights
        return grad

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        hess = np.zeros((2, 2))
        for g, E, kg, z in self._parts(x):
            a = kg * E[0]  # (T, L)
            dz = (self.s * 1j * self.k) * (a @ g.directions)
            d2z = -(self.k**2) * np.einsum("tp,pi,pj->tij", a, g.directions, g.directions)
            h = 2 * np.real(np.conj(z[0])[:, None, None] * d2z) + 2 * np.real(dz[:, :, None] * np.conj(dz)[:, None, :])
            hess += np.tensordot(g.weights, h, axes=1)
        return hess

    def local_curvature_bound(self) -> float:
        """Global Hessian bound using the exact contribution of the fixed antennas.

        |z_t| <= |kappa_i| G_t + |B_t| with B_t the fixed part, so
        delta = sum_t w_t k^2 (4 |kappa_i|^2 G_t^2 + 2 |kappa_i| G_t |B_t|)
        never exceeds :meth:`curvature_bound`.
        """
        delta = 0.0
        for g, rest in zip(self.objective.groups, self._fixed):
            G = np.sum(np.abs(g.gammas), axis=1)
            ki = np.abs(g.kappas[:, self.i])
            delta += float(np.sum(g.weights * self.k**2 * (4 * ki**2 * G**2 + 2 * ki * G * np.abs(rest))))
        return delta

    def curvature_bound(self) -> float:
        """delta with delta*I dominating the Hessian everywhere.

        delta = sum_t w_t k^2 (8 |kappa_i|^2 G_t^2 + 2 |kappa_i| sum_{b!=i} |kappa_b| G_t^2),
        G_t = sum_p |gamma_{t,p}|.
        """
        delta = 0.0
        for g in self.objective.groups:
            G2 = np.sum(np.abs(g.gammas), axis=1) ** 2
            ki = np.abs(g.kappas[:, self.i])
            kb = np.sum(np.abs(g.kappas), axis=1) - ki
            delta += float(np.sum(g.weights * self.k**2 * (8 * ki**2 * G2 + 2 * ki * kb * G2)))
        return delta


def surrogate_bounds(x, x0, f0, grad_f, delta_f, g0, grad_g, delta_g):
    """Quadratic minorizer of f and majorizer of g around ``x0``."""
    d = np.atleast_2d(np.asarray(x, dtype=float) - np.asarray(x0, dtype=float))
    sq = np.sum(d * d, axis=1)
    f_lo = f0 + d @ grad_f - 0.5 * delta_f * sq
    g_up = g0 + d @ grad_g + 0.5 * delta_g * sq
    if np.ndim(x) == 1:
        return float(f_lo[0]), float(g_up[0])
    return f_lo, g_up


def distance_linearization(anchor, other, spacing: float):
    """Linear constraint e.(x - other) >= spacing implying |x - other| >= spacing.

    Returns ``(e, rhs)`` with ``e`` the unit vector from ``other`` to ``anchor``
    and the constraint read as ``e . x >= rhs``.
    """
    diff = np.asarray(anchor, dtype=float) - np.asarray(other, dtype=float)
    nrm = float(np.linalg.norm(diff))
    if nrm == 0.0:
        raise ValueError("anchor coincides with the other antenna; cannot linearize")
    e = diff / nrm
    return e, float(e @ np.asarray(other, dtype=float)) + spacing


# -- objective builders -------------------------------------------------------

def _k(wavelength):
    return 2 * np.pi / wavelength


def rx_objectives(realization: ScenarioRealization, links: LinkChannels, beams, u, rx_positions, wavelength, noise):
    """(f, g) of the sensing SINR as functions of the receive positions."""
    beams = np.atleast_2d(beams)
    u = np.asarray(u)
    alphas = np.asarray(links.rcs)
    groups = []
    for q, ps in enumerate(realization.rx_paths):
        t_gain = beams @ links.tx_reflectors[q].conj()  # h_t^H w_n, (N_beams,)
        gammas = t_gain[:, None] * ps.coefficients[None, :]
        kappas = np.tile(u.conj(), (len(t_gain), 1))
        weights = np.full(len(t_gain), abs(alphas[q]) ** 2)
        groups.append(PathGroup(ps.directions, gammas, kappas, weights))
    pos = np.asarray(rx_positions, dtype=float)
    k = _k(wavelength)
    f = ArrayObjective((groups[0],), pos, k, -1.0)
    g = ArrayObjective(tuple(groups[1:]), pos, k, -1.0, noise * float(np.vdot(u, u).real))
    return f, g


def tx_objectives(realization: ScenarioRealization, links: LinkChannels, beams, u, tx_positions, wavelength, noise):
    """(f, g) of the sensing SINR as functions of the transmit positions."""
    beams = np.atleast_2d(beams)
    u = np.asarray(u)
    alphas = np.asarray(links.rcs)
    groups = []
    for q, ps in enumerate(realization.tx_paths):
        r_gain = np.vdot(u, links.rx_reflectors[q])  # u^H h_r
        gamma = r_gain * ps.coefficients.conj()
        gammas = np.tile(gamma, (len(beams), 1))
        weights = np.full(len(beams), abs(alphas[q]) ** 2)
        groups.append(PathGroup(ps.directions, gammas, beams.copy(), weights))
    pos = np.asarray(tx_positions, dtype=float)
    k = _k(wavelength)
    f = ArrayObjective((groups[0],), pos, k, 1.0)
    g = ArrayObjective(tuple(groups[1:]), pos, k, 1.0, noise * float(np.vdot(u, u).real))
    return f, g


def comm_objectives(realization: ScenarioRealization, beams, user: int, tx_positions, wavelength, noise):
    """(f_k, g_k): received signal power and interference-plus-noise of a user."""
    beams = np.atleast_2d(beams)
    ps = realization.user_paths[user]
    gamma = ps.coefficients.conj()
    pos = np.asarray(tx_positions, dtype=float)
    k = _k(wavelength)
    sig = PathGroup(ps.directions, gamma[None, :], beams[user : user + 1], np.ones(1))
    others = np.delete(beams, user, axis=0)
    groups = ()
    if len(others):
        groups = (PathGroup(ps.directions, np.tile(gamma, (len(others), 1)), others, np.ones(len(others))),)
    return ArrayObjective((sig,), pos, k, 1.0), ArrayObjective(groups, pos, k, 1.0, noise)


def with_positions(obj: ArrayObjective, positions) -> ArrayObjective:
    return ArrayObjective(obj.groups, np.asarray(positions, dtype=float), obj.wavenumber, obj.sign, obj.constant)


# -- SCA driver ---------------------------------------------------------------

@dataclass(frozen=True)
class ScaConfig:
    max_iter: int = 15
    tol: float = 1e-4
    qcqp_tol: float = 1e-8
    adaptive: bool = True
    theta0: float = 1.0 / 1024


@dataclass
class ScaTrace:
    """Per-iteration ratio and position of one antenna update."""

    ratios: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    accepted: int = 0
    failures: int = 0

    def to_text(self) -> str:
        lines = ["iteration,ratio,x,y"]
        for i, (r, p) in enumerate(zip(self.ratios, self.positions)):
            lines.append(f"{i},{r!r},{p[0]!r},{p[1]!r}")
        return "\n".join(lines) + "\n"


SPACING_SLACK = 1e-7
BOX_SLACK = 1e-9
COMM_SLACK = 1e-8


def _min_dist(x, others):
    if len(others) == 0:
        return math.inf
    return float(np.min(np.linalg.norm(others - x, axis=1)))


def project_spacing(x, others, spacing: float, region: Region):
    """Push ``x`` radially away from any antenna closer than ``spacing``."""
    x = np.asarray(x, dtype=float).copy()
    for _ in range(10):
        moved = False
        for b in others:
            diff = x - b
            d = float(np.linalg.norm(diff))
            if d < spacing * (1 - 1e-9):
                if d == 0:
                    diff, d = np.array([1.0, 0.0]), 1.0
                x = b + diff / d * spacing
                moved = True
        x = region.clip(x)
        if not moved:
            break
    return x


def optimize_position(
    i: int,
    f: ArrayObjective,
    g: ArrayObjective,
    region: Region,
    spacing: float,
    wavelength: float,
    comm: Sequence[tuple[ArrayObjective, ArrayObjective, float]] = (),
    config: ScaConfig = ScaConfig(),
):
    """Move antenna ``i`` to increase f/g, keeping region, spacing and comm constraints.

    Parameters
    ----------
    i : int
        Index of the moving antenna in ``f.positions``.
    f, g : ArrayObjective
        Numerator and denominator of the ratio to maximize.
    comm : sequence of (f_k, g_k, gamma_k)
        Per-user signal and interference objectives and SINR thresholds
        (transmit side only).

    Returns
    -------
    x : (2,) array
        Accepted position; equal to the input when no step helped.
    trace : ScaTrace
    """
    positions = np.array(f.positions, dtype=float)
    others = np.delete(positions, i, axis=0)
    x = positions[i].copy()
    lam = wavelength
    trace = ScaTrace()

    if _min_dist(x, others) < spacing * (1 - 2 * SPACING_SLACK):
        x = project_spacing(x, others, spacing, region)
        positions[i] = x

    fs, gs = f.slice(i), g.slice(i)
    df, dg = fs.curvature_bound(), gs.curvature_bound()
    comm_slices = []
    for cf, cg, gam in comm:
        if gam > 0:
            cs, ig = cf.slice(i), cg.slice(i)
            comm_slices.append((cs, ig, gam, cs.curvature_bound(), ig.curvature_bound()))

    def comm_targets(x):
        return [min(gam, cs.value(x) / ig.value(x)) for cs, ig, gam, _, _ in comm_slices]

    targets = comm_targets(x)
    f0, g0 = fs.value(x), gs.value(x)
    ratio = f0 / g0
    trace.ratios.append(ratio)
    trace.positions.append(x.copy())

    # Curvatures are scaled by theta <= 1. Below 1 the surrogates are only
    # local bounds, so a step that fails the exact checks is retried with a
    # larger theta; at theta = 1 they are global bounds.
    theta = config.theta0 if config.adaptive else 1.0
    it = 0
    while it < config.max_iter:
        if f0 <= 0:
            break
        it += 1
        scaled = [(cs, ig, gam, theta * dcs, theta * dig) for cs, ig, gam, dcs, dig in comm_slices]
        cons = _subproblem(x, f0, g0, fs, gs, theta * df, theta * dg, scaled, targets, others, spacing, lam)
        if cons is None:
            break
        lower = np.array([*((region.lower - x) / lam - BOX_SLACK), -np.inf, -np.inf, -np.inf])
        upper = np.array([*((region.upper - x) / lam + BOX_SLACK), np.inf, np.inf, np.inf])
        problem = QcqpProblem(np.array([0, 0, 0, 0, 1.0]), tuple(cons), lower, upper)
        res = solve_qcqp(problem, _interior_start(problem), config.qcqp_tol)
        if res.status.kind is not SolveKind.OPTIMAL:
            trace.failures += 1
            break
        xn = region.clip(x + lam * res.z[:2])
        fn, gn = fs.value(xn), gs.value(xn)
        rn = fn / gn
        ok = rn >= ratio and _min_dist(xn, others) >= spacing * (1 - 2 * SPACING_SLACK)
        if ok and comm_slices:
            new = comm_targets(xn)
            ok = all(nv >= tv * (1 - COMM_SLACK) for nv, tv in zip(new, targets))
        if not ok:
            if theta >= 1.0:
                break
            theta = min(1.0, 4 * theta)
            continue
        gain = (rn - ratio) / ratio
        x, f0, g0, ratio = xn, fn, gn, rn
        trace.accepted += 1
        trace.ratios.append(ratio)
        trace.positions.append(x.copy())
        if gain < config.tol:
            break
        if config.adaptive:
            theta = max(config.theta0, 0.5 * theta)
    return x, trace


def _interior_start(problem: QcqpProblem):
    """A start point with some margin on every constraint when one is cheap to find.

    The incumbent (0, 0, 1, 1, 1) lies on the boundary of the surrogate
    constraints and often within round-off of the box, spacing and
    communication constraints. The offset is pushed along the summed inward
    normals of the nearly active constraints, and the slacks are then set
    strictly inside.
    """
    cons = problem.all_constraints()
    eps = 1e-4

    def point(d):
        f_lo = 1 + cons[1].q[:2] @ -d - 0.5 * cons[1].P[0, 0] * (d @ d)  # f surrogate, normalized
        g_up = 1 + cons[2].q[:2] @ d + 0.5 * cons[2].P[0, 0] * (d @ d)
        a0, b0 = f_lo - eps, g_up * (1 + eps)
        c2 = 2 * a0 - b0 * b0
        if c2 <= 0:
            return None
        return np.array([d[0], d[1], a0, b0, math.sqrt(c2) * (1 - eps)])

    base = point(np.zeros(2))
    inward = np.zeros(2)
    for c in cons[3:]:
        if c.value(base) > -1e-4:
            n = -c.q[:2]
            nrm = np.linalg.norm(n)
            if nrm > 0:
                inward += n / nrm
    nrm = np.linalg.norm(inward)
    if nrm == 0:
        return base
    inward /= nrm
    for eta in (1e-3, 1e-4, 1e-5, 1e-6):
        z = point(eta * inward)
        if z is not None and all(c.value(z) < 0 for c in cons):
            return z
    return base


def _subproblem(x, f0, g0, fs, gs, df, dg, comm_slices, targets, others, spacing, lam):
    """Constraints of the convex subproblem in z = (dx, dy, alpha, beta, chi).

    Offsets are in wavelengths; alpha, beta and chi are normalized by their
    values at ``x`` so the incumbent sits at (0, 0, 1, 1, 1).
    """
    gf, gg = fs.gradient(x), gs.gradient(x)
    cons = []
    # AM-GM coupling: alpha >= (beta^2 + chi^2) / 2 >= beta * chi
    cons.append(QuadConstraint(np.array([0, 0, -1.0, 0, 0]), 0.0, np.diag([0, 0, 0, 1.0, 1.0])))
    hf = df * lam**2 / f0
    cons.append(QuadConstraint(np.array([*(-gf * lam / f0), 1.0, 0, 0]), -1.0, np.diag([hf, hf, 0, 0, 0])))
    hg = dg * lam**2 / g0
    cons.append(QuadConstraint(np.array([*(gg * lam / g0), 0, -1.0, 0]), 1.0, np.diag([hg, hg, 0, 0, 0])))
    for (cs, ig, gam, dcs, dig), target in zip(comm_slices, targets):
        t = target * (1 - COMM_SLACK)
        s0, i0 = cs.value(x), ig.value(x)
        q = lam * (t * ig.gradient(x) - cs.gradient(x)) / s0
        h = lam**2 * (t * dig + dcs) / s0
        cons.append(QuadConstraint(np.array([*q, 0, 0, 0]), (t * i0 - s0) / s0, np.diag([h, h, 0, 0, 0])))
    for b in others:
        diff = x - b
        nrm = float(np.linalg.norm(diff))
        if nrm == 0:
            return None
        e = diff / nrm
        rhs = (nrm - min(spacing, nrm) + SPACING_SLACK * spacing) / lam
        cons.append(QuadConstraint(np.array([*(-e), 0, 0, 0]), -rhs))
    return cons


def _put(positions, i, x):
    p = np.array(positions, dtype=float)
    p[i] = x
    return p
