"""Small dense convex solvers.

``solve_sdp`` handles complex Hermitian semidefinite programs with
trace-linear constraints plus a few nonnegative scalars. ``solve_qcqp``
handles tiny convex quadratically constrained programs with a log-barrier
Newton method.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class SolveKind(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolveStatus:
    kind: SolveKind
    iterations: int
    primal_residual: float = math.nan
    dual_residual: float = math.nan
    gap: float = math.nan
    objective: float = math.nan
    dual_objective: float = math.nan

    @property
    def ok(self) -> bool:
        return self.kind is SolveKind.OPTIMAL


class SolverError(RuntimeError):
    def __init__(self, message, status: SolveStatus | None = None):
        super().__init__(message)
        self.status = status


class InfeasibleError(SolverError):
    pass


def hermitian_part(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    return 0.5 * (a + a.conj().T)


def principal_eigvec(a) -> tuple[float, np.ndarray]:
    """Largest eigenvalue of a Hermitian matrix and its unit eigenvector.

    The vector phase is fixed so that its largest-magnitude entry is real
    and positive.
    """
    a = hermitian_part(a)
    vals, vecs = np.linalg.eigh(a)
    v = vecs[:, -1]
    return float(vals[-1]), fix_phase(v)


def fix_phase(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if not np.any(v):
        return v
    i = int(np.argmax(np.abs(v)))
    return v * (abs(v[i]) / v[i])


# -- SDP ----------------------------------------------------------------------

@dataclass(frozen=True)
class TraceForm:
    """Linear functional sum_j tr(A_j X_j) + sum_s c_s l_s.

    ``blocks`` maps a block index to a Hermitian coefficient matrix; blocks
    not listed have a zero coefficient.
    """

    blocks: Mapping[int, np.ndarray] = field(default_factory=dict)
    scalars: Mapping[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class SdpConstraint:
    form: TraceForm
    sense: str  # "==", ">=" or "<="
    rhs: float

    def __post_init__(self):
        if self.sense not in ("==", ">=", "<="):
            raise ValueError(f"bad constraint sense {self.sense!r}")


@dataclass(frozen=True)
class SdpProblem:
    """Optimize a trace-linear objective over Hermitian PSD blocks and scalars >= 0."""

    block_dims: tuple[int, ...]
    n_scalars: int
    objective: TraceForm
    constraints: tuple[SdpConstraint, ...]
    maximize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "block_dims", tuple(int(d) for d in self.block_dims))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for form in [self.objective] + [c.form for c in self.constraints]:
            for j, a in form.blocks.items():
                a = np.asarray(a)
                if not 0 <= j < len(self.block_dims) or a.shape != (self.block_dims[j],) * 2:
                    raise ValueError(f"coefficient for block {j} has wrong shape {a.shape}")
                if np.max(np.abs(a - a.conj().T), initial=0.0) > 1e-12 * (1 + np.max(np.abs(a))):
                    raise ValueError(f"coefficient for block {j} is not Hermitian")
            for s in form.scalars:
                if not 0 <= s < self.n_scalars:
                    raise ValueError(f"scalar index {s} out of range")

    def evaluate(self, form: TraceForm, blocks, scalars) -> float:
        total = sum(np.real(np.sum(np.asarray(a) * np.asarray(blocks[j]).T)) for j, a in form.blocks.items())
        total += sum(c * scalars[s] for s, c in form.scalars.items())
        return float(total)

    def dump(self) -> str:
        """Plain text listing of the problem, for diffing against other solvers."""
        def fmt(form):
            parts = []
            for j, a in sorted(form.blocks.items()):
                rows = ";".join(" ".join(f"{z.real:.17g}{z.imag:+.17g}j" for z in row) for row in np.asarray(a))
                parts.append(f"tr(A{j}*X{j}) A{j}=[{rows}]")
            for s, c in sorted(form.scalars.items()):
                parts.append(f"{c:.17g}*l{s}")
            return " + ".join(parts) or "0"

        lines = [f"blocks {' '.join(map(str, self.block_dims))}", f"scalars {self.n_scalars}"]
        lines.append(("maximize " if self.maximize else "minimize ") + fmt(self.objective))
        for c in self.constraints:
            lines.append(f"subject_to {fmt(c.form)} {c.sense} {c.rhs:.17g}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SdpResult:
    blocks: tuple[np.ndarray, ...]
    scalars: np.ndarray
    status: SolveStatus


def _embed(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    re, im = a.real, a.imag
    return np.block([[re, -im], [im, re]])


def _unembed(x) -> np.ndarray:
    n = x.shape[0] // 2
    re = 0.5 * (x[:n, :n] + x[n:, n:])
    im = 0.5 * (x[n:, :n] - x[:n, n:])
    return hermitian_part(re + 1j * im)


class _StandardForm:
    """min <C, X> s.t. <A_i, X> = b_i over symmetric PSD blocks and x_lp >= 0."""

    def __init__(self, dims, n_lp, c_blocks, c_lp, a_blocks, a_lp, b):
        self.dims = list(dims)
        self.n_lp = n_lp
        self.c_blocks = c_blocks
        self.c_lp = c_lp
        self.a_blocks = a_blocks  # a_blocks[j] = list of (i, A_ij)
        self.a_lp = a_lp  # (m, n_lp)
        self.b = b
        self.m = len(b)

    def apply(self, xs, x_lp):
        out = self.a_lp @ x_lp
        for j, terms in enumerate(self.a_blocks):
            for i, a in terms:
                out[i] += np.sum(a * xs[j])
        return out

    def adjoint(self, y):
        zs = []
        for j, d in enumerate(self.dims):
            s = np.zeros((d, d))
            for i, a in self.a_blocks[j]:
                s += y[i] * a
            zs.append(s)
        return zs, self.a_lp.T @ y

    def objective(self, xs, x_lp):
        return sum(np.sum(c * x) for c, x in zip(self.c_blocks, xs)) + float(self.c_lp @ x_lp)


def _max_step(x, dx):
    """Largest step a <= inf keeping x + a dx PSD (x positive definite)."""
    try:
        l = np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        return 0.0
    if not np.all(np.isfinite(dx)):
        return 0.0
    li = np.linalg.inv(l)
    lam = np.linalg.eigvalsh(li @ dx @ li.T)[0]
    return math.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x, dx):
    if not np.all(np.isfinite(dx)):
        return 0.0
    neg = dx < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-x[neg] / dx[neg]))


def _ipm(sf: _StandardForm, tol: float, max_iter: int):
    dims, m = sf.dims, sf.m
    n_total = sum(dims) + sf.n_lp
    b_norm = 1.0 + np.linalg.norm(sf.b)
    c_norm = 1.0 + math.sqrt(sum(np.sum(c * c) for c in sf.c_blocks) + float(sf.c_lp @ sf.c_lp))

    xi = max(10.0, math.sqrt(n_total), float(np.max(np.abs(sf.b), initial=0.0)) * math.sqrt(n_total))
    eta = max(10.0, math.sqrt(n_total), c_norm)
    xs = [xi * np.eye(d) for d in dims]
    zs = [eta * np.eye(d) for d in dims]
    x_lp = np.full(sf.n_lp, xi)
    z_lp = np.full(sf.n_lp, eta)
    y = np.zeros(m)

    status = None
    for it in range(1, max_iter + 1):
        ay_blocks, ay_lp = sf.adjoint(y)
        rd = [c - a - z for c, a, z in zip(sf.c_blocks, ay_blocks, zs)]
        rd_lp = sf.c_lp - ay_lp - z_lp
        rp = sf.b - sf.apply(xs, x_lp)
        pobj = sf.objective(xs, x_lp)
        dobj = float(sf.b @ y)
        mu = (sum(np.sum(x * z) for x, z in zip(xs, zs)) + float(x_lp @ z_lp)) / n_total
        pres = np.linalg.norm(rp) / b_norm
        dres = math.sqrt(sum(np.sum(r * r) for r in rd) + float(rd_lp @ rd_lp)) / c_norm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        status = (pres, dres, gap, pobj, dobj)
        if pres <= tol and dres <= tol and gap <= tol:
            return xs, x_lp, y, zs, SolveKind.OPTIMAL, it - 1, status
        if not all(np.all(np.isfinite(x)) for x in xs) or max(np.max(np.abs(x), initial=0.0) for x in xs + [x_lp]) > 1e12:
            return xs, x_lp, y, zs, SolveKind.NUMERICAL_FAILURE, it - 1, status

        try:
            zinv = [np.linalg.inv(z) for z in zs]
        except np.linalg.LinAlgError:
            return xs, x_lp, y, zs, SolveKind.NUMERICAL_FAILURE, it - 1, status
        zinv = [0.5 * (z + z.T) for z in zinv]
        schur = (sf.a_lp * (x_lp / z_lp)) @ sf.a_lp.T
        for j, terms in enumerate(sf.a_blocks):
            xa = [(i, xs[j] @ a @ zinv[j]) for i, a in terms]
            for i, g in xa:
                for k, a in terms:
                    schur[i, k] += np.sum(a * g.T)
        schur = 0.5 * (schur + schur.T)
        try:
            chol = np.linalg.cholesky(schur + 1e-14 * np.trace(schur) / m * np.eye(m))
            solve = lambda r: np.linalg.solve(chol.T, np.linalg.solve(chol, r))
        except np.linalg.LinAlgError:
            solve = lambda r: np.linalg.lstsq(schur, r, rcond=None)[0]

        def direction(rc, rc_lp):
            # rc = target - XZ (matrix), rhs of the linearized complementarity
            t = [(r - x @ d) @ zi for r, x, d, zi in zip(rc, xs, rd, zinv)]
            t_lp = (rc_lp - x_lp * rd_lp) / z_lp
            rhs = rp - sf.apply(t, t_lp)
            dy = solve(rhs)
            ady, ady_lp = sf.adjoint(dy)
            dz = [d - a for d, a in zip(rd, ady)]
            dz_lp = rd_lp - ady_lp
            dx = [(r - x @ d) @ zi for r, x, d, zi in zip(rc, xs, dz, zinv)]
            dx = [0.5 * (d + d.T) for d in dx]
            dx_lp = (rc_lp - x_lp * dz_lp) / z_lp
            return dx, dx_lp, dy, dz, dz_lp

        def steps(dx, dx_lp, dz, dz_lp):
            ap = min([_max_step(x, d) for x, d in zip(xs, dx)] + [_max_step_lp(x_lp, dx_lp)])
            ad = min([_max_step(z, d) for z, d in zip(zs, dz)] + [_max_step_lp(z_lp, dz_lp)])
            return ap, ad

        xz = [x @ z for x, z in zip(xs, zs)]
        dxa, dxa_lp, _, dza, dza_lp = direction([-a for a in xz], -x_lp * z_lp)
        ap, ad = steps(dxa, dxa_lp, dza, dza_lp)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = (
            sum(np.sum((x + ap * dx) * (z + ad * dz)) for x, dx, z, dz in zip(xs, dxa, zs, dza))
            + float((x_lp + ap * dxa_lp) @ (z_lp + ad * dza_lp))
        ) / n_total
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
        rc = [sigma * mu * np.eye(d) - a - dx @ dz for d, a, dx, dz in zip(dims, xz, dxa, dza)]
        rc_lp = sigma * mu - x_lp * z_lp - dxa_lp * dza_lp
        dx, dx_lp, dy, dz, dz_lp = direction(rc, rc_lp)
        ap, ad = steps(dx, dx_lp, dz, dz_lp)
        ap, ad = min(1.0, 0.98 * ap), min(1.0, 0.98 * ad)
        if ap < 1e-12 and ad < 1e-12:
            return xs, x_lp, y, zs, SolveKind.NUMERICAL_FAILURE, it, status

        xs = [x + ap * d for x, d in zip(xs, dx)]
        x_lp = x_lp + ap * dx_lp
        y = y + ad * dy
        zs = [z + ad * d for z, d in zip(zs, dz)]
        z_lp = z_lp + ad * dz_lp
    return xs, x_lp, y, zs, SolveKind.MAX_ITERATIONS, max_iter, status


def _standard_form(problem: SdpProblem):
    """Real-embedded standard form; returns (sf, row scales, objective scale, sign, n_slack)."""
    nb = len(problem.block_dims)
    dims = [2 * d for d in problem.block_dims]
    n_ineq = sum(c.sense != "==" for c in problem.constraints)
    n_lp = problem.n_scalars + n_ineq
    m = len(problem.constraints)

    a_rows = []
    a_lp = np.zeros((m, n_lp))
    b = np.zeros(m)
    slack = problem.n_scalars
    for i, con in enumerate(problem.constraints):
        row = {j: 0.5 * _embed(a) for j, a in con.form.blocks.items()}
        for s, c in con.form.scalars.items():
            a_lp[i, s] = c
        if con.sense != "==":
            a_lp[i, slack] = -1.0 if con.sense == ">=" else 1.0
            slack += 1
        b[i] = con.rhs
        a_rows.append(row)

    scales = np.ones(m)
    for i, row in enumerate(a_rows):
        nrm = math.sqrt(sum(np.sum(a * a) for a in row.values()) + float(a_lp[i] @ a_lp[i]))
        if nrm == 0:
            raise ValueError(f"constraint {i} has no coefficients")
        scales[i] = 1.0 / nrm
    a_lp *= scales[:, None]
    b = b * scales
    a_blocks = [[] for _ in range(nb)]
    for i, row in enumerate(a_rows):
        for j, a in row.items():
            a_blocks[j].append((i, a * scales[i]))

    sign = -1.0 if problem.maximize else 1.0
    c_blocks = [np.zeros((d, d)) for d in dims]
    for j, a in problem.objective.blocks.items():
        c_blocks[j] = sign * 0.5 * _embed(a)
    c_lp = np.zeros(n_lp)
    for s, c in problem.objective.scalars.items():
        c_lp[s] = sign * c
    c_norm = math.sqrt(sum(np.sum(c * c) for c in c_blocks) + float(c_lp @ c_lp))
    c_scale = 1.0 / c_norm if c_norm > 0 else 1.0
    c_blocks = [c * c_scale for c in c_blocks]
    c_lp = c_lp * c_scale
    return _StandardForm(dims, n_lp, c_blocks, c_lp, a_blocks, a_lp, b), scales, c_scale, sign


def _phase_one_infeasible(sf: _StandardForm, tol: float, max_iter: int) -> bool:
    """True when no PSD point meets the equalities (min t of the homotopy stays > 0)."""
    ones = [np.eye(d) for d in sf.dims]
    resid = sf.b - sf.apply(ones, np.ones(sf.n_lp))
    a_lp = np.hstack([sf.a_lp, resid[:, None]])
    c_lp = np.zeros(sf.n_lp + 1)
    c_lp[-1] = 1.0
    p1 = _StandardForm(
        sf.dims, sf.n_lp + 1, [np.zeros((d, d)) for d in sf.dims], c_lp, sf.a_blocks, a_lp, sf.b
    )
    xs, x_lp, y, _, kind, _, status = _ipm(p1, max(tol, 1e-9), max_iter)
    t = x_lp[-1]
    lower = status[4] if status is not None else -math.inf
    return bool(t > 1e-6 and (kind is SolveKind.OPTIMAL or lower > 1e-7))


def solve_sdp(problem: SdpProblem, tol: float = 1e-7, max_iter: int = 100) -> SdpResult:
    """Solve a complex Hermitian SDP by a primal-dual interior point method.

    Parameters
    ----------
    problem : SdpProblem
    tol : float
        Relative primal residual, dual residual and duality gap target.

    Returns
    -------
    SdpResult
        Hermitian blocks, scalars and a status. The status objective is in
        the caller's units and sense.
    """
    sf, scales, c_scale, sign = _standard_form(problem)
    # infeasible problems diverge; non-finite iterates are caught as failures
    with np.errstate(over="ignore", invalid="ignore"):
        return _solve_standard(problem, sf, c_scale, sign, tol, max_iter)


def _solve_standard(problem, sf, c_scale, sign, tol, max_iter):
    xs, x_lp, y, zs, kind, iters, st = _ipm(sf, tol, max_iter)
    blocks = tuple(_unembed(x) for x in xs)
    scalars = np.array(x_lp[: problem.n_scalars])
    pres, dres, _, pobj, dobj = st
    pobj_user = sign * pobj / c_scale
    dobj_user = sign * dobj / c_scale
    gap = abs(pobj_user - dobj_user) / (1.0 + abs(pobj_user))
    if kind is not SolveKind.OPTIMAL and _phase_one_infeasible(sf, tol, max_iter):
        kind = SolveKind.INFEASIBLE
    status = SolveStatus(kind, iters, pres, dres, gap, pobj_user, dobj_user)
    return SdpResult(blocks, scalars, status)


# -- QCQP ---------------------------------------------------------------------

@dataclass(frozen=True)
class QuadConstraint:
    """0.5 z'Pz + q'z + r <= 0 with P positive semidefinite (``P=None`` for linear)."""

    q: np.ndarray
    r: float
    P: np.ndarray | None = None

    def value(self, z) -> float:
        v = float(self.q @ z) + self.r
        if self.P is not None:
            v += 0.5 * float(z @ self.P @ z)
        return v

    def grad(self, z) -> np.ndarray:
        return self.q if self.P is None else self.q + self.P @ z


@dataclass(frozen=True)
class QcqpProblem:
    """maximize c'z subject to convex quadratic constraints and box bounds."""

    c: np.ndarray
    constraints: tuple[QuadConstraint, ...] = ()
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.c)

    def all_constraints(self) -> list[QuadConstraint]:
        cons = list(self.constraints)
        eye = np.eye(self.n)
        for i in range(self.n):
            if self.lower is not None and np.isfinite(self.lower[i]):
                cons.append(QuadConstraint(-eye[i], float(self.lower[i])))
            if self.upper is not None and np.isfinite(self.upper[i]):
                cons.append(QuadConstraint(eye[i], -float(self.upper[i])))
        return cons


@dataclass(frozen=True)
class QcqpResult:
    z: np.ndarray
    status: SolveStatus


class _Stack:
    """Constraints stacked for vectorized evaluation."""

    def __init__(self, cons, n):
        self.m = len(cons)
        self.P = np.zeros((self.m, n, n))
        self.Q = np.zeros((self.m, n))
        self.r = np.zeros(self.m)
        for i, c in enumerate(cons):
            self.Q[i] = c.q
            self.r[i] = c.r
            if c.P is not None:
                self.P[i] = c.P
        diag = np.einsum("mii->mi", self.P)
        self.diagonal = bool(np.all(self.P == diag[:, :, None] * np.eye(n)))
        self.D = diag.copy()

    def values(self, z):
        if self.diagonal:
            return 0.5 * (self.D @ (z * z)) + self.Q @ z + self.r
        return 0.5 * np.einsum("i,mij,j->m", z, self.P, z) + self.Q @ z + self.r

    def grads(self, z):
        if self.diagonal:
            return self.D * z + self.Q
        return self.P @ z + self.Q

    def curvature(self, w):
        """sum_i w_i P_i."""
        if self.diagonal:
            return np.diag(w @ self.D)
        return np.tensordot(w, self.P, axes=1)


def _barrier_center(obj, st: _Stack, z, t, newton_max=60, stop=None, accuracy=1e-10):
    """Minimize t*obj'z - sum log(-f_i(z)) from a strictly feasible z."""
    n = len(z)
    eye = 1e-13 * np.eye(n)

    def phi(z):
        vals = st.values(z)
        if vals.max() >= 0:
            return math.inf, vals
        return t * float(obj @ z) - float(np.log(-vals).sum()), vals

    f, vals = phi(z)
    steps = 0
    for steps in range(1, newton_max + 1):
        g = st.grads(z)
        inv = -1.0 / vals
        grad = t * obj + inv @ g
        gi = g * inv[:, None]
        hess = gi.T @ gi + st.curvature(inv)
        d = np.sqrt(np.maximum(np.diag(hess), 1e-300))
        try:
            step = -np.linalg.solve(hess / np.outer(d, d) + eye, grad / d) / d
        except np.linalg.LinAlgError:
            return z, vals, steps, False
        dec = -float(grad @ step)
        if dec < 2 * accuracy:
            break
        # damped Newton step is feasible for self-concordant barriers
        s = 1.0 if dec < 0.0625 else 1.0 / (1.0 + math.sqrt(dec))
        while True:
            zn = z + s * step
            fn, vn = phi(zn)
            if fn <= f - 0.25 * s * dec:
                break
            s *= 0.5
            if s < 1e-14:
                return z, vals, steps, dec < 1e-6
        z, f, vals = zn, fn, vn
        if stop is not None and stop(z, vals):
            return z, vals, steps, True
    else:
        return z, vals, steps, False
    return z, vals, steps, True


def _barrier(obj, st: _Stack, z, tol, stop=None, max_outer=40, growth=50.0, t0=None):
    m = st.m
    vals = st.values(z)
    if t0 is None:
        # initial weight balances the objective against the barrier gradient
        gb = (1.0 / -vals) @ st.grads(z)
        t = max(1e-3, min(1e3, float(np.linalg.norm(gb)) / max(float(np.linalg.norm(obj)), 1e-300)))
    else:
        t = t0
    total = 0
    for _ in range(max_outer):
        final = m / t < tol * growth
        z, vals, k, ok = _barrier_center(obj, st, z, t, stop=stop, accuracy=1e-10 if final else 1e-3)
        total += k
        if not ok:
            return z, vals, total, t, False
        if stop is not None and stop(z, vals):
            return z, vals, total, t, True
        if m / t < tol:
            return z, vals, total, t, True
        t *= growth
    return z, vals, total, t, False


def _primal_dual(c, st: _Stack, z, tol, max_iter=200, mu=10.0):
    """Primal-dual path following for min c'z s.t. f_i(z) <= 0 from a strictly feasible z.

    Each iteration takes one Newton step on the barrier-perturbed KKT system
    with a backtracking line search on the residual norm.
    """
    m, n = st.m, len(z)
    vals = st.values(z)
    lam = np.ones(m)

    def residual(z, lam, vals, t):
        g = st.grads(z)
        rd = c + lam @ g
        rc = -lam * vals - 1.0 / t
        return rd, rc, g

    eye = 1e-13 * np.eye(n)
    for it in range(1, max_iter + 1):
        gap = float(-vals @ lam)
        t = mu * m / gap
        rd, rc, g = residual(z, lam, vals, t)
        if gap <= tol and np.linalg.norm(rd) <= tol * (1 + np.linalg.norm(c)):
            return z, lam, vals, it - 1, True
        w = lam / -vals
        hess = st.curvature(lam) + (g * w[:, None]).T @ g
        rhs = -(c + (1.0 / t) * ((1.0 / -vals) @ g))
        d = np.sqrt(np.maximum(np.diag(hess), 1e-300))
        try:
            dz = np.linalg.solve(hess / np.outer(d, d) + eye, rhs / d) / d
        except np.linalg.LinAlgError:
            return z, lam, vals, it, False
        dlam = (rc - lam * (g @ dz)) / vals
        neg = dlam < 0
        s = min(1.0, 0.99 * float(np.min(-lam[neg] / dlam[neg]))) if np.any(neg) else 1.0
        norm0 = math.sqrt(float(rd @ rd + rc @ rc))
        while s > 1e-14:
            zn = z + s * dz
            vn = st.values(zn)
            if vn.max() < 0:
                ln = lam + s * dlam
                rdn, rcn, _ = residual(zn, ln, vn, t)
                if math.sqrt(float(rdn @ rdn + rcn @ rcn)) <= (1 - 0.01 * s) * norm0:
                    break
            s *= 0.5
        else:
            return z, lam, vals, it, gap <= 1e3 * tol
        z, lam, vals = zn, ln, vn
    return z, lam, vals, max_iter, False


def solve_qcqp(problem: QcqpProblem, z0=None, tol: float = 1e-8) -> QcqpResult:
    """Maximize a linear objective under convex quadratic constraints.

    ``z0`` is a starting point. When it is not strictly feasible a phase-one
    problem first searches for an interior point. The returned objective is
    never below that of a feasible ``z0``.
    """
    n = problem.n
    c = np.asarray(problem.c, dtype=float)
    cons = problem.all_constraints()
    z = np.zeros(n) if z0 is None else np.asarray(z0, dtype=float).copy()
    start = z.copy()
    st = _Stack(cons, n)
    start_vals = st.values(start)
    start_feasible = bool(np.all(start_vals <= 0))
    iters = 0

    if cons and np.max(start_vals) >= -1e-12 * (1 + np.max(np.abs(start_vals))):
        s0 = float(np.max(start_vals)) + 1.0
        p1 = [QuadConstraint(np.append(k.q, -1.0), k.r, None if k.P is None else _pad(k.P)) for k in cons]
        p1.append(QuadConstraint(np.append(np.zeros(n), -1.0), -1.0))  # s >= -1 keeps it bounded
        obj = np.append(np.zeros(n), 1.0)
        zs = np.append(z, s0)
        margin = 1e-9 * (1.0 + float(np.max(np.abs(start_vals))))
        stop = lambda zz, vals: zz[-1] < -margin
        # m / t0 matches the initial suboptimality s0 + 1, so the first centering is short
        zs, _, k, _, _ = _barrier(obj, _Stack(p1, n + 1), zs, 1e-10, stop=stop, t0=len(p1) / (s0 + 1.0))
        iters += k
        if zs[-1] >= -margin:
            return QcqpResult(
                start,
                SolveStatus(SolveKind.INFEASIBLE, iters, float(np.max(start_vals)), math.nan, math.nan, float(c @ start)),
            )
        z = zs[:n]

    if not cons:
        if np.any(c != 0):
            return QcqpResult(z, SolveStatus(SolveKind.NUMERICAL_FAILURE, 0))
        return QcqpResult(z, SolveStatus(SolveKind.OPTIMAL, 0, 0.0, 0.0, 0.0, 0.0))

    scale = max(1.0, float(np.max(np.abs(c))))
    z, lam, vals, k, ok = _primal_dual(-c / scale, st, z, tol / scale)
    iters += k
    kind = SolveKind.OPTIMAL if ok else SolveKind.NUMERICAL_FAILURE
    gap = float(-vals @ lam) * scale
    grad_l = -c / scale + lam @ st.grads(z)
    if start_feasible and float(c @ z) < float(c @ start):
        z = start
        vals = start_vals
    status = SolveStatus(
        kind,
        iters,
        max(0.0, float(np.max(vals))),
        float(np.linalg.norm(grad_l)) * scale,
        gap,
        float(c @ z),
        float(c @ z) + gap,
    )
    return QcqpResult(z, status)


def _pad(P):
    n = P.shape[0]
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = P
    return out
