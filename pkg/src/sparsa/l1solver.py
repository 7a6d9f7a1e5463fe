"""Constrained l1 minimization as a linear program.

Solves::

    minimize   |beta|_1
    subject to |S @ beta - d|_inf <= lam

with a Mehrotra predictor-corrector primal-dual interior-point method on
the split form ``beta = xp - xm`` (``xp, xm >= 0``) with slacks on the
``2p`` inequality rows. Each Newton step is reduced to one SPD system of
size ``p``::

    (diag(1/H) + S diag(G) S) dw = rhs

where ``G`` and ``H`` are the primal and slack scalings. When the Gram
matrix has low rank (``n < p`` data) a factor ``S = W W^T`` may be supplied
and the system is solved by the Woodbury identity in ``O(p r^2)``.

After convergence, the iterate is polished: the optimal partition is read
off the complementary pairs, the square active system is solved, and the
vertex is accepted only if it is feasible and no worse than the iterate.

Dual variable convention: ``u = y1 - y2`` where ``y1`` prices the rows
``S beta - d <= lam`` and ``y2`` the rows ``d - S beta <= lam``. At an
optimum ``|S u|_inf <= 1`` and ``(S u)_j = -sign(beta_j)`` on the support.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from . import linalg
from .errors import InfeasibleProblem, NotPositiveDefinite

GAP_RTOL = 1e-6
FEAS_RTOL = 1e-8
MAX_ITER = 200
RAY_NORM = 1e8


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    ITERATION_LIMIT = "IterationLimit"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class L1Problem:
    """``min |beta|_1  s.t.  |gram @ beta - target|_inf <= lam``.

    ``gram_factor`` is an optional ``p x r`` matrix ``W`` with
    ``gram = W @ W.T``; when given and ``r < p`` the low-rank path is used.
    """

    gram: np.ndarray
    target: np.ndarray
    lam: float
    gram_factor: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        gram = np.asarray(self.gram, dtype=float)
        target = np.asarray(self.target, dtype=float).ravel()
        if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
            raise ValueError("gram must be square")
        if gram.shape[0] != target.shape[0]:
            raise ValueError(
                f"gram is {gram.shape[0]}x{gram.shape[0]} but target has length {target.shape[0]}"
            )
        if not np.isfinite(self.lam) or self.lam < 0:
            raise InfeasibleProblem(f"lambda must be finite and >= 0, got {self.lam}")
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def p(self) -> int:
        return self.target.shape[0]


@dataclass(frozen=True)
class L1Solution:
    beta: np.ndarray
    objective: float
    infeasibility: float
    iterations: int
    status: Status
    lam: float
    dual: np.ndarray
    gap: float
    polished: bool = False

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class KktDiagnostics:
    primal_infeasibility: float
    complementarity_residual: float
    stationarity_residual: float

    def ok(self, tol: float = 1e-6) -> bool:
        return max(
            self.primal_infeasibility,
            self.complementarity_residual,
            self.stationarity_residual,
        ) <= tol


# ---------------------------------------------------------------------------
# Gram operators: matvec plus a factory for the reduced Newton solve.
# ---------------------------------------------------------------------------


class _DenseGram:
    def __init__(self, S):
        self.S = S

    def mv(self, v):
        return self.S @ v

    def newton_solver(self, hinv, g):
        S = self.S
        K = (S * g) @ S
        K[np.diag_indices_from(K)] += hinv
        try:
            cf = scipy.linalg.cho_factor(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            K[np.diag_indices_from(K)] += 1e-14 * max(float(np.trace(K)), 1.0)
            cf = scipy.linalg.lu_factor(K, check_finite=False)
            return lambda r: _refine(lambda x: K @ x, lambda b: scipy.linalg.lu_solve(cf, b), r)
        return lambda r: _refine(lambda x: K @ x, lambda b: scipy.linalg.cho_solve(cf, b), r)


class _LowRankGram:
    def __init__(self, W):
        self.W = W

    def mv(self, v):
        return self.W @ (self.W.T @ v)

    def newton_solver(self, hinv, g):
        # K = diag(hinv) + V V^T with V = W R^T, where R comes from a QR of
        # sqrt(g) W so that W^T diag(g) W = R^T R is never formed.
        # Rows with the largest 1/hinv (active constraints) form a block A
        # solved densely through its Schur complement; the remaining block B
        # goes through Woodbury, which is accurate there because 1/hinv is
        # bounded on B.
        W = self.W
        p, r = W.shape
        R = np.linalg.qr(np.sqrt(g)[:, None] * W, mode="r")
        V = W @ R.T
        h = 1.0 / hinv
        m = min(p, max(2 * r, 64))
        order = np.argsort(-h, kind="stable")
        A, B = order[:m], order[m:]
        VA, VB, hB = V[A], V[B], h[B]
        T = VB.T @ (VB * hB[:, None])
        cfT = scipy.linalg.cho_factor(np.eye(r) + T, lower=True, check_finite=False)
        schur = VA @ scipy.linalg.cho_solve(cfT, VA.T, check_finite=False)
        schur[np.diag_indices_from(schur)] += hinv[A]
        try:
            cfA = scipy.linalg.cho_factor(schur, lower=True, check_finite=False)
            solve_a = lambda b: scipy.linalg.cho_solve(cfA, b, check_finite=False)  # noqa: E731
        except np.linalg.LinAlgError:
            schur[np.diag_indices_from(schur)] += 1e-14 * max(float(np.trace(schur)), 1.0)
            luA = scipy.linalg.lu_factor(schur, check_finite=False)
            solve_a = lambda b: scipy.linalg.lu_solve(luA, b, check_finite=False)  # noqa: E731

        def kbb_inv(v):
            hv = hB * v
            return hv - (VB * hB[:, None]) @ scipy.linalg.cho_solve(cfT, VB.T @ hv, check_finite=False)

        def apply_inv(b):
            yB = kbb_inv(b[B])
            xA = solve_a(b[A] - VA @ (VB.T @ yB))
            xB = kbb_inv(b[B] - VB @ (VA.T @ xA))
            x = np.empty(p)
            x[A] = xA
            x[B] = xB
            return x

        def apply_k(x):
            return hinv * x + V @ (V.T @ x)

        return lambda rhs: _refine(apply_k, apply_inv, rhs)


def _refine(apply_k, apply_inv, rhs, steps: int = 2):
    x = apply_inv(rhs)
    for _ in range(steps):
        x = x + apply_inv(rhs - apply_k(x))
    return x


def _gram_operator(problem: L1Problem):
    W = problem.gram_factor
    if W is not None:
        W = np.asarray(W, dtype=float)
        if W.ndim == 2 and W.shape[0] == problem.p and W.shape[1] < problem.p:
            return _LowRankGram(W)
    return _DenseGram(problem.gram)


def low_rank_factor(x_centered: np.ndarray, scale: float, rtol: float = 1e-10) -> np.ndarray:
    """Return ``W`` with ``W @ W.T == scale * X.T @ X`` using only nonzero singular directions."""
    _, sv, vt = np.linalg.svd(np.asarray(x_centered, dtype=float), full_matrices=False)
    keep = sv > rtol * (sv[0] if sv.size else 0.0)
    return (vt[keep].T * (sv[keep] * np.sqrt(scale)))


# ---------------------------------------------------------------------------
# Interior point core
# ---------------------------------------------------------------------------


@dataclass
class _Iterate:
    xp: np.ndarray
    xm: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    zp: np.ndarray
    zm: np.ndarray

    def copy(self):
        return _Iterate(*(a.copy() for a in self.arrays()))

    def arrays(self):
        return (self.xp, self.xm, self.s1, self.s2, self.y1, self.y2, self.zp, self.zm)


def _cold_start(p: int, scale: float) -> _Iterate:
    one = np.ones(p)
    return _Iterate(
        xp=one * scale, xm=one * scale, s1=one * scale, s2=one * scale,
        y1=one.copy(), y2=one.copy(), zp=one.copy(), zm=one.copy(),
    )


def _warm_start(prev: _Iterate, gram, d, lam, floor: float) -> _Iterate:
    it = prev.copy()
    Sb = gram.mv(it.xp - it.xm)
    it.s1 = lam + d - Sb
    it.s2 = lam - d + Sb
    for a in it.arrays():
        np.maximum(a, floor, out=a)
    return it


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _ipm(
    gram,
    d: np.ndarray,
    lam: float,
    start: _Iterate,
    gap_tol: float,
    feas_tol: float,
    max_iter: int,
):
    p = d.shape[0]
    it = start
    bnorm = 1.0 + lam + float(np.max(np.abs(d), initial=0.0))
    n_pairs = 4 * p
    s_scale = max(1.0, float(np.max(np.abs(gram.mv(np.ones(p))))))
    status = Status.ITERATION_LIMIT
    k = 0
    for k in range(1, max_iter + 1):
        xp, xm, s1, s2, y1, y2, zp, zm = it.arrays()
        beta = xp - xm
        u = y1 - y2
        Sb = gram.mv(beta)
        Su = gram.mv(u)
        rp1 = lam + d - Sb - s1
        rp2 = lam - d + Sb - s2
        rdp = 1.0 + Su - zp
        rdm = 1.0 - Su - zm
        pobj = float(np.sum(xp) + np.sum(xm))
        dobj = float(-(lam + d) @ y1 - (lam - d) @ y2)
        mu = float(xp @ zp + xm @ zm + s1 @ y1 + s2 @ y2) / n_pairs
        pinf = max(np.max(np.abs(rp1)), np.max(np.abs(rp2))) / bnorm
        dinf = max(np.max(np.abs(rdp)), np.max(np.abs(rdm))) / 2.0
        if (
            pinf <= feas_tol
            and dinf <= feas_tol
            and abs(pobj - dobj) <= gap_tol * (1.0 + abs(pobj))
        ):
            status = Status.OPTIMAL
            break
        u1 = float(np.abs(u).sum())
        if u1 > RAY_NORM and dinf <= 1e-6:
            # Farkas ray: S u ~ 0 with lam |u|_1 + d.u < 0 proves infeasibility
            uhat = u / u1
            if -(lam + d @ uhat) > 1e-9 * bnorm and np.max(np.abs(Su)) / u1 <= 1e-8 * s_scale:
                status = Status.INFEASIBLE
                break

        Dp = xp / zp
        Dm = xm / zm
        E1 = y1 / s1
        E2 = y2 / s2
        H = E1 + E2
        G = Dp + Dm
        solve_k = gram.newton_solver(1.0 / H, G)

        def direction(rxp, rxm, rs1, rs2):
            ap = -rdp + rxp / xp
            am = -rdm + rxm / xm
            c1 = rs1 / y1 - rp1
            c2 = rs2 / y2 - rp2
            g = Dp * ap - Dm * am
            h = E1 * c1 - E2 * c2
            dw = solve_k(gram.mv(g) + h / H)
            Sdw = gram.mv(dw)
            dxp = Dp * (ap - Sdw)
            dxm = Dm * (am + Sdw)
            v = gram.mv(dxp - dxm)
            # keep dy1 - dy2 == dw exactly; use the better-scaled formula per row
            big1 = E1 >= E2
            dy1 = np.where(big1, 0.0, E1 * (v + c1))
            dy2 = np.where(big1, E2 * (-v + c2), 0.0)
            dy1 = np.where(big1, dw + dy2, dy1)
            dy2 = np.where(big1, dy2, dy1 - dw)
            # from the equality rows, so residuals contract exactly
            dzp = rdp + Sdw
            dzm = rdm - Sdw
            ds1 = rp1 - v
            ds2 = rp2 + v
            return dxp, dxm, ds1, ds2, dy1, dy2, dzp, dzm

        def steps(dd):
            dxp, dxm, ds1, ds2, dy1, dy2, dzp, dzm = dd
            ap_ = min(_max_step(xp, dxp), _max_step(xm, dxm), _max_step(s1, ds1), _max_step(s2, ds2))
            ad_ = min(_max_step(y1, dy1), _max_step(y2, dy2), _max_step(zp, dzp), _max_step(zm, dzm))
            return ap_, ad_

        aff = direction(-xp * zp, -xm * zm, -s1 * y1, -s2 * y2)
        a_p, a_d = steps(aff)
        dxp, dxm, ds1, ds2, dy1, dy2, dzp, dzm = aff
        mu_aff = (
            (xp + a_p * dxp) @ (zp + a_d * dzp)
            + (xm + a_p * dxm) @ (zm + a_d * dzm)
            + (s1 + a_p * ds1) @ (y1 + a_d * dy1)
            + (s2 + a_p * ds2) @ (y2 + a_d * dy2)
        ) / n_pairs
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        smu = sigma * mu
        cor = direction(
            smu - xp * zp - dxp * dzp,
            smu - xm * zm - dxm * dzm,
            smu - s1 * y1 - ds1 * dy1,
            smu - s2 * y2 - ds2 * dy2,
        )
        a_p, a_d = steps(cor)
        eta = 0.995 if mu < 1e-3 else 0.95
        a_p = min(1.0, eta * a_p)
        a_d = min(1.0, eta * a_d)
        dxp, dxm, ds1, ds2, dy1, dy2, dzp, dzm = cor
        it = _Iterate(
            xp + a_p * dxp, xm + a_p * dxm, s1 + a_p * ds1, s2 + a_p * ds2,
            y1 + a_d * dy1, y2 + a_d * dy2, zp + a_d * dzp, zm + a_d * dzm,
        )
    return it, k, status


def _polish(problem: L1Problem, it: _Iterate, beta_ipm: np.ndarray):
    """Try to snap the interior iterate to the optimal vertex it approaches."""
    S, d, lam = problem.gram, problem.target, problem.lam
    pos = it.xp > it.zp
    neg = it.xm > it.zm
    J = np.flatnonzero(pos | neg)
    K1 = it.y1 > it.s1
    K2 = it.y2 > it.s2
    K = np.flatnonzero(K1 | K2)
    if J.size == 0 or K.size == 0 or J.size != K.size:
        return None
    signs_k = np.where(K1[K], 1.0, -1.0)
    sub = S[np.ix_(K, J)]
    try:
        bj = np.linalg.solve(sub, d[K] + lam * signs_k)
    except np.linalg.LinAlgError:
        return None
    beta = np.zeros_like(beta_ipm)
    beta[J] = bj
    if np.any(np.sign(bj) != np.where(pos[J], 1.0, -1.0)):
        return None
    scale = 1.0 + float(np.max(np.abs(d)))
    if float(np.max(np.abs(S @ beta - d))) - lam > 1e-12 * scale:
        return None
    if np.abs(beta).sum() > np.abs(beta_ipm).sum() + 1e-12 * (1.0 + np.abs(beta_ipm).sum()):
        return None
    # Dual on the same partition: (S u)_J = -sign(beta_J), u supported on K.
    u = np.zeros_like(beta)
    try:
        u[K] = np.linalg.solve(sub.T, -np.sign(bj))
    except np.linalg.LinAlgError:
        return beta, None
    if np.any(u[K] * signs_k < -1e-12) or np.max(np.abs(S @ u)) > 1.0 + 1e-9:
        return beta, None
    return beta, u


def _finalize(problem: L1Problem, beta, u, iterations, ipm_status, polished):
    S, d, lam = problem.gram, problem.target, problem.lam
    dnorm = float(np.max(np.abs(d), initial=0.0))
    r = S @ beta - d
    infeas = max(0.0, float(np.max(np.abs(r), initial=0.0)) - lam)
    obj = float(np.abs(beta).sum())
    Su = S @ u
    dual_viol = max(0.0, float(np.max(np.abs(Su), initial=0.0)) - 1.0)
    dobj = float(-lam * np.abs(u).sum() - d @ u)
    gap = obj - dobj
    ok = (
        ipm_status is Status.OPTIMAL
        and infeas <= FEAS_RTOL * (1.0 + dnorm)
        and dual_viol <= FEAS_RTOL * 10
        and abs(gap) <= GAP_RTOL * (1.0 + obj)
    )
    if ok:
        status = Status.OPTIMAL
    elif ipm_status is Status.INFEASIBLE:
        status = Status.INFEASIBLE
    else:
        status = Status.ITERATION_LIMIT
    return L1Solution(
        beta=beta, objective=obj, infeasibility=infeas, iterations=iterations,
        status=status, lam=lam, dual=u, gap=gap, polished=polished,
    )


def _solve(
    problem: L1Problem,
    start: Optional[_Iterate] = None,
    gap_tol: float = 1e-9,
    feas_tol: float = 1e-10,
    max_iter: int = MAX_ITER,
    polish: bool = True,
):
    S, d, lam = problem.gram, problem.target, problem.lam
    p = problem.p
    dnorm = float(np.max(np.abs(d), initial=0.0))
    if lam >= dnorm:
        sol = _finalize(problem, np.zeros(p), np.zeros(p), 0, Status.OPTIMAL, False)
        return sol, None
    if lam == 0.0:
        try:
            beta = linalg.spd_solve(S, d)
        except NotPositiveDefinite:
            beta = None
        if beta is not None:
            u = np.zeros(p)
            try:
                u = -linalg.spd_solve(S, np.sign(beta))
            except NotPositiveDefinite:
                pass
            sol = _finalize(problem, beta, u, 0, Status.OPTIMAL, False)
            if sol.optimal:
                return sol, None
    gram = _gram_operator(problem)
    if start is None:
        start = _cold_start(p, max(1.0, dnorm))
    it, k, ipm_status = _ipm(gram, d, lam, start, gap_tol, feas_tol, max_iter)
    beta = it.xp - it.xm
    u = it.y1 - it.y2
    if ipm_status is Status.INFEASIBLE:
        return _finalize(problem, beta, u, k, ipm_status, False), None
    polished = False
    if polish:
        res = _polish(problem, it, beta)
        if res is not None:
            beta, u_pol = res
            polished = True
            if u_pol is not None:
                u = u_pol
    sol = _finalize(problem, beta, u, k, ipm_status, polished)
    if not sol.optimal and polished:
        # a polished vertex must never be worse than the raw iterate
        raw = _finalize(problem, it.xp - it.xm, it.y1 - it.y2, k, ipm_status, False)
        if raw.optimal:
            sol = raw
    return sol, it


def solve(problem: L1Problem, max_iter: int = MAX_ITER) -> L1Solution:
    """Solve the l1 program. Deterministic for fixed inputs.

    The returned ``status`` is ``Optimal`` only when primal infeasibility is
    within ``1e-8 * (1 + |d|_inf)`` and the duality gap within
    ``1e-6 * (1 + objective)``; otherwise ``IterationLimit`` with the best
    iterate.
    """
    sol, _ = _solve(problem, max_iter=max_iter)
    return sol


def solve_path(
    gram: np.ndarray,
    target: np.ndarray,
    lambdas: Sequence[float],
    gram_factor: Optional[np.ndarray] = None,
    warm_start: bool = True,
) -> list[L1Solution]:
    """Solve along a strictly descending grid of lambdas.

    Each interior solve is started from the previous iterate, lifted back
    to strict interiority.
    """
    lambdas = [float(v) for v in lambdas]
    if any(v < 0 for v in lambdas):
        raise InfeasibleProblem("lambdas must be >= 0")
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be strictly descending")
    gram = np.asarray(gram, dtype=float)
    target = np.asarray(target, dtype=float).ravel()
    out = []
    prev = None
    for lam in lambdas:
        problem = L1Problem(gram, target, lam, gram_factor=gram_factor)
        start = None
        if warm_start and prev is not None:
            floor = 1e-2 * max(1.0, float(np.max(np.abs(target))))
            start = _warm_start(prev, _gram_operator(problem), target, lam, floor)
        sol, it = _solve(problem, start=start)
        if start is not None and not sol.optimal:
            sol, it = _solve(problem)
        out.append(sol)
        if it is not None:
            prev = it
    return out


def check_kkt(problem: L1Problem, beta: np.ndarray, dual: Optional[np.ndarray] = None) -> KktDiagnostics:
    """Optimality certificate for ``beta``.

    If ``dual`` is not given, a dual vector is fitted by nonnegative least
    squares on the active rows with the sign pattern complementarity
    requires. ``complementarity_residual`` is the duality gap of the
    primal/dual pair, which equals the sum of complementary products when
    both are feasible.
    """
    S, d, lam = problem.gram, problem.target, problem.lam
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != problem.p:
        raise ValueError("beta has the wrong length")
    r = S @ beta - d
    scale = 1.0 + lam + float(np.max(np.abs(d), initial=0.0))
    primal = max(0.0, float(np.max(np.abs(r), initial=0.0)) - lam)
    bmax = float(np.max(np.abs(beta), initial=0.0))
    J = np.flatnonzero(np.abs(beta) > 1e-9 * max(1.0, bmax))
    sgn = np.sign(beta[J])
    if dual is None:
        u = np.zeros(problem.p)
        if J.size:
            K = np.flatnonzero(lam - np.abs(r) <= 1e-7 * scale)
            if K.size:
                sk = np.sign(r[K])
                sk[sk == 0] = 1.0
                # u_K = sk * v, v >= 0; minimize |(S u)_J + sign(beta_J)|
                A = S[np.ix_(J, K)] * sk
                v, _ = scipy.optimize.nnls(A, -sgn)
                u[K] = sk * v
    else:
        u = np.asarray(dual, dtype=float).ravel()
    Su = S @ u
    mask = np.ones(problem.p, dtype=bool)
    mask[J] = False
    stat_support = float(np.max(np.abs(Su[J] + sgn), initial=0.0))
    stat_off = max(0.0, float(np.max(np.abs(Su[mask]), initial=0.0)) - 1.0)
    gap = float(np.abs(beta).sum() + lam * np.abs(u).sum() + d @ u)
    return KktDiagnostics(
        primal_infeasibility=primal,
        complementarity_residual=abs(gap),
        stationarity_residual=max(stat_support, stat_off),
    )
