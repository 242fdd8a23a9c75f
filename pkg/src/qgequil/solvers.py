"""Canonical and microcanonical equilibrium solvers.

Canonical: minimize I + beta*H + gamma*C by the damped mean-field fixed
point q <- (1-w) q + w f'(-beta psi - gamma), with a backtracking descent
safeguard (the fixed-point increment is always a descent direction for the
objective, by monotonicity of i').

Microcanonical: minimize I subject to H = E, C = Gamma by outer iterations
that linearize the energy constraint about the current streamfunction.  Each
subproblem "minimize I subject to C = Gamma and L = E" (L the linearized
energy) is solved in closed form through its multipliers: q = f'(-beta psi -
gamma) with (beta, gamma) from a 2-D Newton iteration on the two constraint
equations.  Every accepted iterate satisfies H >= E (positive definiteness
of the Green operator), C = Gamma exactly, and I nonincreasing (damping
toward the previous iterate when the full step overshoots).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .domain import Grid, apply_green, inner_product, norm
from .flow import Topography
from .priors import Prior, information


class InfeasibleError(RuntimeError):
    """No macrostate with finite information attains the requested (E, Gamma)."""


@dataclass
class SolverOptions:
    max_outer_iters: int = 500
    constraint_tol: float = 1e-8
    residual_tol: float = 1e-8
    damping: float = 0.5
    newton_max_iters: int = 50
    warm_start: "EquilibriumState | None" = None

    def __post_init__(self):
        if not (self.constraint_tol > 0 and self.residual_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")


@dataclass
class EquilibriumState:
    """Solved macrostate with multipliers and convergence diagnostics."""

    q: np.ndarray
    psi: np.ndarray
    beta: float
    gamma: float
    entropy: float
    energy: float
    circulation: float
    meanfield_residual: float
    iterations: int
    converged: bool
    status: str
    target_energy: float | None = None
    target_circulation: float | None = None
    history_information: list = field(default_factory=list)
    history_energy: list = field(default_factory=list)
    history_circulation: list = field(default_factory=list)


def _mf_residual(grid: Grid, prior: Prior, q, psi, beta: float, gamma: float) -> float:
    qm, ok = prior.fprime_field(-beta * psi - gamma)
    if not ok:
        return math.inf
    return norm(grid, q - qm)


def meanfield_residual(state: EquilibriumState, prior: Prior, grid: Grid) -> float:
    """L2 norm of q - f'(-beta psi - gamma); +inf if the argument exits the
    cumulant domain."""
    return _mf_residual(grid, prior, state.q, state.psi, state.beta, state.gamma)


def feasible_init(grid: Grid, prior: Prior, topo: Topography, energy: float, circulation: float) -> np.ndarray:
    """Initial macrostate b + c0 + c1*cos(pi x2/l2) with C = Gamma exactly and
    H = E exactly; c0 absorbs the mean of the cosine mode so the circulation
    constraint holds for any c1, and c1 solves the resulting quadratic.

    Raises :class:`InfeasibleError` when the quadratic has no real root (E
    below the minimum energy of the family at that circulation) or when both
    roots leave the rate domain.
    """
    l2 = grid.spec.channel_width
    phi1 = grid.zonal(np.cos(np.pi * grid.x2 / l2))
    area = grid.area
    j_mean = grid.integrate(phi1) / area
    u = phi1 - j_mean
    ones = grid.constant(1.0)
    g_u = apply_green(grid, u)
    g_1 = apply_green(grid, ones)
    z0 = circulation / area
    a2 = 0.5 * inner_product(grid, u, g_u)
    a1 = z0 * inner_product(grid, ones, g_u)
    e_flat = 0.5 * z0 * z0 * inner_product(grid, ones, g_1)
    disc = a1 * a1 - 4.0 * a2 * (e_flat - energy)
    if disc < 0:
        raise InfeasibleError(
            f"E = {energy} below the minimum energy {e_flat - a1 * a1 / (4 * a2):.6g} "
            f"of the initializer family at Gamma = {circulation}"
        )
    sq = math.sqrt(disc)
    roots = sorted([(-a1 + sq) / (2 * a2), (-a1 - sq) / (2 * a2)], key=abs)
    for c1 in roots:
        q = topo.values + (z0 - c1 * j_mean) + c1 * phi1
        if math.isfinite(prior.rate_field_sum(q)):
            return q
    raise InfeasibleError(
        f"initializer exits the rate domain at (E, Gamma) = ({energy}, {circulation})"
    )


# ----------------------------------------------------------------------
# multiplier subproblem: minimize I(q) s.t. <psi, q> = t1 and <1, q> = t2
# (both inner products unweighted sums scaled by the cell area outside)


def _subproblem_residuals(prior, psi, beta, gamma, w, t1, t2):
    ok, s_q, s_qpsi, s_v, s_vpsi, s_vpsi2 = _stats(prior, psi, beta, gamma)
    if not ok:
        return None
    r1 = w * s_qpsi - t1
    r2 = w * s_q - t2
    return r1, r2, s_v, s_vpsi, s_vpsi2


def _stats(prior, psi, beta, gamma):
    if prior.kind_code is not None:
        from ._core import kernels

        return kernels.constraint_stats(psi.ravel(), beta, gamma, prior.kind_code, prior.eps)
    eta = -beta * psi - gamma
    q, ok = prior.fprime_field(eta)
    if not ok:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0
    v, ok = prior.fpp_field(eta)
    if not ok:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0
    vpsi = v * psi
    return (
        True,
        float(q.sum()),
        float((q * psi).sum()),
        float(v.sum()),
        float(vpsi.sum()),
        float((vpsi * psi).sum()),
    )


def _solve_multipliers(grid, prior, psi, t1, t2, beta0, gamma0, tol1, tol2, max_iters):
    """Newton on the two constraint equations; returns (beta, gamma).

    The Jacobian is minus a symmetric positive definite 2x2 matrix (f'' > 0),
    so Newton steps are well posed; steps are halved when an iterate exits
    the cumulant domain.  On stagnation an alternating monotone 1-D
    bracketing fallback (gamma at fixed beta, then beta at fixed gamma) is
    used before retrying Newton.
    """
    w = grid.cell_area
    beta, gamma = beta0, gamma0
    res = _subproblem_residuals(prior, psi, beta, gamma, w, t1, t2)
    if res is None:
        beta, gamma = 0.0, 0.0
        res = _subproblem_residuals(prior, psi, beta, gamma, w, t1, t2)
        if res is None:
            raise InfeasibleError("multiplier initialization exits the cumulant domain")

    def scaled(r1, r2):
        return math.hypot(r1 / (1.0 + abs(t1)), r2 / (1.0 + abs(t2)))

    for attempt in range(2):
        for _ in range(max_iters):
            r1, r2, s_v, s_vpsi, s_vpsi2 = res
            if abs(r1) <= tol1 and abs(r2) <= tol2:
                return beta, gamma
            # J = -w * [[s_vpsi2, s_vpsi], [s_vpsi, s_v]]
            det = s_vpsi2 * s_v - s_vpsi * s_vpsi
            if det <= 0 or s_v <= 0:
                break
            db = (s_v * r1 - s_vpsi * r2) / (w * det)
            dg = (s_vpsi2 * r2 - s_vpsi * r1) / (w * det)
            cur = scaled(r1, r2)
            t = 1.0
            accepted = False
            for _ in range(40):
                cand = _subproblem_residuals(prior, psi, beta + t * db, gamma + t * dg, w, t1, t2)
                if cand is not None and scaled(cand[0], cand[1]) < cur:
                    beta, gamma = beta + t * db, gamma + t * dg
                    res = cand
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
        else:
            r1, r2 = res[0], res[1]
            if abs(r1) <= tol1 and abs(r2) <= tol2:
                return beta, gamma
        if attempt == 0:
            beta, gamma = _alternating_fallback(grid, prior, psi, t1, t2, beta, gamma)
            res = _subproblem_residuals(prior, psi, beta, gamma, w, t1, t2)
            if res is None:
                raise InfeasibleError("fallback left the cumulant domain")
    r1, r2 = res[0], res[1]
    if abs(r1) <= tol1 and abs(r2) <= tol2:
        return beta, gamma
    raise RuntimeError(
        f"multiplier solve stagnated: residuals ({r1:.3e}, {r2:.3e}) vs tolerances ({tol1:.1e}, {tol2:.1e})"
    )


def _gamma_domain_low(prior, psi, beta):
    """Smallest admissible gamma at fixed beta (keeps eta inside its domain)."""
    hi = prior.eta_domain[1]
    if math.isinf(hi):
        return -math.inf
    return float(np.max(-beta * psi)) - hi


def _alternating_fallback(grid, prior, psi, t1, t2, beta, gamma, rounds=60):
    """Alternate monotone 1-D root finds: both residuals are strictly
    decreasing in their own variable, so each solve is a bracketed brentq."""
    w = grid.cell_area

    def r2_of_gamma(g):
        res = _subproblem_residuals(prior, psi, beta, g, w, t1, t2)
        return math.inf if res is None else res[1]

    def r1_of_beta(bb):
        res = _subproblem_residuals(prior, psi, bb, gamma, w, t1, t2)
        return math.inf if res is None else res[0]

    for _ in range(rounds):
        # circulation equation in gamma: decreasing from +inf at the domain edge
        g_lo = _gamma_domain_low(prior, psi, beta)
        lo = gamma if r2_of_gamma(gamma) > 0 else None
        if lo is None:
            hi = gamma
            step = 1.0
            lo = gamma - step
            while not math.isfinite(r2_of_gamma(lo)) or r2_of_gamma(lo) < 0:
                if math.isfinite(g_lo) and lo <= g_lo:
                    lo = g_lo + 1e-12 * (1 + abs(g_lo))
                    if r2_of_gamma(lo) < 0:
                        raise InfeasibleError("circulation equation has no root")
                    break
                step *= 2.0
                lo = gamma - step
                if step > 1e12:
                    raise InfeasibleError("circulation equation has no root")
        else:
            hi = gamma + 1.0
            step = 1.0
            while r2_of_gamma(hi) > 0:
                step *= 2.0
                hi = gamma + step
                if step > 1e15:
                    raise InfeasibleError("circulation equation has no root (target unreachable)")
        gamma = brentq(r2_of_gamma, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200)

        # energy equation in beta, decreasing; domain may be a finite interval
        c = prior.eta_domain[1] + gamma  # eta_j = -beta psi_j - gamma < eta_hi
        pmax = float(np.max(psi))
        pmin = float(np.min(psi))
        b_hi = math.inf
        b_lo = -math.inf
        if math.isfinite(c):
            if pmin < 0:
                b_hi = c / (-pmin)
            if pmax > 0:
                b_lo = -c / pmax
        margin = 1e-12
        val = r1_of_beta(beta)
        if val > 0:
            lo_b = beta
            step = 1.0
            hi_b = beta + step
            while hi_b < b_hi and r1_of_beta(min(hi_b, b_hi * (1 - margin) if math.isfinite(b_hi) else hi_b)) > 0:
                step *= 2.0
                hi_b = beta + step
                if step > 1e15:
                    break
            hi_b = min(hi_b, b_hi * (1 - margin) if math.isfinite(b_hi) else hi_b)
            if r1_of_beta(hi_b) > 0:
                break
        else:
            hi_b = beta
            step = 1.0
            lo_b = beta - step
            while lo_b > b_lo and r1_of_beta(max(lo_b, b_lo * (1 - margin) if math.isfinite(b_lo) else lo_b)) < 0:
                step *= 2.0
                lo_b = beta - step
                if step > 1e15:
                    break
            lo_b = max(lo_b, b_lo * (1 - margin) if math.isfinite(b_lo) else lo_b)
            if r1_of_beta(lo_b) < 0:
                break
        beta = brentq(r1_of_beta, lo_b, hi_b, xtol=1e-14, rtol=8.9e-16, maxiter=200)

        res = _subproblem_residuals(prior, psi, beta, gamma, w, t1, t2)
        if res is not None and abs(res[0]) <= 1e-10 * (1 + abs(t1)) and abs(res[1]) <= 1e-10 * (1 + abs(t2)):
            break
    return beta, gamma


# ----------------------------------------------------------------------


def _kkt_newton_polish(grid, prior, b, q, beta, gamma, energy, circulation, tol, max_steps=40):
    """Full Newton on the KKT system (mean-field residual + both constraints).

    Engaged when the linearized-constraint outer iteration stalls (large
    positive beta near the admissibility boundary makes its contraction
    vanish).  Solves the q-block A = I + beta diag(f'') G by dense
    factorization for modest grids and GMRES otherwise; returns
    (q, beta, gamma, converged).
    """
    import scipy.linalg
    import scipy.sparse.linalg

    from .domain import green_matrix

    w = grid.cell_area
    n = grid.n1 * grid.n2
    shape = (grid.n1, grid.n2)
    lo, hi = prior.y_domain

    def residuals(qv, bv, gv):
        psi = apply_green(grid, qv - b)
        eta = -bv * psi - gv
        fp, ok = prior.fprime_field(eta)
        if not ok:
            return None
        r_q = qv - fp
        r_e = 0.5 * w * float(((qv - b) * psi).sum()) - energy
        r_c = w * float((qv - b).sum()) - circulation
        return psi, eta, r_q, r_e, r_c

    def theta(r_q, r_e, r_c):
        return norm(grid, r_q) ** 2 + (r_e / (1 + abs(energy))) ** 2 + (r_c / (1 + abs(circulation))) ** 2

    cur = residuals(q, beta, gamma)
    if cur is None:
        return q, beta, gamma, False
    dense = n <= 1024
    g_dense = None
    if dense:
        cached = getattr(grid, "_green_dense", None)
        if cached is None:
            cached = green_matrix(grid)
            grid._green_dense = cached
        g_dense = cached

    for _ in range(max_steps):
        psi, eta, r_q, r_e, r_c = cur
        th = theta(r_q, r_e, r_c)
        if (
            abs(r_e) <= 0.1 * tol * (1 + abs(energy))
            and abs(r_c) <= 0.1 * tol * (1 + abs(circulation))
            and norm(grid, r_q) <= 0.1 * tol
        ):
            return q, beta, gamma, True
        f2, ok = prior.fpp_field(eta)
        if not ok:
            return q, beta, gamma, False
        rhs = np.column_stack([r_q.ravel(), (f2 * psi).ravel(), f2.ravel()])
        if dense:
            a = np.eye(n) + beta * (f2.ravel()[:, None] * g_dense)
            try:
                sols = scipy.linalg.solve(a, rhs)
            except scipy.linalg.LinAlgError:
                return q, beta, gamma, False
        else:
            def matvec(z):
                zz = z.reshape(shape)
                return (zz + beta * f2 * apply_green(grid, zz)).ravel()

            op = scipy.sparse.linalg.LinearOperator((n, n), matvec=matvec, dtype=float)
            sols = np.empty_like(rhs)
            for col in range(3):
                sol, info = scipy.sparse.linalg.gmres(op, rhs[:, col], rtol=1e-12, atol=0.0, maxiter=400)
                if info != 0:
                    return q, beta, gamma, False
                sols[:, col] = sol
        u0, u1, u2 = (sols[:, col].reshape(shape) for col in range(3))
        psi_flat = psi
        m11 = w * float((psi_flat * u1).sum())
        m12 = w * float((psi_flat * u2).sum())
        m21 = w * float(u1.sum())
        m22 = w * float(u2.sum())
        b1 = r_e - w * float((psi_flat * u0).sum())
        b2 = r_c - w * float(u0.sum())
        det = m11 * m22 - m12 * m21
        if det == 0 or not math.isfinite(det):
            return q, beta, gamma, False
        dbeta = (b1 * m22 - b2 * m12) / det
        dgamma = (m11 * b2 - m21 * b1) / det
        dq = -u0 - dbeta * u1 - dgamma * u2
        t = 1.0
        accepted = False
        for _ in range(40):
            q_t = q + t * dq
            if np.all((q_t > lo) & (q_t < hi)):
                cand = residuals(q_t, beta + t * dbeta, gamma + t * dgamma)
                if cand is not None and theta(cand[2], cand[3], cand[4]) < th:
                    q = q_t
                    beta += t * dbeta
                    gamma += t * dgamma
                    cur = cand
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            return q, beta, gamma, False
    psi, eta, r_q, r_e, r_c = cur
    done = (
        abs(r_e) <= 0.1 * tol * (1 + abs(energy))
        and abs(r_c) <= 0.1 * tol * (1 + abs(circulation))
        and norm(grid, r_q) <= 0.1 * tol
    )
    return q, beta, gamma, done


def solve_microcanonical(
    grid: Grid,
    prior: Prior,
    topo: Topography,
    energy: float,
    circulation: float,
    opts: SolverOptions | None = None,
) -> EquilibriumState:
    """Minimize I subject to H = energy and C = circulation.

    Raises :class:`InfeasibleError` when no initializer exists; other failure
    modes are reported through ``status`` on the returned state.
    """
    opts = opts or SolverOptions()
    if not energy > 0:
        raise ValueError(f"target energy must be positive, got {energy}")
    b = topo.values
    w = grid.cell_area
    area = grid.area
    ctol = opts.constraint_tol
    rtol = opts.residual_tol

    warm = opts.warm_start
    if warm is not None:
        q = warm.q + (circulation - grid.integrate(warm.q - b)) / area
        beta, gamma = warm.beta, warm.gamma
        if not math.isfinite(prior.rate_field_sum(q)):
            q = feasible_init(grid, prior, topo, energy, circulation)
            beta, gamma = 0.0, 0.0
    else:
        q = feasible_init(grid, prior, topo, energy, circulation)
        beta, gamma = 0.0, 0.0

    hist_i: list[float] = []
    hist_h: list[float] = []
    hist_c: list[float] = []
    status = "max_iterations"
    converged = False
    psi = apply_green(grid, q - b)
    iters = 0
    i_cur = information(prior, grid, q)
    # persistent relaxation factor: shrinks when the energy gap stalls
    # (the full linearized step can 2-cycle at positive temperature),
    # recovers toward 1 when the gap contracts
    t_relax = 1.0
    gap_prev = None
    stall = 0
    polish_budget = 3
    res_hist: list[float] = []

    for k in range(1, opts.max_outer_iters + 1):
        if k % 64 == 0:
            psi = apply_green(grid, q - b)  # shed incremental round-off
        h_cur = 0.5 * w * float(((q - b) * psi).sum())
        c_cur = w * float((q - b).sum())
        hist_i.append(i_cur)
        hist_h.append(h_cur)
        hist_c.append(c_cur)
        if k > 1:
            res = _mf_residual(grid, prior, q, psi, beta, gamma)
            res_hist.append(res)
            if (
                abs(h_cur - energy) <= ctol * (1 + abs(energy))
                and abs(c_cur - circulation) <= ctol * (1 + abs(circulation))
                and res <= rtol
            ):
                status = "converged"
                converged = True
                break

        # linearized-energy subproblem targets, in unweighted-sum form:
        #   <psi, q_new> = t1 := <psi, q> + (E - H(q))      (L(q_new) = E)
        #   <1, q_new>   = t2 := Gamma/w + <1, b>           (C(q_new) = Gamma)
        t1 = float((psi * q).sum()) + (energy - h_cur) / w
        t2 = circulation / w + float(b.sum())
        t1w, t2w = w * t1, w * t2
        try:
            beta, gamma = _solve_multipliers(
                grid, prior, psi, t1w, t2w, beta, gamma,
                tol1=0.1 * ctol * (1 + abs(t1w)), tol2=0.1 * ctol * (1 + abs(t2w)),
                max_iters=opts.newton_max_iters,
            )
        except InfeasibleError:
            status = "infeasible_subproblem"
            break
        except RuntimeError:
            status = "multiplier_failure"
            break
        iters = k
        q_full, ok = prior.fprime_field(-beta * psi - gamma)
        if not ok:
            status = "domain_exit"
            break
        dq = q_full - q
        g_dq = apply_green(grid, dq)
        # damping toward q preserves H >= E from any feasible point.  The
        # subproblem solution obeys I(q_full) <= I(q) + beta (H(q) - E) by
        # convexity, so entropy decrease is guaranteed for beta <= 0; at
        # positive temperature the halving enforces the same bound, whose
        # allowance vanishes as the energy gap closes.
        feasible = h_cur >= energy - 10 * ctol * (1 + abs(energy))
        t = t_relax if feasible else 1.0
        i_new = information(prior, grid, q + t * dq) if t < 1.0 else information(prior, grid, q_full)
        if feasible:
            allow = 1e-14 * (1 + abs(i_cur)) + max(0.0, beta) * max(0.0, h_cur - energy)
            while i_new > i_cur + allow and t > 2.0**-24:
                t *= 0.5
                i_new = information(prior, grid, q + t * dq)
        q = q + t * dq
        psi = psi + t * g_dq
        i_cur = i_new
        gap_new = abs(0.5 * w * float(((q - b) * psi).sum()) - energy)
        if gap_prev is not None and gap_new > 100 * ctol * (1 + abs(energy)):
            if gap_new > 0.9 * gap_prev:
                t_relax = max(0.25, 0.5 * t_relax)
            else:
                t_relax = min(1.0, 2.0 * t_relax)
        else:
            t_relax = min(1.0, 2.0 * t_relax)
        stall = stall + 1 if (gap_prev is not None and gap_new > 0.98 * gap_prev) else 0
        gap_prev = gap_new
        slow_residual = (
            len(res_hist) >= 12
            and res_hist[-1] > rtol
            and res_hist[-1] > 0.35 * res_hist[-12]
        )
        if (stall >= 12 or slow_residual) and polish_budget > 0:
            polish_budget -= 1
            stall = 0
            q_p, b_p, g_p, ok = _kkt_newton_polish(
                grid, prior, b, q, beta, gamma, energy, circulation, min(ctol, rtol)
            )
            if ok:
                q, beta, gamma = q_p, b_p, g_p
                psi = apply_green(grid, q - b)
                i_cur = information(prior, grid, q)
                gap_prev = None

    res = _mf_residual(grid, prior, q, psi, beta, gamma)
    return EquilibriumState(
        q=q,
        psi=psi,
        beta=beta,
        gamma=gamma,
        entropy=-information(prior, grid, q),
        energy=0.5 * w * float(((q - b) * psi).sum()),
        circulation=w * float((q - b).sum()),
        meanfield_residual=res,
        iterations=iters,
        converged=converged,
        status=status,
        target_energy=energy,
        target_circulation=circulation,
        history_information=hist_i,
        history_energy=hist_h,
        history_circulation=hist_c,
    )


def solve_canonical(
    grid: Grid,
    prior: Prior,
    topo: Topography,
    beta: float,
    gamma: float,
    opts: SolverOptions | None = None,
) -> EquilibriumState:
    """Minimize I + beta*H + gamma*C over all macrostates.

    When the objective is unbounded below (possible for strongly negative
    beta with heavy-tailed priors) the verdict is reported as status
    "unbounded": the canonical ensemble has no minimizer there, which the
    equivalence analysis treats as a first-class outcome.
    """
    opts = opts or SolverOptions()
    if not (math.isfinite(beta) and math.isfinite(gamma)):
        raise ValueError("beta and gamma must be finite")
    b = topo.values
    w = grid.cell_area

    q = b.copy()
    psi = apply_green(grid, q - b)  # zeros
    hist_i: list[float] = []
    hist_h: list[float] = []
    hist_c: list[float] = []

    def objective(i_val, h_val, c_val):
        return i_val + beta * h_val + gamma * c_val

    i_cur = information(prior, grid, q)
    h_cur = 0.0
    c_cur = 0.0
    f_cur = objective(i_cur, h_cur, c_cur)
    f_initial = f_cur
    status = "max_iterations"
    converged = False
    res = math.inf
    iters = 0

    for k in range(1, opts.max_outer_iters + 1):
        iters = k
        hist_i.append(i_cur)
        hist_h.append(h_cur)
        hist_c.append(c_cur)
        if f_cur < f_initial - 1e12:
            status = "unbounded"
            break
        q_mf, ok = prior.fprime_field(-beta * psi - gamma)
        if ok:
            res = norm(grid, q - q_mf)
            if res <= opts.residual_tol:
                status = "converged"
                converged = True
                break
            d = q_mf - q
            t0 = opts.damping
        else:
            d = -(prior.rate_prime_field(q) + beta * psi + gamma)
            t0 = min(1.0, 1.0 / (1.0 + norm(grid, d)))
        g_d = apply_green(grid, d)
        h_lin = inner_product(grid, psi, d)
        h_quad = 0.5 * inner_product(grid, d, g_d)
        c_lin = grid.integrate(d)
        t = t0
        accepted = False
        for _ in range(60):
            i_new = information(prior, grid, q + t * d)
            if math.isfinite(i_new):
                h_new = h_cur + t * h_lin + t * t * h_quad
                c_new = c_cur + t * c_lin
                f_new = objective(i_new, h_new, c_new)
                if f_new <= f_cur:
                    q = q + t * d
                    psi = psi + t * g_d
                    i_cur, h_cur, c_cur, f_cur = i_new, h_new, c_new, f_new
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            status = "stagnated"
            break

    return EquilibriumState(
        q=q,
        psi=psi,
        beta=beta,
        gamma=gamma,
        entropy=-i_cur,
        energy=h_cur,
        circulation=c_cur,
        meanfield_residual=res,
        iterations=iters,
        converged=converged,
        status=status,
        history_information=hist_i,
        history_energy=hist_h,
        history_circulation=hist_c,
    )
