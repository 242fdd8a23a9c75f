"""Second-variation analysis, Arnold criteria, penalized Lyapunov constants.

The second variation of I + beta*H + gamma*C at an equilibrium is the
bounded symmetric operator i''(qbar) + beta*G.  Its smallest eigenvalue on
all of L2 certifies canonical nondegeneracy; restricted to the tangent
subspace {dq : <psi, dq> = 0, <1, dq> = 0} it certifies microcanonical
nondegeneracy.  For nonequivalent states the full-space eigenvalue can be
negative while the tangent one is positive; the rank-two penalization
sigma (psi x psi) + tau (1 x 1) with the constants computed here restores a
mu/2 lower bound on arbitrary variations.

Eigenvalues are computed densely up to ``dense_limit`` unknowns and by
matrix-free Lanczos (ARPACK) beyond; conclusions are attached to the
discretization resolution, since continuum nondegeneracy is only sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .domain import Grid, apply_green, green_matrix, inner_product, norm
from .priors import Prior
from .solvers import EquilibriumState

DENSE_LIMIT_DEFAULT = 4096


@dataclass
class SecondVariation:
    """Operator i''(qbar) + beta*G and its bilinear form."""

    diag: np.ndarray
    beta: float
    grid: Grid

    def apply(self, z) -> np.ndarray:
        z = self.grid.as_field(z)
        return self.diag * z + self.beta * apply_green(self.grid, z)

    def bilinear(self, z1, z2) -> float:
        return inner_product(self.grid, z1, self.apply(z2))

    def dense(self) -> np.ndarray:
        g = _green_dense(self.grid)
        return np.diag(self.diag.ravel()) + self.beta * g


def _green_dense(grid: Grid) -> np.ndarray:
    cached = getattr(grid, "_green_dense", None)
    if cached is None:
        cached = green_matrix(grid)
        grid._green_dense = cached
    return cached


def second_variation(state: EquilibriumState, prior: Prior, grid: Grid) -> SecondVariation:
    lo, hi = prior.y_domain
    q = grid.as_field(state.q)
    if not np.all((q > lo) & (q < hi)):
        raise ValueError("equilibrium macrostate exits the rate domain")
    diag = prior.rate_pp_field(q)
    if not np.all(diag > 0):
        raise ValueError("i''(qbar) must be strictly positive")
    return SecondVariation(diag=diag, beta=state.beta, grid=grid)


class EigenIterationError(RuntimeError):
    """Matrix-free eigenvalue iteration failed to converge."""


def _smallest_eig_dense(matrix: np.ndarray) -> float:
    return float(scipy.linalg.eigvalsh(matrix, subset_by_index=[0, 0])[0])


def _smallest_eig_matfree(matvec, n: int) -> float:
    op = scipy.sparse.linalg.LinearOperator((n, n), matvec=matvec, dtype=float)
    try:
        vals = scipy.sparse.linalg.eigsh(
            op, k=1, which="SA", maxiter=5000, tol=1e-9, return_eigenvectors=False
        )
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise EigenIterationError("smallest-eigenvalue iteration did not converge") from exc
    return float(vals[0])


def _orthonormal_pair(grid: Grid, psi) -> np.ndarray:
    """Euclidean-orthonormal basis of span{psi, 1} on flattened samples.

    With uniform quadrature weights, euclidean and L2 orthogonality agree up
    to the scalar cell area, so matrix eigenvalues equal operator
    eigenvalues.
    """
    n = grid.n1 * grid.n2
    v1 = grid.as_field(psi).ravel().copy()
    nv1 = np.linalg.norm(v1)
    if nv1 == 0:
        raise ValueError("psi vanishes identically; tangent subspace undefined")
    v1 /= nv1
    v2 = np.ones(n)
    v2 -= v1 * (v1 @ v2)
    nv2 = np.linalg.norm(v2)
    if nv2 <= 1e-12 * math.sqrt(n):
        raise ValueError("psi is parallel to 1; tangent projection degenerate")
    v2 /= nv2
    return np.column_stack([v1, v2])


def min_eig(
    op: SecondVariation,
    subspace: str = "full",
    psi=None,
    dense_limit: int = DENSE_LIMIT_DEFAULT,
) -> float:
    """Smallest eigenvalue of the second-variation operator.

    subspace "full" is the whole of L2; "tangent" restricts to the
    orthogonal complement of span{psi, 1} (the linearized constraint
    directions), which requires ``psi``.
    """
    grid = op.grid
    n = grid.n1 * grid.n2
    if subspace == "full":
        if n <= dense_limit:
            return _smallest_eig_dense(op.dense())
        return _smallest_eig_matfree(
            lambda z: op.apply(z.reshape(grid.n1, grid.n2)).ravel(), n
        )
    if subspace != "tangent":
        raise ValueError(f"unknown subspace {subspace!r}")
    if psi is None:
        raise ValueError("tangent subspace requires psi")
    v = _orthonormal_pair(grid, psi)
    shift = float(np.max(op.diag)) + abs(op.beta) / grid.lambda_1 + 1.0
    if n <= dense_limit:
        a = op.dense()
        av = a @ v
        proj = a - v @ av.T - av @ v.T + v @ (v.T @ av) @ v.T + shift * (v @ v.T)
        return _smallest_eig_dense(proj)

    def matvec(z):
        z = z - v @ (v.T @ z)
        az = op.apply(z.reshape(grid.n1, grid.n2)).ravel()
        az -= v @ (v.T @ az)
        return az + shift * (v @ (v.T @ z))

    return _smallest_eig_matfree(matvec, n)


def nu_bound(state: EquilibriumState, prior: Prior, grid: Grid) -> float:
    """Upper second-variation constant: max i''(qbar) + |beta| / lambda_1."""
    diag = prior.rate_pp_field(grid.as_field(state.q))
    return float(np.max(diag)) + abs(state.beta) / grid.lambda_1


def shear_profile(state: EquilibriumState, prior: Prior, grid: Grid) -> np.ndarray:
    """Pointwise d qbar / d psibar = -beta / i''(qbar)."""
    diag = prior.rate_pp_field(grid.as_field(state.q))
    return -state.beta / diag


def arnold_check(state: EquilibriumState, prior: Prior, grid: Grid) -> dict:
    """Classical sufficient conditions: Rayleigh (first theorem) requires
    d qbar/d psibar < 0 everywhere; the second theorem requires it in
    (0, lambda_1)."""
    prof = shear_profile(state, prior, grid)
    lo = float(prof.min())
    hi = float(prof.max())
    return {
        "dqdpsi_min": lo,
        "dqdpsi_max": hi,
        "rayleigh_ok": hi < 0.0,
        "arnold2_ok": (lo > 0.0) and (hi < grid.lambda_1),
    }


def penalization_constants(
    state: EquilibriumState, mu_tangent: float, nu: float, grid: Grid
) -> tuple[float, float, float]:
    """Constants (sigma, tau, theta) making the penalized Hessian definite.

    theta is the smallest eigenvalue of the 2x2 Gram matrix of the
    normalized pair {psibar, 1} (the sharp constant in the projection
    inequality).  With eps_hat = mu/(2 nu) the common penalization level is
    K = mu/2 + nu/eps_hat + nu, split as sigma*theta*|psi|^2 =
    tau*theta*|1|^2 = K.
    """
    if not mu_tangent > 0:
        raise ValueError("penalization requires a positive tangent eigenvalue")
    if not nu > 0:
        raise ValueError("nu must be positive")
    psi_norm = norm(grid, state.psi)
    one_norm = math.sqrt(grid.area)
    if psi_norm == 0:
        raise ValueError("psi vanishes; penalization geometry undefined (needs E != 0)")
    cosang = inner_product(grid, state.psi, grid.constant(1.0)) / (psi_norm * one_norm)
    theta = 1.0 - abs(cosang)
    if theta <= 1e-12:
        raise ValueError("psi parallel to 1: degenerate penalization geometry")
    eps_hat = mu_tangent / (2.0 * nu)
    level = mu_tangent / 2.0 + nu / eps_hat + nu
    sigma = level / (theta * psi_norm**2)
    tau = level / (theta * one_norm**2)
    return sigma, tau, theta


def verify_penalized_hessian(
    state: EquilibriumState,
    sigma: float,
    tau: float,
    prior: Prior,
    grid: Grid,
    dense_limit: int = DENSE_LIMIT_DEFAULT,
) -> float:
    """Smallest eigenvalue of D2 + sigma (psi x psi) + tau (1 x 1).

    The rank-two terms act through the L2 pairing, so in the sample-space
    matrix they carry one factor of the cell area.
    """
    op = second_variation(state, prior, grid)
    n = grid.n1 * grid.n2
    w = grid.cell_area
    psi = grid.as_field(state.psi).ravel()
    ones = np.ones(n)
    if n <= dense_limit:
        a = op.dense()
        a = a + sigma * w * np.outer(psi, psi) + tau * w * np.outer(ones, ones)
        return _smallest_eig_dense(a)

    def matvec(z):
        az = op.apply(z.reshape(grid.n1, grid.n2)).ravel()
        az += sigma * w * psi * (psi @ z)
        az += tau * w * ones * (ones @ z)
        return az

    return _smallest_eig_matfree(matvec, n)


@dataclass
class StabilityReport:
    """Second-variation eigenvalues, Arnold verdicts and penalization data."""

    mu_full: float
    mu_tangent: float
    nu: float
    theta: float
    sigma: float
    tau: float
    dqdpsi_min: float
    dqdpsi_max: float
    lambda_1: float
    penalized_min_eig: float
    rayleigh_ok: bool
    arnold2_ok: bool
    canonical_nondegenerate: bool
    microcanonical_nondegenerate: bool
    lyapunov_penalized_ok: bool
    resolution: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["resolution"] = list(self.resolution)
        return d


def stability_report(
    state: EquilibriumState,
    prior: Prior,
    grid: Grid,
    dense_limit: int = DENSE_LIMIT_DEFAULT,
    tol: float = 1e-8,
) -> StabilityReport:
    """Full stability pipeline for a converged equilibrium state."""
    op = second_variation(state, prior, grid)
    mu_full = min_eig(op, "full", dense_limit=dense_limit)
    mu_tan = min_eig(op, "tangent", psi=state.psi, dense_limit=dense_limit)
    nu = nu_bound(state, prior, grid)
    checks = arnold_check(state, prior, grid)
    margin = 1e-6 * nu
    sigma = tau = theta = float("nan")
    pen_min = float("nan")
    pen_ok = False
    if mu_tan > margin:
        sigma, tau, theta = penalization_constants(state, mu_tan, nu, grid)
        pen_min = verify_penalized_hessian(state, sigma, tau, prior, grid, dense_limit=dense_limit)
        pen_ok = pen_min >= mu_tan / 2.0 - tol
    return StabilityReport(
        mu_full=mu_full,
        mu_tangent=mu_tan,
        nu=nu,
        theta=theta,
        sigma=sigma,
        tau=tau,
        dqdpsi_min=checks["dqdpsi_min"],
        dqdpsi_max=checks["dqdpsi_max"],
        lambda_1=grid.lambda_1,
        penalized_min_eig=pen_min,
        rayleigh_ok=checks["rayleigh_ok"],
        arnold2_ok=checks["arnold2_ok"],
        canonical_nondegenerate=mu_full > margin,
        microcanonical_nondegenerate=mu_tan > margin,
        lyapunov_penalized_ok=pen_ok,
        resolution=(grid.n1, grid.n2),
    )
