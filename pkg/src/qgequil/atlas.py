"""Constraint-plane sweeps and ensemble-equivalence classification.

The microcanonical entropy S(E, Gamma) is tabulated over a rectangular grid
of constraint pairs by warm-started serpentine solves.  A point admits a
supporting plane (normal from its own multipliers) exactly when the
canonical and microcanonical ensembles agree there; the classifier labels
each admissible point full / partial / nonequivalent from the supporting
plane test and the multiplicity of its contact set, and nonequivalent labels
carry a concrete witness pair violating the plane inequality.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .domain import Grid, norm
from .flow import Topography
from .priors import Prior
from .solvers import EquilibriumState, InfeasibleError, SolverOptions, solve_canonical, solve_microcanonical

TOL_SUPPORT_DEFAULT = 1e-6
TOL_CONTACT_DEFAULT = 1e-4


def _axis(lo: float, hi: float, spacing: float) -> np.ndarray:
    """Half-open (lo, hi] axis: lo + spacing, ..., hi."""
    if not spacing > 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    count = int(round((hi - lo) / spacing))
    if count < 1:
        raise ValueError(f"empty axis: ({lo}, {hi}] at spacing {spacing}")
    return lo + spacing * np.arange(1, count + 1)


@dataclass
class EntropySurface:
    """Tabulated S(E, Gamma) with admissibility and convergence flags."""

    e_values: np.ndarray
    g_values: np.ndarray
    admissible: np.ndarray
    converged: np.ndarray
    entropy: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    spacings: tuple[float, float]
    states: dict = field(default_factory=dict)
    labels: np.ndarray | None = None
    witness_e: np.ndarray | None = None
    witness_g: np.ndarray | None = None

    def index_of(self, e: float, g: float) -> tuple[int, int]:
        i = int(np.argmin(np.abs(self.e_values - e)))
        j = int(np.argmin(np.abs(self.g_values - g)))
        de, dg = self.spacings
        if abs(self.e_values[i] - e) > 1e-9 + 1e-6 * de or abs(self.g_values[j] - g) > 1e-9 + 1e-6 * dg:
            raise KeyError(f"({e}, {g}) is not a sweep grid point")
        return i, j

    def usable(self) -> np.ndarray:
        return self.admissible & self.converged


def _solve_row(grid, prior, topo, e_val, g_values, order, opts, keep_states, warm):
    """One constant-E row of the sweep, traversed in the given order with a
    warm-start chain; returns (records, final_warm_state)."""
    out = []
    for j in order:
        g_val = float(g_values[j])
        rec = {"j": j, "admissible": True, "converged": False,
               "S": math.nan, "beta": math.nan, "gamma": math.nan, "state": None}
        row_opts = SolverOptions(
            max_outer_iters=opts.max_outer_iters,
            constraint_tol=opts.constraint_tol,
            residual_tol=opts.residual_tol,
            damping=opts.damping,
            newton_max_iters=opts.newton_max_iters,
            warm_start=warm,
        )
        try:
            st = solve_microcanonical(grid, prior, topo, float(e_val), g_val, row_opts)
        except InfeasibleError:
            rec["admissible"] = False
            out.append(rec)
            continue
        if st.status in ("infeasible_subproblem",):
            rec["admissible"] = False
        elif st.converged:
            rec["converged"] = True
            rec["S"] = st.entropy
            rec["beta"] = st.beta
            rec["gamma"] = st.gamma
            if keep_states:
                rec["state"] = st
            warm = st
        out.append(rec)
    return out, warm


def sweep_entropy(
    grid: Grid,
    prior: Prior,
    topo: Topography,
    e_range: tuple[float, float],
    g_range: tuple[float, float],
    spacings: tuple[float, float],
    opts: SolverOptions | None = None,
    jobs: int = 1,
    keep_states: bool = True,
) -> EntropySurface:
    """Tabulate S over the half-open box (e_range] x (g_range].

    Serpentine traversal along Gamma with a continuous warm-start chain when
    jobs == 1; with jobs > 1 the rows are solved in parallel, each with an
    independent serpentine warm chain, and merged deterministically by grid
    index.  Per-point nonconvergence or infeasibility is recorded, not fatal.
    """
    opts = opts or SolverOptions()
    e_values = _axis(e_range[0], e_range[1], spacings[0])
    g_values = _axis(g_range[0], g_range[1], spacings[1])
    ne, ng = len(e_values), len(g_values)
    surf = EntropySurface(
        e_values=e_values,
        g_values=g_values,
        admissible=np.zeros((ne, ng), dtype=bool),
        converged=np.zeros((ne, ng), dtype=bool),
        entropy=np.full((ne, ng), math.nan),
        beta=np.full((ne, ng), math.nan),
        gamma=np.full((ne, ng), math.nan),
        spacings=(float(spacings[0]), float(spacings[1])),
    )

    orders = [list(range(ng)) if i % 2 == 0 else list(range(ng - 1, -1, -1)) for i in range(ne)]

    def store(i, recs):
        for rec in recs:
            j = rec["j"]
            surf.admissible[i, j] = rec["admissible"]
            surf.converged[i, j] = rec["converged"]
            surf.entropy[i, j] = rec["S"]
            surf.beta[i, j] = rec["beta"]
            surf.gamma[i, j] = rec["gamma"]
            if rec["state"] is not None:
                surf.states[(i, j)] = rec["state"]

    if jobs <= 1:
        warm = None
        for i in range(ne):
            recs, warm = _solve_row(
                grid, prior, topo, e_values[i], g_values, orders[i], opts, keep_states, warm
            )
            if not keep_states:
                for rec in recs:
                    rec["state"] = None
            store(i, recs)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [
                pool.submit(
                    _solve_row, grid, prior, topo, e_values[i], g_values, orders[i], opts, keep_states, None
                )
                for i in range(ne)
            ]
            for i, fut in enumerate(futs):
                recs, _ = fut.result()
                store(i, recs)
    return surf


@dataclass
class EquivalenceLabel:
    """Classification of one constraint pair."""

    label: str  # full | partial | nonequivalent | inadmissible | unclassified
    witness: tuple[float, float] | None = None
    contacts: list = field(default_factory=list)


def support_test(
    surface: EntropySurface, at: tuple[float, float], tol_support: float = TOL_SUPPORT_DEFAULT
) -> tuple[bool, tuple[float, float] | None]:
    """Check the supporting-plane inequality of the point's own multipliers
    against every usable grid point; returns (ok, first_violating_witness)."""
    i, j = surface.index_of(*at)
    if not (surface.admissible[i, j] and surface.converged[i, j]):
        raise ValueError(f"support test needs an admissible converged point at {at}")
    s0 = surface.entropy[i, j]
    b0 = surface.beta[i, j]
    g0 = surface.gamma[i, j]
    e0, gm0 = surface.e_values[i], surface.g_values[j]
    usable = surface.usable()
    ee = surface.e_values[:, None]
    gg = surface.g_values[None, :]
    plane = s0 + b0 * (ee - e0) + g0 * (gg - gm0)
    tol = tol_support * (1.0 + np.maximum(np.abs(surface.entropy), abs(s0)))
    viol = usable & (surface.entropy > plane + tol)
    if not viol.any():
        return True, None
    vi, vj = np.argwhere(viol)[0]
    return False, (float(surface.e_values[vi]), float(surface.g_values[vj]))


def classify(
    surface: EntropySurface,
    at: tuple[float, float],
    tol_support: float = TOL_SUPPORT_DEFAULT,
    tol_contact: float = TOL_CONTACT_DEFAULT,
) -> EquivalenceLabel:
    """Full / partial / nonequivalent / inadmissible at one grid point."""
    i, j = surface.index_of(*at)
    if not surface.admissible[i, j]:
        return EquivalenceLabel(label="inadmissible")
    if not surface.converged[i, j]:
        return EquivalenceLabel(label="unclassified")
    ok, witness = support_test(surface, at, tol_support=tol_support)
    if not ok:
        return EquivalenceLabel(label="nonequivalent", witness=witness)
    s0 = surface.entropy[i, j]
    b0, g0 = surface.beta[i, j], surface.gamma[i, j]
    e0, gm0 = surface.e_values[i], surface.g_values[j]
    ee = surface.e_values[:, None]
    gg = surface.g_values[None, :]
    plane = s0 + b0 * (ee - e0) + g0 * (gg - gm0)
    tol = tol_contact * (1.0 + np.abs(surface.entropy))
    contact = surface.usable() & (plane - surface.entropy <= tol)
    pts = [
        (float(surface.e_values[ci]), float(surface.g_values[cj]))
        for ci, cj in np.argwhere(contact)
    ]
    others = [p for p in pts if not (abs(p[0] - e0) < 1e-12 and abs(p[1] - gm0) < 1e-12)]
    if others:
        return EquivalenceLabel(label="partial", witness=others[0], contacts=others)
    return EquivalenceLabel(label="full", contacts=[])


def classify_all(
    surface: EntropySurface,
    tol_support: float = TOL_SUPPORT_DEFAULT,
    tol_contact: float = TOL_CONTACT_DEFAULT,
) -> EntropySurface:
    """Label every grid point in place (fills labels / witness arrays)."""
    ne, ng = surface.entropy.shape
    labels = np.full((ne, ng), "unclassified", dtype=object)
    we = np.full((ne, ng), math.nan)
    wg = np.full((ne, ng), math.nan)
    for i in range(ne):
        for j in range(ng):
            lab = classify(
                surface,
                (surface.e_values[i], surface.g_values[j]),
                tol_support=tol_support,
                tol_contact=tol_contact,
            )
            labels[i, j] = lab.label
            if lab.witness is not None:
                we[i, j], wg[i, j] = lab.witness
    surface.labels = labels
    surface.witness_e = we
    surface.witness_g = wg
    return surface


def conjugate_phi(surface: EntropySurface, beta: float, gamma: float) -> float:
    """Phi(beta, gamma) = min over usable grid points of beta E + gamma Gamma - S."""
    usable = surface.usable()
    if not usable.any():
        raise ValueError("conjugate of an empty admissible set")
    ee = surface.e_values[:, None]
    gg = surface.g_values[None, :]
    vals = beta * ee + gamma * gg - surface.entropy
    return float(np.min(vals[usable]))


def concave_hull(surface: EntropySurface) -> np.ndarray:
    """S**(E, Gamma) over the grid: infimum of the planes beta E + gamma G -
    Phi(beta, gamma) over the surface's own multipliers plus their bounding
    box.  Dominates S by construction."""
    usable = surface.usable()
    if not usable.any():
        raise ValueError("hull of an empty admissible set")
    betas = surface.beta[usable]
    gammas = surface.gamma[usable]
    bb = [float(betas.min()), float(betas.max())]
    gb = [float(gammas.min()), float(gammas.max())]
    corners = np.array([[b, g] for b in bb for g in gb])
    mults = np.vstack([np.column_stack([betas, gammas]), corners])
    ee = surface.e_values[:, None]
    gg = surface.g_values[None, :]
    s = surface.entropy
    hull = np.full(s.shape, math.inf)
    pts_e = ee.repeat(s.shape[1], axis=1)[usable]
    pts_g = np.broadcast_to(gg, s.shape)[usable]
    pts_s = s[usable]
    chunk = 512
    for k0 in range(0, len(mults), chunk):
        mb = mults[k0 : k0 + chunk, 0][:, None]
        mg = mults[k0 : k0 + chunk, 1][:, None]
        phi = (mb * pts_e[None, :] + mg * pts_g[None, :] - pts_s[None, :]).min(axis=1)
        planes = mb[:, :, None] * ee[None, :, :] + mg[:, :, None] * gg[None, :, :] - phi[:, None, None]
        hull = np.minimum(hull, planes.min(axis=0))
    return hull


@dataclass
class CrossCheckReport:
    """Canonical re-solve at a point's recovered multipliers (Theorem 4a check)."""

    point: tuple[float, float]
    beta: float
    gamma: float
    canonical_status: str
    canonical_energy: float
    canonical_circulation: float
    energy_rel_mismatch: float
    circulation_rel_mismatch: float
    state_rel_l2: float


def cross_check_canonical(
    surface: EntropySurface,
    at: tuple[float, float],
    grid: Grid,
    prior: Prior,
    topo: Topography,
    opts: SolverOptions | None = None,
) -> CrossCheckReport:
    i, j = surface.index_of(*at)
    if not (surface.admissible[i, j] and surface.converged[i, j]):
        raise ValueError(f"cross-check needs an admissible converged point at {at}")
    b0 = float(surface.beta[i, j])
    g0 = float(surface.gamma[i, j])
    e0 = float(surface.e_values[i])
    gm0 = float(surface.g_values[j])
    can = solve_canonical(grid, prior, topo, b0, g0, opts)
    state = surface.states.get((i, j))
    if state is None:
        state = solve_microcanonical(grid, prior, topo, e0, gm0, opts or SolverOptions())
    rel_q = norm(grid, can.q - state.q) / max(norm(grid, state.q), 1e-300)
    return CrossCheckReport(
        point=(e0, gm0),
        beta=b0,
        gamma=g0,
        canonical_status=can.status,
        canonical_energy=can.energy,
        canonical_circulation=can.circulation,
        energy_rel_mismatch=abs(can.energy - e0) / (1.0 + abs(e0)),
        circulation_rel_mismatch=abs(can.circulation - gm0) / (1.0 + abs(gm0)),
        state_rel_l2=rel_q,
    )


def multiplier_gradient_check(surface: EntropySurface) -> dict:
    """Centered-difference dS/dE vs beta and dS/dGamma vs gamma at interior
    usable points whose four neighbors are usable; returns pass fractions."""
    usable = surface.usable()
    de, dg = surface.spacings
    ne, ng = surface.entropy.shape
    n_checked = 0
    n_beta_ok = 0
    n_gamma_ok = 0
    details = []
    for i in range(1, ne - 1):
        for j in range(1, ng - 1):
            if not usable[i, j]:
                continue
            if not (usable[i - 1, j] and usable[i + 1, j] and usable[i, j - 1] and usable[i, j + 1]):
                continue
            bfd = (surface.entropy[i + 1, j] - surface.entropy[i - 1, j]) / (2 * de)
            gfd = (surface.entropy[i, j + 1] - surface.entropy[i, j - 1]) / (2 * dg)
            b = surface.beta[i, j]
            g = surface.gamma[i, j]
            bok = abs(b - bfd) <= max(0.05 * abs(b), 0.02)
            gok = abs(g - gfd) <= max(0.05 * abs(g), 0.02)
            n_checked += 1
            n_beta_ok += bok
            n_gamma_ok += gok
            details.append((i, j, b, bfd, g, gfd))
    return {
        "checked": n_checked,
        "beta_ok": n_beta_ok,
        "gamma_ok": n_gamma_ok,
        "beta_fraction": n_beta_ok / n_checked if n_checked else math.nan,
        "gamma_fraction": n_gamma_ok / n_checked if n_checked else math.nan,
    }
