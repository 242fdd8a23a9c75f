"""Prior distributions for small-scale vorticity fluctuations.

Each prior is represented through its cumulant generating function f and the
conjugate rate function i (Legendre-Fenchel pair).  f' is the pointwise
vorticity-streamfunction map of the mean-field equation; the information
functional I(q) = integral of i(q) is the negative entropy of a macrostate.

Built-ins: the unit gaussian, and the skewed gamma family with mean 0,
variance 1 and third moment 2*eps (supported on y > -1/eps).  Arbitrary
priors can be loaded from a sampled density table; their f is computed by
quadrature and their i by numerical conjugation.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar

from ._core import kernels
from .domain import Grid

KIND_GAUSSIAN = kernels.KIND_GAUSSIAN
KIND_GAMMA = kernels.KIND_GAMMA


class PriorDomainError(ValueError):
    """Argument outside the open domain of f or i; carries the boundary."""

    def __init__(self, message: str, boundary: float | None = None):
        super().__init__(message)
        self.boundary = boundary


class ConjugateUnboundedError(RuntimeError):
    """The Legendre-Fenchel supremum diverges at the requested point."""


class Prior:
    """Interface shared by all priors.

    Attributes
    ----------
    kind : str
        "gaussian", "gamma_skew" or "tabulated".
    mean : float
        Mean of the distribution (minimizer of the rate function).
    eta_domain, y_domain : tuple of float
        Open intervals of validity for f and i.
    decay_delta : float or None
        A delta certifying the square-exponential decay condition, or None
        when the prior violates it (the gamma family does).
    kind_code : int or None
        Kernel dispatch code for the fused solver loops; None means no fast
        path and the generic vectorized methods are used.
    """

    kind: str = "base"
    mean: float = 0.0
    eta_domain: tuple[float, float] = (-math.inf, math.inf)
    y_domain: tuple[float, float] = (-math.inf, math.inf)
    decay_delta: float | None = None
    kind_code: int | None = None
    eps: float = 0.0

    # scalar API ---------------------------------------------------------

    def cgf(self, eta: float) -> float:
        raise NotImplementedError

    def cgf_derivs(self, eta: float) -> tuple[float, float]:
        raise NotImplementedError

    def rate(self, y: float) -> float:
        raise NotImplementedError

    def rate_derivs(self, y: float) -> tuple[float, float]:
        raise NotImplementedError

    def _check_eta(self, eta: float) -> None:
        lo, hi = self.eta_domain
        if not (lo < eta < hi):
            bound = hi if eta >= hi else lo
            raise PriorDomainError(
                f"eta = {eta} outside cumulant domain ({lo}, {hi})", boundary=bound
            )

    def _check_y(self, y: float) -> None:
        lo, hi = self.y_domain
        if not (lo < y < hi):
            bound = hi if y >= hi else lo
            raise PriorDomainError(
                f"y = {y} outside rate domain ({lo}, {hi})", boundary=bound
            )

    # vectorized API used by the solvers ----------------------------------

    def fprime_field(self, eta: np.ndarray) -> tuple[np.ndarray, bool]:
        """Elementwise f'; ok=False flags a domain exit."""
        if self.kind_code is not None:
            return kernels.fprime(eta, self.kind_code, self.eps)
        raise NotImplementedError

    def fpp_field(self, eta: np.ndarray) -> tuple[np.ndarray, bool]:
        if self.kind_code is not None:
            return kernels.fpp(eta, self.kind_code, self.eps)
        raise NotImplementedError

    def rate_field_sum(self, q: np.ndarray) -> float:
        """Unweighted sum of i over cells; +inf marker on domain exit."""
        if self.kind_code is not None:
            return kernels.rate_sum(q, self.kind_code, self.eps)
        raise NotImplementedError

    def rate_prime_field(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rate_pp_field(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # sampling (LDP Monte Carlo) ------------------------------------------

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def tilted_sample(self, rng: np.random.Generator, eta: float, size: int) -> np.ndarray:
        """Draw from the exponentially tilted density  e^(eta*y - f(eta)) rho(dy)."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class GaussianPrior(Prior):
    """Standard normal prior: f = eta^2/2, i = y^2/2."""

    kind = "gaussian"
    kind_code = KIND_GAUSSIAN
    decay_delta = 0.5

    def cgf(self, eta: float) -> float:
        return 0.5 * eta * eta

    def cgf_derivs(self, eta: float) -> tuple[float, float]:
        return eta, 1.0

    def rate(self, y: float) -> float:
        return 0.5 * y * y

    def rate_derivs(self, y: float) -> tuple[float, float]:
        return y, 1.0

    def rate_prime_field(self, q):
        return np.asarray(q, dtype=float).copy()

    def rate_pp_field(self, q):
        return np.ones_like(np.asarray(q, dtype=float))

    def sample(self, rng, size):
        return rng.standard_normal(size)

    def tilted_sample(self, rng, eta, size):
        return eta + rng.standard_normal(size)

    def to_dict(self):
        return {"kind": "gaussian"}


class GammaPrior(Prior):
    """Skewed gamma family: mean 0, variance 1, third moment 2*eps.

    f(eta) = -eta/eps - log(1 - eps*eta)/eps^2   on eta < 1/eps
    i(y)   =  y/eps   - log(1 + eps*y)/eps^2     on y   > -1/eps

    Violates the square-exponential decay condition (exponential right
    tail), hence ``decay_delta`` is None.
    """

    kind = "gamma_skew"
    kind_code = KIND_GAMMA
    decay_delta = None

    def __init__(self, eps: float):
        if not (eps > 0 and math.isfinite(eps)):
            raise ValueError(f"gamma skew parameter must be positive, got {eps}")
        self.eps = float(eps)
        self.eta_domain = (-math.inf, 1.0 / self.eps)
        self.y_domain = (-1.0 / self.eps, math.inf)

    def cgf(self, eta: float) -> float:
        self._check_eta(eta)
        e = self.eps
        return -eta / e - math.log1p(-e * eta) / (e * e)

    def cgf_derivs(self, eta: float) -> tuple[float, float]:
        self._check_eta(eta)
        d = 1.0 - self.eps * eta
        return eta / d, 1.0 / (d * d)

    def rate(self, y: float) -> float:
        self._check_y(y)
        e = self.eps
        return y / e - math.log1p(e * y) / (e * e)

    def rate_derivs(self, y: float) -> tuple[float, float]:
        self._check_y(y)
        t = 1.0 + self.eps * y
        return y / t, 1.0 / (t * t)

    def rate_prime_field(self, q):
        q = np.asarray(q, dtype=float)
        return q / (1.0 + self.eps * q)

    def rate_pp_field(self, q):
        q = np.asarray(q, dtype=float)
        return 1.0 / (1.0 + self.eps * q) ** 2

    def sample(self, rng, size):
        k = 1.0 / (self.eps * self.eps)
        return self.eps * (rng.gamma(shape=k, scale=1.0, size=size) - k)

    def tilted_sample(self, rng, eta, size):
        # tilting by eta rescales the underlying gamma: scale 1/(1 - eps*eta)
        if not eta < 1.0 / self.eps:
            raise PriorDomainError(
                f"tilt eta = {eta} outside cumulant domain", boundary=1.0 / self.eps
            )
        k = 1.0 / (self.eps * self.eps)
        x = rng.gamma(shape=k, scale=1.0 / (1.0 - self.eps * eta), size=size)
        return self.eps * (x - k)

    def to_dict(self):
        return {"kind": "gamma_skew", "eps": self.eps}


def _phi_panel(x: np.ndarray, kmax: int) -> list[np.ndarray]:
    """phi_k(x) = integral_0^1 t^k e^{x t} dt for k = 0..kmax, stable in x.

    Upward recursion phi_k = (e^x - k phi_{k-1})/x away from zero, Taylor
    series near zero where the recursion cancels catastrophically.
    """
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    ex = np.exp(x)
    out = []
    phi = np.where(small, 1.0, np.expm1(np.where(small, 1.0, x)) / np.where(small, 1.0, x))
    # series: phi_k(x) = sum_j x^j / (j! (k + j + 1))
    for k in range(kmax + 1):
        if k == 0:
            val = phi
        else:
            val = (ex - k * out[k - 1]) / np.where(small, 1.0, x)
        ser = np.zeros_like(x)
        term = np.ones_like(x)
        for j in range(8):
            ser = ser + term / (k + j + 1)
            term = term * x / (j + 1)
        out.append(np.where(small, ser, val))
    return out


class TabulatedPrior(Prior):
    """Prior defined by a sampled density table (y_i, rho_i).

    f and its derivatives are computed by exact quadrature of the piecewise
    linear interpolant of the density; i is obtained by numerical
    conjugation.  The rate domain is truncated to the sampled support:
    i = +inf outside the table range (extrapolation beyond the samples is
    deliberately not attempted).
    """

    kind = "tabulated"
    kind_code = None

    def __init__(self, y: np.ndarray, density: np.ndarray, mass_tol: float = 1e-6):
        y = np.asarray(y, dtype=float)
        rho = np.asarray(density, dtype=float)
        if y.ndim != 1 or y.size < 3 or y.shape != rho.shape:
            raise ValueError("tabulated prior needs matching 1-D arrays with >= 3 rows")
        if not np.all(np.diff(y) > 0):
            raise ValueError("tabulated prior: y column must be strictly increasing")
        if np.any(rho < 0):
            raise ValueError("tabulated prior: density must be nonnegative")
        mass = float(np.trapezoid(rho, y))
        if abs(mass - 1.0) > mass_tol:
            raise ValueError(
                f"tabulated prior: density mass {mass:.8f} deviates from 1 by more than {mass_tol}"
            )
        self._y = y
        self._rho = rho
        self.mean = float(np.trapezoid(rho * y, y))
        self.y_domain = (float(y[0]), float(y[-1]))
        self.eta_domain = (-math.inf, math.inf)
        self.decay_delta = 1.0  # compact support
        self._rate_table = None

    @classmethod
    def from_csv(cls, path, mass_tol: float = 1e-6) -> "TabulatedPrior":
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        if data.shape[1] != 2:
            raise ValueError(f"tabulated prior CSV must have two columns, got {data.shape[1]}")
        return cls(data[:, 0], data[:, 1], mass_tol=mass_tol)

    # quadrature of moments of e^{eta y} rho(y) dy, panel-exact for the
    # linear interpolant; shifted by y_ref for overflow safety.
    def _tilted_moments(self, eta: float) -> tuple[float, float, float]:
        y, rho = self._y, self._rho
        y_ref = y[-1] if eta > 0 else y[0]
        y0, y1 = y[:-1], y[1:]
        r0, r1 = rho[:-1], rho[1:]
        h = y1 - y0
        x = eta * h
        p0, p1, p2, p3 = _phi_panel(x, 3)
        base = np.exp(eta * (y0 - y_ref)) * h
        # density along panel: r0 + (r1-r0) t ; y = y0 + h t
        m0 = base * (r0 * p0 + (r1 - r0) * p1)
        m1 = base * (r0 * (y0 * p0 + h * p1) + (r1 - r0) * (y0 * p1 + h * p2))
        m2 = base * (
            r0 * (y0 * y0 * p0 + 2 * y0 * h * p1 + h * h * p2)
            + (r1 - r0) * (y0 * y0 * p1 + 2 * y0 * h * p2 + h * h * p3)
        )
        z = float(m0.sum())
        return z, float(m1.sum()) / z, float(m2.sum()) / z

    def _log_partition(self, eta: float) -> float:
        y = self._y
        y_ref = y[-1] if eta > 0 else y[0]
        z, _, _ = self._tilted_moments(eta)
        return eta * y_ref + math.log(z)

    def cgf(self, eta: float) -> float:
        return self._log_partition(float(eta))

    def cgf_derivs(self, eta: float) -> tuple[float, float]:
        _, mu, m2 = self._tilted_moments(float(eta))
        return mu, max(m2 - mu * mu, 0.0)

    def _conjugate_at(self, y: float) -> tuple[float, float]:
        """Return (i(y), eta*) with eta* the maximizing tilt: f'(eta*) = y."""
        self._check_y(y)
        lo, hi = -1.0, 1.0
        for _ in range(200):
            if self.cgf_derivs(lo)[0] < y:
                break
            lo *= 2.0
        for _ in range(200):
            if self.cgf_derivs(hi)[0] > y:
                break
            hi *= 2.0
        eta = 0.5 * (lo + hi)
        for _ in range(100):
            f1, f2 = self.cgf_derivs(eta)
            if f1 > y:
                hi = eta
            else:
                lo = eta
            step = (f1 - y) / f2 if f2 > 0 else 0.0
            nxt = eta - step
            if not (lo < nxt < hi):
                nxt = 0.5 * (lo + hi)
            if abs(nxt - eta) <= 1e-13 * (1.0 + abs(eta)):
                eta = nxt
                break
            eta = nxt
        return eta * y - self.cgf(eta), eta

    def rate(self, y: float) -> float:
        return self._conjugate_at(float(y))[0]

    def rate_derivs(self, y: float) -> tuple[float, float]:
        _, eta = self._conjugate_at(float(y))
        f2 = self.cgf_derivs(eta)[1]
        return eta, 1.0 / f2

    # dense-table vectorized path (solver use); built lazily
    def _tables(self):
        if self._rate_table is None:
            lo, hi = self.y_domain
            pad = 1e-9 * (hi - lo)
            ys = np.linspace(lo + pad, hi - pad, 2001)
            vals = np.empty_like(ys)
            etas = np.empty_like(ys)
            for j, yv in enumerate(ys):
                vals[j], etas[j] = self._conjugate_at(float(yv))
            self._rate_table = (ys, vals, etas)
        return self._rate_table

    def rate_field_sum(self, q):
        q = np.asarray(q, dtype=float)
        lo, hi = self.y_domain
        if not np.all((q > lo) & (q < hi)):
            return np.inf
        ys, vals, _ = self._tables()
        return float(np.interp(q.ravel(), ys, vals).sum())

    def rate_prime_field(self, q):
        ys, _, etas = self._tables()
        return np.interp(np.asarray(q, dtype=float), ys, etas)

    def rate_pp_field(self, q):
        q = np.asarray(q, dtype=float)
        out = np.empty_like(q)
        flat = out.ravel()
        for j, yv in enumerate(q.ravel()):
            flat[j] = self.rate_derivs(float(yv))[1]
        return out

    def fprime_field(self, eta):
        eta = np.asarray(eta, dtype=float)
        out = np.empty_like(eta)
        flat = out.ravel()
        for j, ev in enumerate(eta.ravel()):
            flat[j] = self.cgf_derivs(float(ev))[0]
        return out, True

    def fpp_field(self, eta):
        eta = np.asarray(eta, dtype=float)
        out = np.empty_like(eta)
        flat = out.ravel()
        for j, ev in enumerate(eta.ravel()):
            flat[j] = self.cgf_derivs(float(ev))[1]
        return out, True

    def sample(self, rng, size):
        # inverse CDF of the piecewise linear density
        y, rho = self._y, self._rho
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(y))])
        cdf /= cdf[-1]
        u = rng.random(size)
        return np.interp(u, cdf, y)

    def to_dict(self):
        return {"kind": "tabulated", "rows": int(self._y.size)}


def make_prior(spec: dict) -> Prior:
    """Build a prior from its config mapping (see the CLI config schema)."""
    kind = spec.get("kind")
    if kind == "gaussian":
        return GaussianPrior()
    if kind == "gamma_skew":
        return GammaPrior(float(spec["eps"]))
    if kind == "tabulated":
        return TabulatedPrior.from_csv(spec["csv"])
    raise ValueError(f"unknown prior kind: {kind!r}")


def legendre_conjugate_oracle(f_eval, y: float, eta_domain=(-math.inf, math.inf)) -> float:
    """Numerically compute sup_eta [eta*y - f(eta)] by safeguarded 1-D search.

    Independent oracle against analytic rate functions: it sees f only
    through point evaluations.  Raises :class:`ConjugateUnboundedError` when
    the supremum diverges (y outside the closure of the range of f').
    """
    lo, hi = eta_domain

    def g(eta: float) -> float:
        try:
            val = f_eval(eta) - eta * y
        except (PriorDomainError, ValueError, OverflowError):
            return math.inf
        return val if math.isfinite(val) else math.inf

    eta0 = 0.0
    if not (lo < eta0 < hi):
        if math.isfinite(lo) and math.isfinite(hi):
            eta0 = 0.5 * (lo + hi)
        elif math.isfinite(lo):
            eta0 = lo + 1.0
        else:
            eta0 = hi - 1.0

    def ladder(towards_hi: bool) -> list[float]:
        pts = []
        bound = hi if towards_hi else lo
        if math.isinf(bound):
            for j in range(-3, 61):
                pts.append(eta0 + (2.0**j if towards_hi else -(2.0**j)))
        else:
            gap = abs(bound - eta0)
            for j in range(51):
                pts.append(bound - (bound - eta0) * (0.5**j) * 0.5)
            pts = [p for p in pts if abs(p - eta0) > 1e-15 * max(1.0, gap)]
        return pts

    up = ladder(True)
    down = ladder(False)
    cands = sorted(set(down + [eta0] + up))
    vals = [g(p) for p in cands]
    jmin = int(np.argmin(vals))
    if not math.isfinite(vals[jmin]):
        raise ConjugateUnboundedError(f"conjugate evaluation failed everywhere for y = {y}")
    at_low_end = jmin == 0 and math.isinf(lo)
    at_high_end = jmin == len(cands) - 1 and math.isinf(hi)
    if at_low_end or at_high_end:
        raise ConjugateUnboundedError(
            f"sup over eta of [eta*y - f(eta)] appears unbounded for y = {y}"
        )
    a = cands[max(jmin - 1, 0)]
    b = cands[min(jmin + 1, len(cands) - 1)]
    res = minimize_scalar(g, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    best = min(vals[jmin], float(res.fun))
    return -best


def information(prior: Prior, grid: Grid, q) -> float:
    """I(q) = integral of i(q(x)) dx by midpoint quadrature; returns the
    +inf marker when any cell value exits the rate domain."""
    q = grid.as_field(q)
    s = prior.rate_field_sum(q)
    return math.inf if math.isinf(s) else grid.cell_area * s
