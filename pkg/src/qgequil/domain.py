"""Spectral discretization of the periodic channel and the Green operator.

The domain is a channel, periodic in x1 with period ``period_length`` and
walled at x2 = +/- ``channel_width``/2.  Scalar fields live on cell midpoints
of a uniform n1 x n2 partition and are represented as real numpy arrays of
shape ``(n1, n2)``.  The Green operator inverts -Laplacian + 1/r^2 with
psi = 0 on the walls, diagonally in the (Fourier x Dirichlet-sine) basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dst, idst, irfft, rfft


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Geometry and resolution of the channel discretization.

    ``n1 = 1`` selects the zonal fast path (fields constant in x1); otherwise
    both resolutions must be powers of two.  ``deformation_radius`` may be
    ``math.inf``, in which case 1/r^2 is exactly zero (pure Euler case).
    """

    period_length: float = 1.0
    channel_width: float = 1.0
    n1: int = 64
    n2: int = 64
    deformation_radius: float = math.inf

    def __post_init__(self) -> None:
        if not (self.period_length > 0 and math.isfinite(self.period_length)):
            raise ValueError(f"period_length must be positive, got {self.period_length}")
        if not (self.channel_width > 0 and math.isfinite(self.channel_width)):
            raise ValueError(f"channel_width must be positive, got {self.channel_width}")
        if not _is_power_of_two(self.n1):
            raise ValueError(f"n1 must be a power of two (1 allowed for zonal grids), got {self.n1}")
        if not (_is_power_of_two(self.n2) and self.n2 >= 2):
            raise ValueError(f"n2 must be a power of two >= 2, got {self.n2}")
        if not self.deformation_radius > 0:
            raise ValueError(
                f"deformation_radius must be positive or inf, got {self.deformation_radius}"
            )

    @property
    def inv_rsq(self) -> float:
        r = self.deformation_radius
        return 0.0 if math.isinf(r) else 1.0 / (r * r)

    def to_dict(self) -> dict:
        r = self.deformation_radius
        return {
            "period_length": self.period_length,
            "channel_width": self.channel_width,
            "n1": self.n1,
            "n2": self.n2,
            "deformation_radius": "inf" if math.isinf(r) else r,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        r = d.get("deformation_radius", "inf")
        if isinstance(r, str):
            r = math.inf if r in ("inf", "Infinity") else float(r)
        return cls(
            period_length=float(d.get("period_length", 1.0)),
            channel_width=float(d.get("channel_width", 1.0)),
            n1=int(d.get("n1", 64)),
            n2=int(d.get("n2", 64)),
            deformation_radius=float(r),
        )


class Grid:
    """Immutable spectral grid: midpoint coordinates, quadrature weight and
    per-mode Green multipliers 1/((2 pi k / l1)^2 + (m pi / l2)^2 + 1/r^2).

    Safe to share across workers; operator applications allocate their own
    scratch arrays.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        l1, l2 = spec.period_length, spec.channel_width
        n1, n2 = spec.n1, spec.n2
        self.n1, self.n2 = n1, n2
        self.cell_area = l1 * l2 / (n1 * n2)
        self.area = l1 * l2
        self.x1 = (np.arange(n1) + 0.5) * (l1 / n1) - l1 / 2.0
        self.x2 = (np.arange(n2) + 0.5) * (l2 / n2) - l2 / 2.0
        # wavenumbers: k = 0..n1/2 (rfft layout), Dirichlet mode m = 1..n2
        k = np.arange(n1 // 2 + 1)
        m = np.arange(1, n2 + 1)
        kx2 = (2.0 * np.pi * k / l1) ** 2
        my2 = (np.pi * m / l2) ** 2
        self.green_multipliers = 1.0 / (kx2[:, None] + my2[None, :] + spec.inv_rsq)
        self.lambda_1 = (np.pi / l2) ** 2 + spec.inv_rsq
        self._d2_matrix = None

    # -- field helpers -------------------------------------------------

    def as_field(self, values) -> np.ndarray:
        """Coerce to the canonical (n1, n2) float layout, validating size."""
        arr = np.asarray(values, dtype=float)
        if arr.shape == (self.n1, self.n2):
            return arr
        if arr.ndim == 1 and arr.size == self.n1 * self.n2:
            return arr.reshape(self.n1, self.n2)
        raise ValueError(
            f"field shape {arr.shape} does not match grid {self.n1}x{self.n2}"
        )

    def constant(self, c: float) -> np.ndarray:
        return np.full((self.n1, self.n2), float(c))

    def zonal(self, profile) -> np.ndarray:
        """Broadcast an x2 profile of length n2 to a full field."""
        p = np.asarray(profile, dtype=float)
        if p.shape != (self.n2,):
            raise ValueError(f"profile length {p.shape} != n2 = {self.n2}")
        return np.broadcast_to(p, (self.n1, self.n2)).copy()

    def integrate(self, f) -> float:
        return self.cell_area * float(self.as_field(f).sum())

    # -- spectral machinery --------------------------------------------

    def _sine_analysis(self, f: np.ndarray) -> np.ndarray:
        return dst(f, type=2, axis=1, norm="ortho")

    def _sine_synthesis(self, c: np.ndarray) -> np.ndarray:
        return idst(c, type=2, axis=1, norm="ortho")

    def d2_matrix(self) -> np.ndarray:
        """Dense x2-differentiation matrix acting on midpoint samples.

        Exact for every resolved sine mode: the derivative of mode m is the
        cosine of the same wavenumber, evaluated back on the midpoints.
        """
        if self._d2_matrix is None:
            n2, l2 = self.n2, self.spec.channel_width
            arg = np.pi * np.arange(1, n2 + 1)[None, :] * (self.x2[:, None] + l2 / 2) / l2
            sines = np.sin(arg)      # (j, m)
            cosines = np.cos(arg)    # (j, m)
            synth = self._sine_synthesis(np.eye(n2))  # row m -> samples of basis fn m
            # basis function m is w_m * sin_m; recover w_m at the best-conditioned sample
            j0 = np.argmax(np.abs(sines), axis=0)
            w = synth[np.arange(n2), j0] / sines[j0, np.arange(n2)]
            analysis = self._sine_analysis(np.eye(n2))  # column j -> coeffs of e_j
            scale = w * np.pi * np.arange(1, n2 + 1) / l2
            self._d2_matrix = (cosines * scale[None, :]) @ analysis.T
        return self._d2_matrix

    def diff_x1(self, f) -> np.ndarray:
        """Spectral x1 derivative (zero for zonal grids)."""
        f = self.as_field(f)
        if self.n1 == 1:
            return np.zeros_like(f)
        fh = rfft(f, axis=0)
        k = 2.0 * np.pi * np.arange(self.n1 // 2 + 1) / self.spec.period_length
        fh *= 1j * k[:, None]
        if self.n1 % 2 == 0:
            fh[-1, :] = 0.0  # Nyquist derivative is not representable
        return irfft(fh, n=self.n1, axis=0)

    def diff_x2(self, f) -> np.ndarray:
        f = self.as_field(f)
        return f @ self.d2_matrix().T


def build_grid(spec: GridSpec) -> Grid:
    """Construct the spectral grid for a validated spec."""
    return Grid(spec)


def apply_green(grid: Grid, z) -> np.ndarray:
    """Solve (-Laplacian + 1/r^2) psi = z with psi = 0 on the walls and
    periodicity in x1, returning psi on the same grid."""
    z = grid.as_field(z)
    a = grid._sine_analysis(z)
    if grid.n1 == 1:
        a = a * grid.green_multipliers[0][None, :]
    else:
        ah = rfft(a, axis=0)
        ah *= grid.green_multipliers
        a = irfft(ah, n=grid.n1, axis=0)
    return grid._sine_synthesis(a)


def apply_inverse_green(grid: Grid, psi) -> np.ndarray:
    """Apply -Laplacian + 1/r^2 spectrally (inverse of :func:`apply_green`)."""
    psi = grid.as_field(psi)
    a = grid._sine_analysis(psi)
    if grid.n1 == 1:
        a = a / grid.green_multipliers[0][None, :]
    else:
        ah = rfft(a, axis=0)
        ah /= grid.green_multipliers
        a = irfft(ah, n=grid.n1, axis=0)
    return grid._sine_synthesis(a)


def inner_product(grid: Grid, a, b) -> float:
    """Midpoint-rule L2 inner product: cell_area * sum(a * b)."""
    a = grid.as_field(a)
    b = grid.as_field(b)
    return grid.cell_area * float((a * b).sum())


def norm(grid: Grid, a) -> float:
    return math.sqrt(max(inner_product(grid, a, a), 0.0))


def lambda_min(grid: Grid) -> float:
    """Smallest eigenvalue of -Laplacian + 1/r^2: (pi/l2)^2 + 1/r^2."""
    return grid.lambda_1


def green_matrix(grid: Grid) -> np.ndarray:
    """Dense N x N matrix of the Green operator on flattened fields.

    Intended for modest grids (dense eigensolves and test oracles).
    """
    n = grid.n1 * grid.n2
    out = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        out[:, j] = apply_green(grid, e.reshape(grid.n1, grid.n2)).ravel()
        e[j] = 0.0
    return 0.5 * (out + out.T)
