"""Pure-numpy lane for the solver hot kernels.

These functions are the inner loops of the equilibrium solvers: pointwise
prior maps over fields and the fused reductions feeding the 2-D Newton solve
for the constraint multipliers.  A compiled Cython twin with the same
signatures lives in ``_kernels.pyx``; parity between the two lanes is tested.
"""

import numpy as np

KIND_GAUSSIAN = 0
KIND_GAMMA = 1

COMPILED = False


def fprime(eta, kind, eps):
    """Elementwise f'(eta).  Returns (values, ok); ok is False when any eta
    leaves the cumulant domain (gamma: eta < 1/eps), in which case values is
    unspecified."""
    eta = np.asarray(eta, dtype=float)
    if kind == KIND_GAUSSIAN:
        return eta.copy(), True
    d = 1.0 - eps * eta
    if not np.all(d > 0.0):
        return eta, False
    return eta / d, True


def fpp(eta, kind, eps):
    """Elementwise f''(eta) with the same domain contract as :func:`fprime`."""
    eta = np.asarray(eta, dtype=float)
    if kind == KIND_GAUSSIAN:
        return np.ones_like(eta), True
    d = 1.0 - eps * eta
    if not np.all(d > 0.0):
        return eta, False
    return 1.0 / (d * d), True


def rate_sum(q, kind, eps):
    """Sum of the rate function i over the cells of q; +inf if any value
    exits the rate domain (gamma: q > -1/eps)."""
    q = np.asarray(q, dtype=float)
    if kind == KIND_GAUSSIAN:
        return 0.5 * float((q * q).sum())
    t = eps * q
    if not np.all(t > -1.0):
        return np.inf
    return float((q / eps - np.log1p(t) / (eps * eps)).sum())


def constraint_stats(psi, beta, gamma, kind, eps):
    """Fused reductions at eta = -beta*psi - gamma.

    Returns (ok, S_q, S_qpsi, S_v, S_vpsi, S_vpsi2) where q = f'(eta) and
    v = f''(eta); the sums are unweighted (caller applies the cell area).
    ok is False when eta leaves the cumulant domain.
    """
    psi = np.asarray(psi, dtype=float)
    eta = -beta * psi - gamma
    if kind == KIND_GAUSSIAN:
        q = eta
        v = np.ones_like(eta)
    else:
        d = 1.0 - eps * eta
        if not np.all(d > 0.0):
            return False, 0.0, 0.0, 0.0, 0.0, 0.0
        q = eta / d
        v = 1.0 / (d * d)
    vpsi = v * psi
    return (
        True,
        float(q.sum()),
        float((q * psi).sum()),
        float(v.sum()),
        float(vpsi.sum()),
        float((vpsi * psi).sum()),
    )
