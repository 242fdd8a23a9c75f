# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled lane for the solver hot kernels (see py_kernels for contracts)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, log, log1p

cnp.import_array()

KIND_GAUSSIAN = 0
KIND_GAMMA = 1

COMPILED = True


def fprime(eta, int kind, double eps):
    cdef cnp.ndarray[double, ndim=1] e = np.ascontiguousarray(eta, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(e)
    cdef Py_ssize_t i, n = e.shape[0]
    cdef double d
    if kind == KIND_GAUSSIAN:
        for i in range(n):
            out[i] = e[i]
        return out.reshape(np.shape(eta)), True
    for i in range(n):
        d = 1.0 - eps * e[i]
        if d <= 0.0:
            return out.reshape(np.shape(eta)), False
        out[i] = e[i] / d
    return out.reshape(np.shape(eta)), True


def fpp(eta, int kind, double eps):
    cdef cnp.ndarray[double, ndim=1] e = np.ascontiguousarray(eta, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(e)
    cdef Py_ssize_t i, n = e.shape[0]
    cdef double d
    if kind == KIND_GAUSSIAN:
        for i in range(n):
            out[i] = 1.0
        return out.reshape(np.shape(eta)), True
    for i in range(n):
        d = 1.0 - eps * e[i]
        if d <= 0.0:
            return out.reshape(np.shape(eta)), False
        out[i] = 1.0 / (d * d)
    return out.reshape(np.shape(eta)), True


def rate_sum(q, int kind, double eps):
    cdef cnp.ndarray[double, ndim=1] x = np.ascontiguousarray(q, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double acc = 0.0, t
    if kind == KIND_GAUSSIAN:
        for i in range(n):
            acc += 0.5 * x[i] * x[i]
        return acc
    for i in range(n):
        t = eps * x[i]
        if t <= -1.0:
            return INFINITY
        acc += x[i] / eps - log1p(t) / (eps * eps)
    return acc


def constraint_stats(psi, double beta, double gamma, int kind, double eps):
    cdef cnp.ndarray[double, ndim=1] p = np.ascontiguousarray(psi, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double eta, d, q, v, vp
    cdef double s_q = 0.0, s_qpsi = 0.0, s_v = 0.0, s_vpsi = 0.0, s_vpsi2 = 0.0
    if kind == KIND_GAUSSIAN:
        for i in range(n):
            eta = -beta * p[i] - gamma
            s_q += eta
            s_qpsi += eta * p[i]
            s_v += 1.0
            s_vpsi += p[i]
            s_vpsi2 += p[i] * p[i]
        return True, s_q, s_qpsi, s_v, s_vpsi, s_vpsi2
    for i in range(n):
        eta = -beta * p[i] - gamma
        d = 1.0 - eps * eta
        if d <= 0.0:
            return False, 0.0, 0.0, 0.0, 0.0, 0.0
        q = eta / d
        v = 1.0 / (d * d)
        vp = v * p[i]
        s_q += q
        s_qpsi += q * p[i]
        s_v += v
        s_vpsi += vp
        s_vpsi2 += vp * p[i]
    return True, s_q, s_qpsi, s_v, s_vpsi, s_vpsi2
