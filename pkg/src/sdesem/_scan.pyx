# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled affine scan kernel.

State recurrence x_{i+1} = w_i + Phi x_i stepped m = thin*(rows(out)-1)
times, keeping every thin-th state. The per-step injection w_i (drift
constant plus diffusion shock) is precomputed by the caller so both
backends consume identical random draws.

Keep the accumulation order (ascending j, then add w) in sync with the
NumPy reference in _scan_py.py; backend parity tests rely on it.
"""

import numpy as np


def affine_scan(const double[:, ::1] phi, const double[:, ::1] w,
                const double[::1] x0, Py_ssize_t thin, double blow,
                double[:, ::1] out):
    """Run the scan; return -1 on success or the 0-based index of the
    first step whose state is non-finite or exceeds `blow` in magnitude."""
    cdef Py_ssize_t d = x0.shape[0]
    cdef Py_ssize_t n_keep = out.shape[0]
    cdef Py_ssize_t step = 0
    cdef Py_ssize_t i, j, k, r
    cdef double acc, v
    cdef double[::1] x = np.empty(d)
    cdef double[::1] y = np.empty(d)

    for j in range(d):
        x[j] = x0[j]
        out[0, j] = x0[j]
    for k in range(1, n_keep):
        for i in range(thin):
            for r in range(d):
                acc = 0.0
                for j in range(d):
                    acc = acc + phi[r, j] * x[j]
                y[r] = w[step, r] + acc
            for r in range(d):
                v = y[r]
                if not (v <= blow and v >= -blow):
                    return step
                x[r] = v
            step += 1
        for r in range(d):
            out[k, r] = x[r]
    return -1
