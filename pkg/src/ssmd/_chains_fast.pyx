# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled chain simulation kernel.

Scalar per-chain implementation of the same contract as
``_chains_py.run_chains``; see that module for the table layout and the
uniform-consumption contract.  Floating-point operations are ordered to
match the numpy backend exactly (sequential cumulative sums over short
rows), so the two backends agree draw-for-draw.
"""

import numpy as np


cdef inline Py_ssize_t _categorical(const double* row, int S, double u) nogil:
    cdef double c = 0.0
    cdef Py_ssize_t idx = 0
    cdef int s
    for s in range(S):
        c += row[s]
        if c <= u:
            idx += 1
    if idx > S - 1:
        idx = S - 1
    return idx


def run_chains(
    const double[::1] draft_flat,
    const long long[::1] draft_off,
    const double[::1] target_flat,
    const long long[::1] target_off,
    int S,
    int D,
    const double[:, ::1] uniforms,
):
    cdef Py_ssize_t n = uniforms.shape[0]
    slots_np = np.empty((n, D), dtype=np.int64)
    outer_np = np.zeros(n, dtype=np.int64)
    rejects_np = np.zeros(n, dtype=np.int64)
    drafted_np = np.empty(D, dtype=np.int64)
    resid_np = np.empty(S, dtype=np.float64)

    cdef long long[:, ::1] slots = slots_np
    cdef long long[::1] outer = outer_np
    cdef long long[::1] rejects = rejects_np
    cdef long long[::1] drafted = drafted_np
    cdef double[::1] resid = resid_np

    cdef Py_ssize_t k, ptr
    cdef int d, l, s, anchor
    cdef long long code, anchor_code, pbase, tbase
    cdef long long tok, committed
    cdef double u, p, t, ratio, mass
    cdef bint rejected

    with nogil:
        for k in range(n):
            ptr = 0
            anchor = 0
            anchor_code = 0
            code = 0
            d = 0
            while d < D:
                if anchor == d:
                    outer[k] += 1
                    for l in range(d, D):
                        pbase = draft_off[anchor] + (anchor_code * (D - anchor) + (l - anchor)) * S
                        u = uniforms[k, ptr]; ptr += 1
                        drafted[l] = _categorical(&draft_flat[pbase], S, u)

                pbase = draft_off[anchor] + (anchor_code * (D - anchor) + (d - anchor)) * S
                if anchor == d:
                    tbase = pbase
                else:
                    tbase = target_off[d] + code * S
                tok = drafted[d]
                p = draft_flat[pbase + tok]
                t = target_flat[tbase + tok] if anchor != d else draft_flat[tbase + tok]
                ratio = t / p
                if ratio > 1.0:
                    ratio = 1.0
                u = uniforms[k, ptr]; ptr += 1
                rejected = not (u < ratio)
                if rejected:
                    mass = 0.0
                    for s in range(S):
                        t = target_flat[tbase + s] if anchor != d else draft_flat[tbase + s]
                        p = draft_flat[pbase + s]
                        resid[s] = t - p if t > p else 0.0
                        mass += resid[s]
                    for s in range(S):
                        resid[s] = resid[s] / mass
                    u = uniforms[k, ptr]; ptr += 1
                    committed = _categorical(&resid[0], S, u)
                    rejects[k] += 1
                else:
                    committed = tok
                slots[k, d] = committed
                code = code * S + committed
                if rejected:
                    anchor = d + 1
                    anchor_code = code
                d += 1
    return slots_np, outer_np, rejects_np
