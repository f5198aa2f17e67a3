# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics are defined by ``_pykernels``."""
import numpy as np

from scipy.linalg.cython_blas cimport daxpy


def accumulate_bispectrum(const double complex[:, ::1] F,
                          const double complex[:, ::1] G,
                          const double complex[:, ::1] H,
                          double complex[:, ::1] out,
                          double weight=1.0):
    cdef Py_ssize_t nseg = F.shape[0]
    cdef Py_ssize_t n = F.shape[1]
    cdef Py_ssize_t nb = out.shape[1]
    if G.shape[0] != nseg or H.shape[0] != nseg:
        raise ValueError("segment count mismatch")
    if G.shape[1] != n or H.shape[1] != n or out.shape[0] != n or nb > n:
        raise ValueError("spectrum length mismatch")
    # frequency-major real/imaginary planes so the segment sum runs over
    # contiguous memory and accumulates in registers
    cdef double[:, ::1] Fr = np.ascontiguousarray(np.asarray(F).real.T)
    cdef double[:, ::1] Fi = np.ascontiguousarray(np.asarray(F).imag.T)
    cdef double[:, ::1] Gr = np.ascontiguousarray(np.asarray(G).real.T)
    cdef double[:, ::1] Gi = np.ascontiguousarray(np.asarray(G).imag.T)
    cdef double[:, ::1] Hr = np.ascontiguousarray(np.asarray(H).real.T)
    cdef double[:, ::1] Hi = np.ascontiguousarray(np.asarray(H).imag.T)
    cdef Py_ssize_t s, a, b, idx
    cdef double sr, si, pr, pi_, fr, fi, gr, gi
    cdef const double *fr_p
    cdef const double *fi_p
    cdef const double *gr_p
    cdef const double *gi_p
    cdef const double *hr_p
    cdef const double *hi_p
    with nogil:
        for a in range(n):
            gr_p = &Gr[a, 0]
            gi_p = &Gi[a, 0]
            for b in range(nb):
                idx = a + b
                if idx >= n:
                    idx = idx - n
                fr_p = &Fr[idx, 0]
                fi_p = &Fi[idx, 0]
                hr_p = &Hr[b, 0]
                hi_p = &Hi[b, 0]
                sr = 0.0
                si = 0.0
                for s in range(nseg):
                    # conj(F) * G, then times H
                    fr = fr_p[s]
                    fi = fi_p[s]
                    gr = gr_p[s]
                    gi = gi_p[s]
                    pr = fr * gr + fi * gi
                    pi_ = fr * gi - fi * gr
                    sr = sr + pr * hr_p[s] - pi_ * hi_p[s]
                    si = si + pr * hi_p[s] + pi_ * hr_p[s]
                out[a, b] = out[a, b] + weight * (sr + 1j * si)
    return out


def causal_convolve(const double[::1] x, const double[::1] kernel):
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t K = kernel.shape[0]
    cdef Py_ssize_t t
    cdef int m, one = 1
    cdef double xv
    y_arr = np.zeros(T, dtype=np.float64)
    if T == 0 or K == 0:
        return y_arr
    cdef double[::1] y = y_arr
    # scatter each nonzero input into the output with a BLAS axpy; labelled
    # sign series are mostly zeros, so this beats a dense convolution
    cdef double *kp = <double *> &kernel[0]
    with nogil:
        for t in range(T):
            xv = x[t]
            if xv == 0.0:
                continue
            m = <int> (K if T - t > K else T - t)
            daxpy(&m, &xv, kp, &one, &y[t], &one)
    return y_arr
