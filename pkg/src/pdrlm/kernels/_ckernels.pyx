# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core: fused LSTM gate math and vocab-wide softmax /
cross-entropy. Mirrors pykernels.py contract for contract."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "compiled"


cdef void _mm_nn(double* a, double* b, double* c, int m, int n, int k,
                 double beta) nogil:
    # row-major C(m,n) = A(m,k) @ B(k,n) + beta*C
    cdef double alpha = 1.0
    dgemm("N", "N", &n, &m, &k, &alpha, b, &n, a, &k, &beta, c, &n)


cdef void _mm_nt(double* a, double* b, double* c, int m, int n, int k,
                 double beta) nogil:
    # row-major C(m,n) = A(m,k) @ B(n,k)^T + beta*C
    cdef double alpha = 1.0
    dgemm("T", "N", &n, &m, &k, &alpha, b, &k, a, &k, &beta, c, &n)


cdef void _mm_tn(double* a, double* b, double* c, int m, int n, int k,
                 double beta) nogil:
    # row-major C(m,n) = A(k,m)^T @ B(k,n) + beta*C
    cdef double alpha = 1.0
    dgemm("N", "T", &n, &m, &k, &alpha, b, &n, a, &m, &beta, c, &n)


cdef inline double _sig(double x) nogil:
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


def sigmoid(x):
    shape = np.shape(x)
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t k, size = flat.shape[0]
    for k in range(size):
        out[k] = _sig(flat[k])
    return out.reshape(shape)


def softmax_rows(cnp.ndarray[double, ndim=2] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((m, n))
    cdef Py_ssize_t r, c
    cdef double mx, s, v
    for r in range(m):
        mx = x[r, 0]
        for c in range(1, n):
            if x[r, c] > mx:
                mx = x[r, c]
        s = 0.0
        for c in range(n):
            v = exp(x[r, c] - mx)
            out[r, c] = v
            s += v
        for c in range(n):
            out[r, c] /= s
    return out


def softmax_rows_backward(cnp.ndarray[double, ndim=2] probs,
                          cnp.ndarray[double, ndim=2] gout):
    cdef Py_ssize_t m = probs.shape[0], n = probs.shape[1]
    cdef cnp.ndarray[double, ndim=2] gin = np.empty((m, n))
    cdef Py_ssize_t r, c
    cdef double dot
    for r in range(m):
        dot = 0.0
        for c in range(n):
            dot += probs[r, c] * gout[r, c]
        for c in range(n):
            gin[r, c] = probs[r, c] * (gout[r, c] - dot)
    return gin


def cross_entropy_rows(cnp.ndarray[double, ndim=2] logits,
                       cnp.ndarray[long, ndim=1] targets):
    cdef Py_ssize_t m = logits.shape[0], n = logits.shape[1]
    cdef cnp.ndarray[double, ndim=1] nll = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] lse = np.empty(m)
    cdef Py_ssize_t r, c
    cdef double mx, s
    for r in range(m):
        mx = logits[r, 0]
        for c in range(1, n):
            if logits[r, c] > mx:
                mx = logits[r, c]
        s = 0.0
        for c in range(n):
            s += exp(logits[r, c] - mx)
        lse[r] = mx + log(s)
        nll[r] = lse[r] - logits[r, targets[r]]
    return nll, lse


def cross_entropy_rows_backward(cnp.ndarray[double, ndim=2] logits,
                                cnp.ndarray[long, ndim=1] targets,
                                cnp.ndarray[double, ndim=1] lse,
                                double scale):
    cdef Py_ssize_t m = logits.shape[0], n = logits.shape[1]
    cdef cnp.ndarray[double, ndim=2] g = np.empty((m, n))
    cdef Py_ssize_t r, c
    for r in range(m):
        for c in range(n):
            g[r, c] = exp(logits[r, c] - lse[r]) * scale
        g[r, targets[r]] -= scale
    return g


def lstm_gates(cnp.ndarray[double, ndim=2] preact,
               cnp.ndarray[double, ndim=2] c_prev):
    cdef Py_ssize_t b = c_prev.shape[0], n = c_prev.shape[1]
    cdef cnp.ndarray[double, ndim=2] h = np.empty((b, n))
    cdef cnp.ndarray[double, ndim=2] c = np.empty((b, n))
    cdef cnp.ndarray[double, ndim=2] gates = np.empty((b, 4 * n))
    cdef cnp.ndarray[double, ndim=2] tanh_c = np.empty((b, n))
    cdef Py_ssize_t r, k
    cdef double gi, gf, gg, go, cv
    for r in range(b):
        for k in range(n):
            gi = _sig(preact[r, k])
            gf = _sig(preact[r, n + k])
            gg = tanh(preact[r, 2 * n + k])
            go = _sig(preact[r, 3 * n + k])
            gates[r, k] = gi
            gates[r, n + k] = gf
            gates[r, 2 * n + k] = gg
            gates[r, 3 * n + k] = go
            cv = gf * c_prev[r, k] + gi * gg
            c[r, k] = cv
            cv = tanh(cv)
            tanh_c[r, k] = cv
            h[r, k] = go * cv
    return h, c, gates, tanh_c


def lstm_layer_forward(cnp.ndarray[double, ndim=2] xw,
                       cnp.ndarray[double, ndim=2] wr,
                       cnp.ndarray[double, ndim=1] b,
                       cnp.ndarray[double, ndim=2] h0,
                       cnp.ndarray[double, ndim=2] c0,
                       Py_ssize_t batch):
    """One LSTM layer over a whole window; the entire time loop runs in
    C with BLAS for the recurrent matmul. Mirrors the python twin."""
    cdef Py_ssize_t total = xw.shape[0], four_n = xw.shape[1]
    cdef Py_ssize_t n = four_n // 4, steps = total // batch
    cdef cnp.ndarray[double, ndim=2] h_cat = np.empty((total, n))
    cdef cnp.ndarray[double, ndim=2] c_cat = np.empty((total, n))
    cdef cnp.ndarray[double, ndim=2] gates = np.empty((total, four_n))
    cdef cnp.ndarray[double, ndim=2] tanh_c = np.empty((total, n))
    cdef cnp.ndarray[double, ndim=2] pre = np.empty((batch, four_n))
    cdef cnp.ndarray[double, ndim=2] h_fin = h0.copy()
    cdef cnp.ndarray[double, ndim=2] c_fin = c0.copy()
    cdef Py_ssize_t t, r, j, lo
    cdef double gi, gf, gg, go, cv
    cdef double* xw_p = &xw[0, 0]
    cdef double* pre_p = &pre[0, 0]
    cdef double* wr_p = &wr[0, 0]
    with nogil:
        for t in range(steps):
            lo = t * batch
            # pre = xw[lo:hi] + b, then += h_prev @ wr
            for r in range(batch):
                for j in range(four_n):
                    pre[r, j] = xw_p[(lo + r) * four_n + j] + b[j]
            _mm_nn(&h_fin[0, 0], wr_p, pre_p,
                   <int>batch, <int>four_n, <int>n, 1.0)
            for r in range(batch):
                for j in range(n):
                    gi = _sig(pre[r, j])
                    gf = _sig(pre[r, n + j])
                    gg = tanh(pre[r, 2 * n + j])
                    go = _sig(pre[r, 3 * n + j])
                    gates[lo + r, j] = gi
                    gates[lo + r, n + j] = gf
                    gates[lo + r, 2 * n + j] = gg
                    gates[lo + r, 3 * n + j] = go
                    cv = gf * c_fin[r, j] + gi * gg
                    c_cat[lo + r, j] = cv
                    c_fin[r, j] = cv
                    cv = tanh(cv)
                    tanh_c[lo + r, j] = cv
                    h_cat[lo + r, j] = go * cv
                    h_fin[r, j] = go * cv
    return h_cat, c_cat, gates, tanh_c, h_fin, c_fin


def lstm_layer_backward(cnp.ndarray[double, ndim=2] g_hcat,
                        cnp.ndarray[double, ndim=2] gates,
                        cnp.ndarray[double, ndim=2] tanh_c,
                        cnp.ndarray[double, ndim=2] c_cat,
                        cnp.ndarray[double, ndim=2] h_cat,
                        cnp.ndarray[double, ndim=2] h0,
                        cnp.ndarray[double, ndim=2] c0,
                        cnp.ndarray[double, ndim=2] wr,
                        Py_ssize_t batch):
    cdef Py_ssize_t total = h_cat.shape[0], n = h_cat.shape[1]
    cdef Py_ssize_t four_n = 4 * n, steps = total // batch
    cdef cnp.ndarray[double, ndim=2] gxw = np.empty((total, four_n))
    cdef cnp.ndarray[double, ndim=2] gwr = np.zeros((n, four_n))
    cdef cnp.ndarray[double, ndim=1] gb = np.zeros(four_n)
    cdef cnp.ndarray[double, ndim=2] gh = np.zeros((batch, n))
    cdef cnp.ndarray[double, ndim=2] gc = np.zeros((batch, n))
    cdef Py_ssize_t t, r, j, lo
    cdef double gi, gf, gg, go, tc, dc, ghv, gpv
    cdef double* cprev_p
    cdef double* hprev_p
    with nogil:
        for t in range(steps - 1, -1, -1):
            lo = t * batch
            cprev_p = &c_cat[lo - batch, 0] if t else &c0[0, 0]
            hprev_p = &h_cat[lo - batch, 0] if t else &h0[0, 0]
            for r in range(batch):
                for j in range(n):
                    gi = gates[lo + r, j]
                    gf = gates[lo + r, n + j]
                    gg = gates[lo + r, 2 * n + j]
                    go = gates[lo + r, 3 * n + j]
                    tc = tanh_c[lo + r, j]
                    ghv = gh[r, j] + g_hcat[lo + r, j]
                    dc = ghv * go * (1.0 - tc * tc) + gc[r, j]
                    gxw[lo + r, j] = dc * gg * gi * (1.0 - gi)
                    gxw[lo + r, n + j] = dc * cprev_p[r * n + j] * gf * (1.0 - gf)
                    gxw[lo + r, 2 * n + j] = dc * gi * (1.0 - gg * gg)
                    gxw[lo + r, 3 * n + j] = ghv * tc * go * (1.0 - go)
                    gc[r, j] = dc * gf
            for j in range(four_n):
                for r in range(batch):
                    gb[j] += gxw[lo + r, j]
            # gwr += h_prev^T @ gpre ; gh = gpre @ wr^T
            _mm_tn(hprev_p, &gxw[lo, 0], &gwr[0, 0],
                   <int>n, <int>four_n, <int>batch, 1.0)
            _mm_nt(&gxw[lo, 0], &wr[0, 0], &gh[0, 0],
                   <int>batch, <int>n, <int>four_n, 0.0)
    return gxw, gwr, gb, gh, gc


def lstm_gates_backward(cnp.ndarray[double, ndim=2] gates,
                        cnp.ndarray[double, ndim=2] tanh_c,
                        cnp.ndarray[double, ndim=2] c_prev,
                        cnp.ndarray[double, ndim=2] gh,
                        gc):
    cdef Py_ssize_t b = c_prev.shape[0], n = c_prev.shape[1]
    cdef cnp.ndarray[double, ndim=2] gpre = np.empty((b, 4 * n))
    cdef cnp.ndarray[double, ndim=2] gc_prev = np.empty((b, n))
    cdef cnp.ndarray[double, ndim=2] gc_arr
    cdef bint have_gc = gc is not None
    if have_gc:
        gc_arr = gc
    else:
        gc_arr = gpre  # unused; keeps the memoryview bound
    cdef Py_ssize_t r, k
    cdef double gi, gf, gg, go, tc, dc
    for r in range(b):
        for k in range(n):
            gi = gates[r, k]
            gf = gates[r, n + k]
            gg = gates[r, 2 * n + k]
            go = gates[r, 3 * n + k]
            tc = tanh_c[r, k]
            dc = gh[r, k] * go * (1.0 - tc * tc)
            if have_gc:
                dc += gc_arr[r, k]
            gpre[r, k] = dc * gg * gi * (1.0 - gi)
            gpre[r, n + k] = dc * c_prev[r, k] * gf * (1.0 - gf)
            gpre[r, 2 * n + k] = dc * gi * (1.0 - gg * gg)
            gpre[r, 3 * n + k] = gh[r, k] * tc * go * (1.0 - go)
            gc_prev[r, k] = dc * gf
    return gpre, gc_prev
