# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CBOW negative-sampling training loop.

Same contract as ``comparetab.kernels.pure.train_epoch``; see that module
for the semantics both backends share.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log1p

cnp.import_array()

cdef double LOGIT_CLIP = 60.0

BACKEND_NAME = "compiled"


cdef inline double _softplus(double x) nogil:
    # log(1 + e^x) without overflow
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


def train_epoch(
    cnp.float32_t[:, ::1] syn0,
    cnp.float32_t[:, ::1] syn1neg,
    cnp.int32_t[::1] tokens,
    cnp.int64_t[::1] offsets,
    cnp.int64_t[::1] session_order,
    cnp.int32_t[:, ::1] negatives,
    int window,
    double lr0,
    double lr_min,
    long long total_updates,
    long long done_before,
):
    cdef Py_ssize_t dim = syn0.shape[1]
    cdef int n_negative = negatives.shape[1]
    cdef Py_ssize_t n_sessions = session_order.shape[0]

    cdef cnp.float32_t[::1] h = np.empty(dim, dtype=np.float32)
    cdef double[::1] neu1e = np.empty(dim, dtype=np.float64)
    cdef cnp.float32_t[:, ::1] outbuf = np.empty((n_negative + 1, dim), dtype=np.float32)
    cdef cnp.int64_t[::1] cand = np.empty(n_negative + 1, dtype=np.int64)

    cdef double loss_sum = 0.0
    cdef long long trained = 0
    cdef long long processed = 0

    cdef Py_ssize_t si, s, start, end, n, pos, lo, hi, c, d, u, m, j
    cdef long long row
    cdef cnp.int64_t target, neg
    cdef double lr, acc, x, f, g, label
    cdef cnp.float32_t neu1e_f

    with nogil:
        for si in range(n_sessions):
            s = session_order[si]
            start = offsets[s]
            end = offsets[s + 1]
            n = end - start
            for pos in range(n):
                lr = lr0 * (1.0 - <double>(done_before + processed) / <double>total_updates)
                if lr < lr_min:
                    lr = lr_min
                row = processed
                processed += 1
                lo = pos - window
                if lo < 0:
                    lo = 0
                hi = pos + window + 1
                if hi > n:
                    hi = n
                if hi - lo <= 1:
                    continue
                target = tokens[start + pos]

                cand[0] = target
                m = 1
                for j in range(n_negative):
                    neg = negatives[row, j]
                    if neg != target:
                        cand[m] = neg
                        m += 1

                # context mean, float64 accumulation rounded to float32
                for d in range(dim):
                    acc = 0.0
                    for c in range(lo, hi):
                        if c != pos:
                            acc += <double>syn0[tokens[start + c], d]
                    h[d] = <cnp.float32_t>(acc / <double>(hi - lo - 1))

                # pre-update snapshot of the candidate output rows
                for c in range(m):
                    for d in range(dim):
                        outbuf[c, d] = syn1neg[cand[c], d]

                for d in range(dim):
                    neu1e[d] = 0.0

                for c in range(m):
                    acc = 0.0
                    for d in range(dim):
                        acc += <double>outbuf[c, d] * <double>h[d]
                    if acc > LOGIT_CLIP:
                        x = LOGIT_CLIP
                    elif acc < -LOGIT_CLIP:
                        x = -LOGIT_CLIP
                    else:
                        x = acc
                    f = 1.0 / (1.0 + exp(-x))
                    label = 1.0 if c == 0 else 0.0
                    g = lr * (label - f)
                    if c == 0:
                        loss_sum += _softplus(-x)
                    else:
                        loss_sum += _softplus(x)
                    for d in range(dim):
                        neu1e[d] += g * <double>outbuf[c, d]
                        syn1neg[cand[c], d] += <cnp.float32_t>(g * <double>h[d])
                trained += 1

                for c in range(lo, hi):
                    if c != pos:
                        u = tokens[start + c]
                        for d in range(dim):
                            syn0[u, d] += <cnp.float32_t>neu1e[d]

    return loss_sum, int(trained), int(processed)
