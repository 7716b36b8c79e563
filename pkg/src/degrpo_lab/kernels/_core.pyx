# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the rollout sampler and the clipped-surrogate accumulator."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef inline Py_ssize_t _inverse_cdf(const double[::1] cdf, Py_ssize_t start, Py_ssize_t size, double u) noexcept nogil:
    cdef Py_ssize_t v
    for v in range(size):
        if u < cdf[start + v]:
            return v
    return size - 1


def sample_tokens(const cnp.int64_t[::1] class_ids, const double[:, ::1] u, const double[::1] cdf,
                  const double[::1] logp, Py_ssize_t num_classes, Py_ssize_t answer_vocab,
                  Py_ssize_t scratch_vocab, Py_ssize_t t_short, Py_ssize_t t_think):
    cdef Py_ssize_t n = class_ids.shape[0]
    cdef Py_ssize_t scr_off = 2 * num_classes
    cdef Py_ssize_t ans_off = scr_off + num_classes * scratch_vocab
    mode_arr = np.empty(n, dtype=np.int64)
    tok_arr = np.full((n, t_think), -1, dtype=np.int64)
    lp_arr = np.zeros((n, t_think + 1), dtype=np.float64)
    cdef cnp.int64_t[::1] mode = mode_arr
    cdef cnp.int64_t[:, ::1] tokens = tok_arr
    cdef double[:, ::1] out_lp = lp_arr
    cdef Py_ssize_t i, j, k, m, length, s, a, start
    with nogil:
        for i in range(n):
            k = class_ids[i]
            m = 1 if u[i, 0] >= cdf[2 * k] else 0
            mode[i] = m
            out_lp[i, 0] = logp[2 * k + m]
            length = t_think if m == 1 else t_short
            start = scr_off + k * scratch_vocab
            for j in range(length - 1):
                s = _inverse_cdf(cdf, start, scratch_vocab, u[i, 1 + j])
                tokens[i, j] = answer_vocab + s
                out_lp[i, 1 + j] = logp[start + s]
            start = ans_off + (2 * k + m) * answer_vocab
            a = _inverse_cdf(cdf, start, answer_vocab, u[i, length])
            tokens[i, length - 1] = a
            out_lp[i, length] = logp[start + a]
    return mode_arr, tok_arr, lp_arr


def surrogate(const cnp.int64_t[::1] offsets, const cnp.int64_t[::1] fid, const double[::1] old_lp,
              const double[::1] adv, const double[::1] w_ctrl, const double[::1] w_resp,
              const double[::1] w_kl, const double[::1] lp, const double[::1] ref_lp,
              double epsilon, double beta, double scale, Py_ssize_t size):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    loss0_arr = np.zeros(n)
    resp_arr = np.zeros(n)
    kl_arr = np.zeros(n)
    coef_arr = np.zeros(size)
    cdef double[::1] loss0 = loss0_arr
    cdef double[::1] loss_resp = resp_arr
    cdef double[::1] klsum = kl_arr
    cdef double[::1] coef = coef_arr
    cdef Py_ssize_t i, j, f
    cdef long n_clipped = 0
    cdef double a, lq, ratio, unc, cr, cl, loss, dloss, log_rho, rho, k, w, acc_resp, acc_kl
    with nogil:
        for i in range(n):
            a = adv[i]
            acc_resp = 0.0
            acc_kl = 0.0
            for j in range(offsets[i], offsets[i + 1]):
                f = fid[j]
                lq = lp[f]
                ratio = exp(lq - old_lp[j])
                unc = ratio * a
                cr = ratio
                if cr < 1.0 - epsilon:
                    cr = 1.0 - epsilon
                if cr > 1.0 + epsilon:
                    cr = 1.0 + epsilon
                cl = cr * a
                if cl < unc:
                    loss = cl
                    dloss = 0.0
                    n_clipped += 1
                else:
                    loss = unc
                    dloss = unc
                log_rho = ref_lp[f] - lq
                rho = exp(log_rho)
                k = rho - log_rho - 1.0
                if k < 0.0:
                    k = 0.0
                if j == offsets[i]:
                    loss0[i] = loss
                    w = w_ctrl[i]
                else:
                    acc_resp = acc_resp + loss
                    w = w_resp[i]
                acc_kl = acc_kl + k
                coef[f] += scale * (w * dloss - beta * w_kl[i] * (1.0 - rho))
            loss_resp[i] = acc_resp
            klsum[i] = acc_kl
    return loss0_arr, resp_arr, kl_arr, coef_arr, int(n_clipped)
