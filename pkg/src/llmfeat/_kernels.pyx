# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled counting kernels. Mirrors ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def extension_tally(rows, codes, attrs, Py_ssize_t max_card, target, Py_ssize_t n_classes):
    cdef cnp.int64_t[::1] r = np.ascontiguousarray(rows, dtype=np.int64)
    cdef cnp.int32_t[:, ::1] c = np.ascontiguousarray(codes, dtype=np.int32)
    cdef cnp.int64_t[::1] a = np.ascontiguousarray(attrs, dtype=np.int64)
    cdef cnp.int32_t[::1] t = np.ascontiguousarray(target, dtype=np.int32)
    out_arr = np.zeros((a.shape[0], max_card, n_classes), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, row
    cdef int v, cls
    for i in range(r.shape[0]):
        row = r[i]
        cls = t[row]
        if cls < 0:
            continue
        for j in range(a.shape[0]):
            v = c[row, a[j]]
            if v >= 0:
                out[j, v, cls] += 1
    return out_arr


def bootstrap_counts(feature, target, idx, Py_ssize_t n_rows_cat, Py_ssize_t n_cols_cat):
    cdef cnp.int64_t[::1] f = np.ascontiguousarray(feature, dtype=np.int64)
    cdef cnp.int64_t[::1] t = np.ascontiguousarray(target, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    out_arr = np.zeros((ix.shape[0], n_rows_cat, n_cols_cat), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, k
    for b in range(ix.shape[0]):
        for i in range(ix.shape[1]):
            k = ix[b, i]
            out[b, f[k], t[k]] += 1
    return out_arr


def chi2_batch(counts):
    cdef cnp.int64_t[:, :, ::1] ct = np.ascontiguousarray(counts, dtype=np.int64)
    cdef Py_ssize_t reps = ct.shape[0], nr = ct.shape[1], nc = ct.shape[2]
    chi2_arr = np.zeros(reps, dtype=np.float64)
    dof_arr = np.zeros(reps, dtype=np.int64)
    cdef double[::1] chi2 = chi2_arr
    cdef cnp.int64_t[::1] dof = dof_arr
    cdef double[::1] rs = np.zeros(nr, dtype=np.float64)
    cdef double[::1] cs = np.zeros(nc, dtype=np.float64)
    cdef Py_ssize_t b, i, j, r_eff, c_eff
    cdef double n, e, d, acc
    for b in range(reps):
        n = 0
        for i in range(nr):
            rs[i] = 0
        for j in range(nc):
            cs[j] = 0
        for i in range(nr):
            for j in range(nc):
                rs[i] += ct[b, i, j]
                cs[j] += ct[b, i, j]
        r_eff = 0
        c_eff = 0
        for i in range(nr):
            n += rs[i]
            if rs[i] > 0:
                r_eff += 1
        for j in range(nc):
            if cs[j] > 0:
                c_eff += 1
        if r_eff < 2 or c_eff < 2:
            continue
        acc = 0
        for i in range(nr):
            if rs[i] == 0:
                continue
            for j in range(nc):
                if cs[j] == 0:
                    continue
                e = rs[i] * cs[j] / n
                d = ct[b, i, j] - e
                acc += d * d / e
        chi2[b] = acc
        dof[b] = (r_eff - 1) * (c_eff - 1)
    return chi2_arr, dof_arr
