# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled slot-wise Z_q kernels.

Every function takes and returns contiguous ``uint64`` arrays whose entries
are already reduced modulo ``q``. Products go through a 128-bit intermediate,
so any ``q < 2^63`` is exact.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef unsigned long long u64

cdef extern from *:
    """
    typedef unsigned __int128 pcm_u128;
    static inline unsigned long long pcm_mulmod(unsigned long long a,
                                                unsigned long long b,
                                                unsigned long long q) {
        return (unsigned long long)(((pcm_u128)a * b) % q);
    }
    """
    u64 pcm_mulmod(u64 a, u64 b, u64 q) nogil


IMPLEMENTATION = "cython"


cdef inline u64 _addmod(u64 a, u64 b, u64 q) nogil:
    cdef u64 s = a + b
    if s >= q or s < a:
        s -= q
    return s


cdef inline u64 _submod(u64 a, u64 b, u64 q) nogil:
    return a - b if a >= b else a + (q - b)


cdef inline u64 _powmod(u64 b, u64 e, u64 q) nogil:
    cdef u64 r = 1 % q
    while e:
        if e & 1:
            r = pcm_mulmod(r, b, q)
        b = pcm_mulmod(b, b, q)
        e >>= 1
    return r


def add(const u64[::1] a, const u64[::1] b, u64 q):
    cdef Py_ssize_t i, n = a.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef u64[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _addmod(a[i], b[i], q)
    return out


def sub(const u64[::1] a, const u64[::1] b, u64 q):
    cdef Py_ssize_t i, n = a.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef u64[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _submod(a[i], b[i], q)
    return out


def mul(const u64[::1] a, const u64[::1] b, u64 q):
    cdef Py_ssize_t i, n = a.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef u64[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = pcm_mulmod(a[i], b[i], q)
    return out


def add_scalar(const u64[::1] a, u64 s, u64 q):
    cdef Py_ssize_t i, n = a.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef u64[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _addmod(a[i], s, q)
    return out


def rsub_scalar(u64 s, const u64[::1] a, u64 q):
    """``s - a`` slot-wise."""
    cdef Py_ssize_t i, n = a.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef u64[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _submod(s, a[i], q)
    return out


def mul_scalar(const u64[::1] a, u64 s, u64 q):
    cdef Py_ssize_t i, n = a.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef u64[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = pcm_mulmod(a[i], s, q)
    return out


def power(const u64[::1] a, u64 e, u64 q):
    cdef Py_ssize_t i, n = a.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef u64[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _powmod(a[i], e, q)
    return out


def total(const u64[::1] a, u64 q):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef u64 s = 0
    with nogil:
        for i in range(n):
            s = _addmod(s, a[i], q)
    return s


def product(const u64[::1] a, u64 q):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef u64 s = 1 % q
    with nogil:
        for i in range(n):
            s = pcm_mulmod(s, a[i], q)
    return s


def poly_from_roots(const u64[::1] roots, u64 q):
    """Coefficients (low degree first) of ``prod(X - r)``."""
    cdef Py_ssize_t n = roots.shape[0], i, j
    out = np.zeros(n + 1, dtype=np.uint64)
    cdef u64[::1] c = out
    cdef u64 r
    c[0] = 1 % q
    with nogil:
        for i in range(n):
            r = roots[i]
            # multiply current degree-i polynomial by (X - r), in place
            c[i + 1] = c[i]
            j = i
            while j > 0:
                c[j] = _submod(c[j - 1], pcm_mulmod(c[j], r, q), q)
                j -= 1
            c[0] = _submod(0, pcm_mulmod(c[0], r, q), q)
    return out


def horner(const u64[::1] coeffs, u64 x, u64 q):
    cdef Py_ssize_t i = coeffs.shape[0]
    cdef u64 acc = 0
    with nogil:
        while i > 0:
            i -= 1
            acc = _addmod(pcm_mulmod(acc, x, q), coeffs[i], q)
    return acc
