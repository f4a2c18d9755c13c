"""Pure-Python (numpy) versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and results. Products of two residues fit in ``uint64`` only
while ``q < 2^32``; larger moduli fall back to Python integers.
"""
import numpy as np

IMPLEMENTATION = "python"

_WIDE = 1 << 32


def _big(q):
    return q >= _WIDE


def _objmul(a, b, q):
    out = (a.astype(object) * (b.astype(object) if isinstance(b, np.ndarray) else int(b))) % q
    return out.astype(np.uint64)


def add(a, b, q):
    s = a + b
    return np.where(s >= q, s - np.uint64(q), s)


def sub(a, b, q):
    return np.where(a >= b, a - b, a + (np.uint64(q) - b))


def mul(a, b, q):
    if _big(q):
        return _objmul(a, b, q)
    return (a * b) % np.uint64(q)


def add_scalar(a, s, q):
    return add(a, np.uint64(s), q)


def rsub_scalar(s, a, q):
    return sub(np.full_like(a, s), a, q)


def mul_scalar(a, s, q):
    if _big(q):
        return _objmul(a, s, q)
    return (a * np.uint64(s)) % np.uint64(q)


def power(a, e, q):
    result = np.full_like(a, 1 % q)
    base = a.copy()
    while e:
        if e & 1:
            result = mul(result, base, q)
        base = mul(base, base, q)
        e >>= 1
    return result


def total(a, q):
    return sum(int(v) for v in a) % q


def product(a, q):
    acc = 1 % q
    for v in a:
        acc = acc * int(v) % q
    return acc


def poly_from_roots(roots, q):
    coeffs = np.zeros(len(roots) + 1, dtype=np.uint64)
    coeffs[0] = 1 % q
    for i, r in enumerate(roots):
        # multiply by (X - r): shift up, subtract r times the old polynomial
        old = coeffs[: i + 1].copy()
        coeffs[1 : i + 2] = old
        coeffs[0] = 0
        coeffs[: i + 1] = sub(coeffs[: i + 1], mul_scalar(old, int(r), q), q)
    return coeffs


def horner(coeffs, x, q):
    acc = 0
    for c in reversed(coeffs.tolist()):
        acc = (acc * x + c) % q
    return acc
