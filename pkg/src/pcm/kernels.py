"""Import-time selection of the slot arithmetic kernels.

The compiled extension is used when it was built; otherwise (or when
``PCM_PURE_PYTHON=1`` is set) the numpy implementation takes over.
"""
import os

if os.environ.get("PCM_PURE_PYTHON") == "1":
    from pcm import _kernels_py as impl
else:
    try:
        from pcm import _kernels as impl
    except ImportError:  # extension not built
        from pcm import _kernels_py as impl

IMPLEMENTATION: str = impl.IMPLEMENTATION

add = impl.add
sub = impl.sub
mul = impl.mul
add_scalar = impl.add_scalar
rsub_scalar = impl.rsub_scalar
mul_scalar = impl.mul_scalar
power = impl.power
total = impl.total
product = impl.product
poly_from_roots = impl.poly_from_roots
horner = impl.horner

__all__ = [
    "IMPLEMENTATION",
    "add",
    "sub",
    "mul",
    "add_scalar",
    "rsub_scalar",
    "mul_scalar",
    "power",
    "total",
    "product",
    "poly_from_roots",
    "horner",
]
