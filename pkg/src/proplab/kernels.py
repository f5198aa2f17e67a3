"""Backend selection for the hot loops.

The compiled extension is preferred; set ``PROPLAB_KERNELS=numpy`` to force
the pure numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "numpy"
accumulate_bispectrum = _pykernels.accumulate_bispectrum
causal_convolve = _pykernels.causal_convolve

if os.environ.get("PROPLAB_KERNELS", "").lower() != "numpy":
    try:
        from . import _ckernels
    except ImportError:
        _ckernels = None
    if _ckernels is not None:
        import numpy as np

        BACKEND = "cython"

        def accumulate_bispectrum(F, G, H, out, weight=1.0):
            c = np.ascontiguousarray
            return _ckernels.accumulate_bispectrum(
                c(F, dtype=np.complex128),
                c(G, dtype=np.complex128),
                c(H, dtype=np.complex128),
                out,
                float(weight),
            )

        # above this fraction of nonzero inputs the BLAS-backed dense
        # convolution is at least as fast as the compiled scatter loop
        DENSE_FRACTION = 0.6

        def causal_convolve(x, kernel):
            x = np.ascontiguousarray(x, dtype=np.float64)
            if len(x) and np.count_nonzero(x) > DENSE_FRACTION * len(x):
                return _pykernels.causal_convolve(x, kernel)
            return _ckernels.causal_convolve(x, np.ascontiguousarray(kernel, dtype=np.float64))

__all__ = ["BACKEND", "accumulate_bispectrum", "causal_convolve"]
