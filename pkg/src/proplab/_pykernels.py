"""Reference numpy implementations of the hot loops.

These define the semantics of the compiled versions in ``_ckernels.pyx`` and
are used whenever the extension is not built.
"""
import numpy as np

_CHUNK_BYTES = 32 * 2**20


def accumulate_bispectrum(F, G, H, out, weight=1.0):
    """Add ``weight * sum_s conj(F_s(a+b)) G_s(a) H_s(b)`` into ``out``.

    ``F``, ``G``, ``H`` have shape ``(nseg, n)``; ``out`` has shape
    ``(n, nb)`` with ``nb <= n`` (pass ``nb = n // 2 + 1`` for the half plane
    needed by ``irfft2``). Frequency addition wraps modulo ``n``.
    """
    F = np.asarray(F)
    G = np.asarray(G)
    H = np.asarray(H)
    nseg, n = F.shape
    nb = out.shape[1]
    if G.shape != F.shape or H.shape != F.shape:
        raise ValueError("segment count mismatch")
    if out.shape[0] != n or nb > n:
        raise ValueError("spectrum length mismatch")
    idx = (np.arange(n)[:, None] + np.arange(nb)[None, :]) % n
    chunk = max(1, _CHUNK_BYTES // (16 * n * nb))
    for s0 in range(0, nseg, chunk):
        s1 = min(nseg, s0 + chunk)
        Fc = np.conj(F[s0:s1])[:, idx]
        out += weight * np.einsum("sab,sa,sb->ab", Fc, G[s0:s1], H[s0:s1, :nb])
    return out


def causal_convolve(x, kernel):
    """Return ``y(t) = sum_{j=0}^{min(t, K-1)} kernel(j) x(t - j)``."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if len(x) == 0:
        return np.zeros(0)
    return np.convolve(x, kernel)[: len(x)]
