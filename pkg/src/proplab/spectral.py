"""FFT estimators of two- and three-point cross-correlations.

Conventions
-----------
``xcorr2(f, g, L)`` estimates ``C_fg(l) = <f(t) g(t + l)>`` for
``l = -L..L`` and ``xcorr3(f, g, h, L)`` estimates
``C_fgh(l, j) = <f(t) g(t + l) h(t + j)>``. Every lag is divided by the number
of summands that actually exist in the sample, so the estimates are unbiased
for jointly stationary inputs. Arrays are indexed by ``lag + L``.

Long days are cut into segments of a fixed length that cover the day with
the smallest possible overlap; segments are averaged with equal weight into
a day estimate and days are averaged with equal weight (``welch_average``).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import fft as sfft

from . import kernels

__all__ = [
    "CrossCorr2",
    "CrossCorr3",
    "SegmentedSpectra",
    "bispectrum",
    "blind_spot_mask",
    "fft_length",
    "segment_starts",
    "triple_counts",
    "welch_average",
    "write_crosscorr2_csv",
    "write_crosscorr3_csv",
    "xcorr2",
    "xcorr3",
]


@dataclass(frozen=True)
class CrossCorr2:
    """Two-point cross-correlation over lags ``-L..L``."""

    values: np.ndarray
    counts: np.ndarray

    @property
    def L(self) -> int:
        return (len(self.values) - 1) // 2

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.L, self.L + 1)

    def at(self, lag):
        lag = np.asarray(lag)
        if np.any(np.abs(lag) > self.L):
            raise IndexError(f"lag outside [-{self.L}, {self.L}]")
        return self.values[lag + self.L]


@dataclass(frozen=True)
class CrossCorr3:
    """Three-point cross-correlation on the square ``[-L, L]^2``.

    ``values[l + L, j + L]`` holds ``C(l, j)``. Entries with ``mask == False``
    (``|l - j| > L``) are not estimated and hold NaN.
    """

    values: np.ndarray
    mask: np.ndarray
    counts: np.ndarray

    @property
    def L(self) -> int:
        return (self.values.shape[0] - 1) // 2

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.L, self.L + 1)

    def at(self, lag1, lag2):
        lag1 = np.asarray(lag1)
        lag2 = np.asarray(lag2)
        L = self.L
        if np.any(np.abs(lag1) > L) or np.any(np.abs(lag2) > L):
            raise IndexError(f"lag outside [-{L}, {L}]")
        if not np.all(self.mask[lag1 + L, lag2 + L]):
            raise IndexError("requested entry lies in the blind spot |l - j| > L")
        return self.values[lag1 + L, lag2 + L]


def fft_length(T: int, L: int) -> int:
    """Padded transform length free of wrap-around for lags up to ``L``."""
    return sfft.next_fast_len(T + L)


def blind_spot_mask(L: int) -> np.ndarray:
    lags = np.arange(-L, L + 1)
    return np.abs(lags[:, None] - lags[None, :]) <= L


def triple_counts(T: int, L: int) -> np.ndarray:
    """Number of ``t`` with ``t``, ``t + l`` and ``t + j`` all inside ``[0, T)``."""
    lags = np.arange(-L, L + 1)
    lo = np.minimum(0, np.minimum(lags[:, None], lags[None, :]))
    hi = np.maximum(0, np.maximum(lags[:, None], lags[None, :]))
    return np.maximum(T - (hi - lo), 0)


def segment_starts(n: int, T: int) -> np.ndarray:
    """Start indices of length-``T`` segments covering ``n`` points.

    Uses the fewest segments possible and spreads the unavoidable overlap
    evenly. A series no longer than ``T`` is a single (short) segment.
    """
    if n <= 0:
        raise ValueError("empty series")
    if T <= 0:
        raise ValueError("segment length must be positive")
    if n <= T:
        return np.zeros(1, dtype=np.int64)
    k = -(-n // T)
    return np.rint(np.arange(k) * (n - T) / (k - 1)).astype(np.int64)


def _check_lag_bound(T: int, L: int) -> None:
    if T < 1:
        raise ValueError("empty series")
    if L < 0:
        raise ValueError("lag bound must be non-negative")
    if L > T - 1:
        raise ValueError(f"lag bound L={L} requires at least {L + 1} points, got {T}")


class SegmentedSpectra:
    """Zero-padded spectra of several aligned series, cut into segments.

    All correlation estimates of one day share the same segmentation, so each
    series is transformed once and every requested cross-correlation is a
    product of cached spectra.
    """

    def __init__(
        self,
        series: Mapping[str, np.ndarray],
        L: int,
        segment_length: int | None = None,
    ):
        lengths = {len(v) for v in series.values()}
        if len(lengths) != 1:
            raise ValueError("series must have equal lengths")
        (n,) = lengths
        _check_lag_bound(n, L)
        T = n if segment_length is None else min(int(segment_length), n)
        if T < L + 1:
            raise ValueError(f"segment length {T} too short for lag bound {L}")
        self.L = L
        self.T = T
        self.starts = segment_starts(n, T)
        self.nfft = fft_length(T, L)
        idx = self.starts[:, None] + np.arange(T)[None, :]
        self._spectra = {
            name: sfft.fft(np.asarray(x, dtype=np.float64)[idx], self.nfft, axis=1)
            for name, x in series.items()
        }

    @property
    def n_segments(self) -> int:
        return len(self.starts)

    def spectrum(self, name: str) -> np.ndarray:
        return self._spectra[name]

    def xcorr2(self, f: str, g: str) -> CrossCorr2:
        L, n = self.L, self.nfft
        nh = n // 2 + 1
        F = self._spectra[f][:, :nh]
        G = self._spectra[g][:, :nh]
        raw = sfft.irfft(np.sum(np.conj(F) * G, axis=0), n)
        lags = np.arange(-L, L + 1)
        counts = (self.T - np.abs(lags)) * self.n_segments
        return CrossCorr2(values=raw[lags % n] / counts, counts=counts)

    def xcorr3(self, f: str, g: str, h: str) -> CrossCorr3:
        L, n = self.L, self.nfft
        acc = np.zeros((n, n // 2 + 1), dtype=np.complex128)
        kernels.accumulate_bispectrum(
            self._spectra[f], self._spectra[g], self._spectra[h], acc
        )
        raw = sfft.irfft2(acc, s=(n, n))
        lags = np.arange(-L, L + 1) % n
        mask = blind_spot_mask(L)
        counts = triple_counts(self.T, L) * self.n_segments
        values = np.full((2 * L + 1, 2 * L + 1), np.nan)
        values[mask] = raw[np.ix_(lags, lags)][mask] / counts[mask]
        return CrossCorr3(values=values, mask=mask, counts=np.where(mask, counts, 0))


def xcorr2(f, g, L: int) -> CrossCorr2:
    """Unbiased two-point cross-correlation of one series pair via FFT."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape != g.shape or f.ndim != 1:
        raise ValueError("f and g must be 1-D and of equal length")
    _check_lag_bound(len(f), L)
    return SegmentedSpectra({"f": f, "g": g}, L).xcorr2("f", "g")


def bispectrum(F, G, H) -> np.ndarray:
    """Cross-bispectrum ``conj(F(a + b)) G(a) H(b)`` on the full FFT grid.

    Index ``a``/``b`` follow the FFT ordering of the inputs and the frequency
    sum wraps modulo the transform length.
    """
    F = np.asarray(F)
    G = np.asarray(G)
    H = np.asarray(H)
    if F.ndim != 1 or F.shape != G.shape or F.shape != H.shape:
        raise ValueError("spectra must be 1-D and of equal length")
    n = len(F)
    idx = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    return np.conj(F[idx]) * G[:, None] * H[None, :]


def xcorr3(f, g, h, L: int) -> CrossCorr3:
    """Unbiased three-point cross-correlation via the 2-D inverse FFT of the
    cross-bispectrum."""
    arrays = [np.asarray(a, dtype=np.float64) for a in (f, g, h)]
    if any(a.ndim != 1 for a in arrays) or len({len(a) for a in arrays}) != 1:
        raise ValueError("f, g and h must be 1-D and of equal length")
    _check_lag_bound(len(arrays[0]), L)
    spec = SegmentedSpectra(dict(zip("fgh", arrays)), L)
    return spec.xcorr3("f", "g", "h")


def welch_average(per_day: Sequence[CrossCorr2 | CrossCorr3]):
    """Equal-weight element-wise mean of day estimates."""
    if len(per_day) == 0:
        raise ValueError("nothing to average")
    first = per_day[0]
    kind = type(first)
    if any(type(e) is not kind for e in per_day):
        raise TypeError("cannot mix two- and three-point estimates")
    if any(e.values.shape != first.values.shape for e in per_day):
        raise ValueError("shape mismatch between day estimates")
    values = np.mean([e.values for e in per_day], axis=0)
    counts = np.sum([e.counts for e in per_day], axis=0)
    if kind is CrossCorr2:
        return CrossCorr2(values=values, counts=counts)
    mask = np.logical_and.reduce([e.mask for e in per_day])
    values = np.where(mask, values, np.nan)
    return CrossCorr3(values=values, mask=mask, counts=np.where(mask, counts, 0))


def write_crosscorr2_csv(path, cc: CrossCorr2) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag", "value", "count"])
        for lag, v, c in zip(cc.lags, cc.values, cc.counts):
            w.writerow([int(lag), repr(float(v)), int(c)])


def write_crosscorr3_csv(path, cc: CrossCorr3) -> None:
    """Long format: one row per ``(l, j)`` with the validity mask."""
    L = cc.L
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["l", "j", "value", "mask"])
        for a in range(2 * L + 1):
            for b in range(2 * L + 1):
                ok = bool(cc.mask[a, b])
                w.writerow(
                    [a - L, b - L, repr(float(cc.values[a, b])) if ok else "", int(ok)]
                )
