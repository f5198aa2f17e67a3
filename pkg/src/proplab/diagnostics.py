"""Observables used to judge the models.

Conditional aggregate impact and its curvature, signature plots, Hurst and
slope-scaling exponents, price responses (empirical and closed form) and
N-trade prediction correlations. Every statistic is computed day by day and
reduced in day order, so results do not depend on the thread count.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from ._parallel import map_ordered
from .calibration import LABELS, Estimates, estimate
from .errors import InputError, UndefinedStatisticError
from .events import DaySeries, InstrumentData
from .models import CalibratedModel, ModelKind
from .simulate import PredictedSeries

__all__ = [
    "ImpactCurve",
    "Response",
    "SignaturePlot",
    "aggregate_impact",
    "central_slope",
    "closed_form_response",
    "curvature",
    "hurst_exponent",
    "model_correlation",
    "response_function",
    "signature_plot",
    "slope_scaling",
    "write_json",
    "write_plot_data",
    "write_tidy_csv",
]

DEFAULT_BINS = 31


def _returns_of(x) -> list:
    """Per-day return arrays from data, predictions or a list of arrays."""
    if isinstance(x, InstrumentData):
        return [d.ret for d in x.days]
    if isinstance(x, DaySeries):
        return [x.ret]
    if isinstance(x, PredictedSeries):
        return list(x.days)
    if isinstance(x, np.ndarray) and x.ndim == 1:
        return [x]
    return [np.asarray(v, dtype=np.float64) for v in x]


def _window_sums(x: np.ndarray, N: int) -> np.ndarray:
    """Sums over all overlapping windows of ``N`` consecutive points."""
    cs = np.concatenate([[0.0], np.cumsum(x, dtype=np.float64)])
    return cs[N:] - cs[:-N]


# --------------------------------------------------------------------------
# aggregate impact


@dataclass(frozen=True)
class ImpactCurve:
    """Mean ``N``-trade log return per quantile bin of the imbalance ``X``."""

    bin_centers: np.ndarray
    means: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    N: int
    variable: str  # "sign" or "volume"

    def rows(self):
        for i in range(len(self.means)):
            yield {
                "variable": self.variable, "N": self.N, "bin": i,
                "x": self.bin_centers[i], "value": self.means[i],
                "stderr": self.stderr[i], "count": int(self.counts[i]),
            }


def _imbalance(day: DaySeries, variable: str) -> np.ndarray:
    eps = day.sign.astype(np.float64)
    if variable == "sign":
        return eps
    if variable == "volume":
        total = float(np.sum(day.volume))
        if not total > 0:
            raise InputError(f"{day.date}: zero total volume")
        return eps * day.volume / total
    raise InputError(f"unknown imbalance variable {variable!r}")


def _symmetric_edges(X: np.ndarray, bins: int) -> np.ndarray:
    """Quantile edges of ``X`` and ``-X`` pooled, so that the set of edges is
    symmetric about zero."""
    both = np.concatenate([X, -X])
    edges = np.quantile(both, np.linspace(0.0, 1.0, bins + 1))
    edges = 0.5 * (edges - edges[::-1])  # exact symmetry despite rounding
    edges = np.unique(edges)
    return edges[edges != 0.0] if len(edges) > 2 else edges


def _assign_bins(X: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin index per value; a value on an interior edge joins the bin nearer
    to zero, which keeps the binning odd under ``X -> -X``."""
    inner = edges[1:-1]
    lo = np.searchsorted(inner, X, side="left")
    hi = np.searchsorted(inner, X, side="right")
    return np.where(X > 0, lo, hi)


def aggregate_impact(data: InstrumentData, N: int, bins: int = DEFAULT_BINS, variable: str = "sign",
                     returns=None) -> ImpactCurve:
    """Conditional aggregate impact ``R_N(X)``.

    Every day contributes all overlapping windows of ``N`` trades. ``X`` is
    the window sum of signs (``variable="sign"``) or of signed volumes
    normalised by the day's total volume (``"volume"``). ``returns``
    replaces the returns of ``data`` (e.g. model predictions).

    Bin edges are quantiles of ``X`` and ``-X`` pooled, so the binning is
    odd and sign-flipped data give the mirrored curve bin by bin. Tied
    values never straddle an edge. An even ``bins`` loses its central edge
    at zero (one bin fewer); empty bins are dropped.
    """
    N = int(N)
    if N < 1 or N > data.max_lag:
        raise InputError(f"bin size N={N} must lie in [1, {data.max_lag}] (shortest day)")
    if bins < 1:
        raise InputError("need at least one bin")
    rets = _returns_of(data if returns is None else returns)
    if len(rets) != len(data.days):
        raise InputError("returns are not aligned with the flow")

    def one(pair):
        day, r = pair
        if len(r) != len(day):
            raise InputError(f"{day.date}: returns are not aligned with the flow")
        return _window_sums(_imbalance(day, variable), N), _window_sums(np.asarray(r, np.float64), N)

    parts = map_ordered(one, list(zip(data.days, rets)))
    X = np.concatenate([p[0] for p in parts])
    R = np.concatenate([p[1] for p in parts])
    edges = _symmetric_edges(X, bins)
    idx = _assign_bins(X, edges)
    nb = len(edges) - 1
    counts = np.bincount(idx, minlength=nb)
    keep = counts > 0
    sx = np.bincount(idx, X, minlength=nb)
    sr = np.bincount(idx, R, minlength=nb)
    srr = np.bincount(idx, R * R, minlength=nb)
    c = np.maximum(counts, 1)
    mean = sr / c
    var = np.maximum(srr / c - mean**2, 0.0) * c / np.maximum(c - 1, 1)
    se = np.where(counts > 1, np.sqrt(var / c), np.nan)
    return ImpactCurve(sx[keep] / c[keep], mean[keep], se[keep], counts[keep], N, variable)


def curvature(curve, a: float | None = None, values=None, grid: int = 2001) -> float:
    """Curvature ``chi`` of an impact curve on ``[-a, a]``::

        chi = 1/3 - 1/2 (I(-a/2, 0) / I(-a, -a/2) + I(0, a/2) / I(a/2, a))

    ``I`` integrates the linearly interpolated curve (trapezoid rule on a
    regular grid). A straight line gives 0, a sine or tent gives -2/3.
    Pass an ``ImpactCurve`` or ``x`` with ``values``.
    """
    if isinstance(curve, ImpactCurve):
        x, f = curve.bin_centers, curve.means
    else:
        x, f = np.asarray(curve, dtype=np.float64), np.asarray(values, dtype=np.float64)
    if x.shape != f.shape or x.ndim != 1:
        raise InputError("curve abscissae and values must be aligned 1-D arrays")
    order = np.argsort(x, kind="stable")
    x, f = x[order], f[order]
    if a is None:
        a = min(-x[0], x[-1])
    a = float(a)
    if not a > 0:
        raise InputError("curve does not straddle zero")
    tol = 1e-12 * a
    if x[0] > -a + tol or x[-1] < a - tol:
        raise InputError(f"curve does not cover [-{a}, {a}]")
    if np.sum((x >= -a - tol) & (x <= a + tol)) < 8:
        raise InputError("need at least 8 points in [-a, a]")
    if grid % 4 != 1:
        grid += (1 - grid) % 4  # so that -a/2, 0, a/2 are grid points
    g = np.linspace(-a, a, grid)
    y = np.interp(g, x, f)
    q = (grid - 1) // 4

    def integral(i, j):
        return float(integrate.trapezoid(y[i:j + 1], g[i:j + 1]))

    i1, i2, i3, i4 = integral(0, q), integral(q, 2 * q), integral(2 * q, 3 * q), integral(3 * q, 4 * q)
    if i1 == 0.0 or i4 == 0.0:
        raise UndefinedStatisticError("curvature undefined: outer integral vanishes")
    return 1.0 / 3.0 - 0.5 * (i2 / i1 + i3 / i4)


def central_slope(curve: ImpactCurve, fraction: float = 0.25) -> float:
    """Slope of a straight-line fit to the bins inside the central
    ``fraction`` of the imbalance range (at least the three central bins)."""
    x, f = curve.bin_centers, curve.means
    half = 0.5 * fraction * (x[-1] - x[0])
    sel = np.abs(x) <= half
    if sel.sum() < 3:
        sel = np.zeros(len(x), bool)
        sel[np.argsort(np.abs(x), kind="stable")[:3]] = True
    if sel.sum() < 2 or np.ptp(x[sel]) == 0:
        raise UndefinedStatisticError("too few distinct central bins for a slope")
    return float(np.polyfit(x[sel], f[sel], 1)[0])


def slope_scaling(curves, slopes=None) -> float:
    """Exponent ``kappa`` of ``slope(N) ~ N^-kappa`` from a log-log fit.

    ``curves`` is a sequence of ``ImpactCurve`` (slopes from
    ``central_slope``) or of bin sizes when ``slopes`` is given.
    """
    if slopes is None:
        Ns = np.array([c.N for c in curves], dtype=np.float64)
        s = np.array([central_slope(c) for c in curves])
    else:
        Ns = np.asarray(curves, dtype=np.float64)
        s = np.asarray(slopes, dtype=np.float64)
    if len(Ns) < 4 or len(np.unique(Ns)) < 4:
        raise InputError("need at least four distinct bin sizes")
    if np.any(~(s > 0)):
        raise UndefinedStatisticError("non-positive central slope")
    return float(-np.polyfit(np.log(Ns), np.log(s), 1)[0])


# --------------------------------------------------------------------------
# diffusivity


@dataclass(frozen=True)
class SignaturePlot:
    """``D(l) = <(log m(t + l) - log m(t))^2> / l`` with day-level errors."""

    lags: np.ndarray
    D: np.ndarray
    stderr: np.ndarray
    D_LF: float

    @property
    def subtracted(self) -> np.ndarray:
        return self.D - self.D_LF

    def rows(self):
        for i, lag in enumerate(self.lags):
            yield {"lag": int(lag), "value": self.D[i], "stderr": self.stderr[i],
                   "subtracted": self.D[i] - self.D_LF}


def default_lags(L: int, n: int = 40) -> np.ndarray:
    """About ``n`` log-spaced integer lags in ``[1, L]``."""
    return np.unique(np.round(np.logspace(0.0, math.log10(L), n)).astype(np.int64))


def _mid_path(day: DaySeries, r=None) -> np.ndarray:
    """Log mid before every event plus the final mid of the day."""
    r = day.ret if r is None else np.asarray(r, dtype=np.float64)
    return np.concatenate([[0.0], np.cumsum(r)])


def signature_plot(data: InstrumentData, L: int, lags=None, returns=None) -> SignaturePlot:
    """Signature plot from overlapping windows, equal day weights.

    ``D_LF`` is the mean of ``D`` over the largest decade of lags,
    ``[L / 10, L]``.
    """
    L = int(L)
    if L < 1 or L > data.max_lag:
        raise InputError(f"lag bound {L} must lie in [1, {data.max_lag}] (shortest day)")
    lags = default_lags(L) if lags is None else np.asarray(lags, dtype=np.int64)
    if np.any(lags < 1) or np.any(lags > L):
        raise InputError("lags must lie in [1, L]")
    rets = _returns_of(data if returns is None else returns)
    if len(rets) != len(data.days):
        raise InputError("returns are not aligned with the flow")

    def one(pair):
        day, r = pair
        m = _mid_path(day, r)
        return np.array([np.mean((m[lag:] - m[:-lag]) ** 2) / lag for lag in lags])

    per_day = np.array(map_ordered(one, list(zip(data.days, rets))))
    D = per_day.mean(axis=0)
    nd = len(per_day)
    se = per_day.std(axis=0, ddof=1) / math.sqrt(nd) if nd > 1 else np.full(len(lags), np.nan)
    top = lags >= L / 10.0
    return SignaturePlot(lags, D, se, float(D[top].mean()))


def _dyadic_windows(n: int, smallest: int = 16) -> np.ndarray:
    """Window sizes ``smallest * 2^k`` up to ``n / 64``, so that every size
    has 64 windows. Short series keep two sizes if ``n / 8`` allows."""
    largest = min(n // 8, max(n // 64, 2 * smallest))
    sizes = []
    w = smallest
    while w <= largest:
        sizes.append(w)
        w *= 2
    return np.array(sizes, dtype=np.int64)


def _hurst_one(y: np.ndarray, smallest: int) -> float:
    sizes = _dyadic_windows(len(y), smallest)
    if len(sizes) < 2:
        raise InputError(f"series of {len(y)} points too short for a Hurst fit")
    F = []
    for w in sizes:
        blocks = y[: len(y) // w * w].reshape(-1, w)
        F.append(np.sqrt(np.mean((blocks - blocks.mean(axis=1, keepdims=True)) ** 2)))
    F = np.array(F)
    if np.any(F <= 0):
        raise UndefinedStatisticError("constant series: Hurst exponent undefined")
    return float(np.polyfit(np.log(sizes), np.log(F), 1)[0])


def hurst_exponent(series, smallest: int = 16) -> float:
    """Hurst exponent of cumulative series (one array or one per day).

    In every non-overlapping window of a dyadic size ``w`` the root mean
    square deviation of the path from its window mean is taken; ``H`` is the
    slope of its log against ``log w``, averaged over days. Sizes run from
    16 to ``n / 64``: few windows per size bias the log downwards.
    """
    if isinstance(series, np.ndarray) and series.ndim == 1:
        series = [series]
    days = [np.asarray(s, dtype=np.float64) for s in series]
    if not days:
        raise InputError("no series given")
    for s in days:
        if len(s) < 512:
            raise InputError(f"Hurst exponent needs at least 512 points per day, got {len(s)}")
    return float(np.mean(map_ordered(lambda s: _hurst_one(s, smallest), days)))


# --------------------------------------------------------------------------
# responses


@dataclass(frozen=True)
class Response:
    """Price responses over ``lags`` built from the return-sign responses.

    ``S_pi[p](l) = <x_p(t - l) r(t)>``. ``R_pi[p]`` are the cumulative sums
    ``R_p(l) = sum_{0 <= l' < l} S_p(l')`` for ``l > 0``,
    ``R_p(l) = -sum_{l <= l' < 0} S_p(l')`` for ``l < 0`` and ``R_p(0) = 0``.
    ``R = sum_p R_p`` is ``<(m(t + l) - m(t)) eps(t)>``.

    ``R_now[q]`` splits ``R`` by the label ``q`` of the responding event
    instead (the part of the price path carried by q events). It is
    ``None`` when that split is not available. ``stderr`` maps ``"all"``,
    the labels and ``("now", q)`` to day-level standard errors, if computed.
    """

    lags: np.ndarray
    S_pi: dict
    R_pi: dict
    R: np.ndarray
    R_now: dict | None = None
    stderr: dict | None = None

    def at(self, lag, which=None):
        if which is None:
            arr = self.R
        elif isinstance(which, tuple):
            arr = self.R_now[which[1]]
        else:
            arr = self.R_pi[which]
        return arr[np.asarray(lag) - self.lags[0]]

    def error_at(self, lag, which=None):
        key = "all" if which is None else which
        return self.stderr[key][np.asarray(lag) - self.lags[0]]

    @classmethod
    def from_S(cls, lags, S_pi: dict, S_pipi: dict | None = None, stderr=None) -> "Response":
        lags = np.asarray(lags)
        if lags[0] > 0 or lags[-1] < 0:
            raise InputError("response lags must include zero")
        R_pi = {p: _cumulative(lags, np.asarray(s, dtype=np.float64)) for p, s in S_pi.items()}
        R = sum(R_pi[p] for p in LABELS)
        R_now = None
        if S_pipi is not None:
            R_now = {q: _cumulative(lags, sum(np.asarray(S_pipi[p, q], np.float64) for p in LABELS))
                     for q in LABELS}
        return cls(lags, dict(S_pi), R_pi, R, R_now, stderr)

    def rows(self):
        def se(key, i):
            return self.stderr[key][i] if self.stderr is not None else ""

        for i, lag in enumerate(self.lags):
            yield {"lag": int(lag), "key": "all", "value": self.R[i], "stderr": se("all", i)}
            for p in LABELS:
                yield {"lag": int(lag), "key": f"past_{p}", "value": self.R_pi[p][i], "stderr": se(p, i)}
            if self.R_now is not None:
                for q in LABELS:
                    yield {"lag": int(lag), "key": f"now_{q}", "value": self.R_now[q][i],
                           "stderr": se(("now", q), i)}


def _cumulative(lags, S) -> np.ndarray:
    z = -int(lags[0])  # index of lag 0
    R = np.zeros_like(S)
    R[z + 1:] = np.cumsum(S[z:-1])
    if z > 0:
        R[:z] = -np.cumsum(S[:z][::-1])[::-1]
    return R


def _day_response(raw, lags) -> Response:
    S_pipi = {(p, q): raw["S", p, q].values for p in LABELS for q in LABELS}
    S_pi = {p: S_pipi[p, "n"] + S_pipi[p, "c"] for p in LABELS}
    return Response.from_S(lags, S_pi, S_pipi)


def response_function(data: InstrumentData, L: int | None = None, returns=None,
                      segment_length: int | None = None, estimates: Estimates | None = None,
                      stderr: bool = False) -> Response:
    """Empirical responses over lags ``-L..L``.

    ``returns`` replaces the returns of ``data`` (e.g. a simulated model run
    on the same flow). ``stderr=True`` adds standard errors from the spread
    of the day estimates.
    """
    if returns is not None:
        rets = _returns_of(returns)
        if len(rets) != len(data.days) or any(len(r) != len(d) for r, d in zip(rets, data.days)):
            raise InputError("returns are not aligned with the flow")
        data = data.subset([
            DaySeries.from_returns(d.date, d.sign, d.label, r, volume=d.volume, t=d.t)
            for d, r in zip(data.days, rets)
        ])
    if estimates is None or (stderr and estimates.per_day is None):
        estimates = estimate(data, L, three_point=False, segment_length=segment_length, keep_days=stderr)
    rs = estimates.responses
    errs = None
    if stderr:
        days = [_day_response(raw, rs.lags) for raw in estimates.per_day]
        nd = len(days)

        def spread(get):
            arr = np.array([get(d) for d in days])
            if nd < 2:
                return np.full(arr.shape[1], np.nan)
            return arr.std(axis=0, ddof=1) / math.sqrt(nd)

        errs = {"all": spread(lambda d: d.R)}
        for p in LABELS:
            errs[p] = spread(lambda d, p=p: d.R_pi[p])
            errs["now", p] = spread(lambda d, p=p: d.R_now[p])
    return Response.from_S(rs.lags, rs.S_pi, rs.S_pipi, errs)


def _closed_form_S(model: CalibratedModel, est: Estimates) -> tuple[np.ndarray, dict]:
    corr = est.correlations
    L = est.L
    kind = model.kind
    C2 = corr.C2
    if kind is ModelKind.CIM2:
        lags = np.arange(-L, L + 1)
        return lags, {p: model.delta_c * C2[p, "c"].at(lags) for p in LABELS}
    Lk = model.L
    if Lk > L:
        raise InputError(f"kernel lag {Lk} exceeds the correlation lag bound {L}")
    lags = np.arange(Lk - L, L + 1)
    j = np.arange(Lk + 1)
    diff = lags[:, None] - j[None, :]
    k = model.kernels
    if kind is ModelKind.TIM1:
        return lags, {p: sum(C2[p, q].at(diff) for q in LABELS) @ k["g"] for p in LABELS}
    if kind is ModelKind.TIM2:
        ker = {"n": k["g_n"], "c": k["g_c"]}
        return lags, {p: sum(C2[p, q].at(diff) @ ker[q] for q in LABELS) for p in LABELS}
    ker = {"n": k["kappa_nc"], "c": k["kappa_cc"]}
    if kind is ModelKind.HDIM2:
        if corr.C3 is None:
            raise InputError("three-point correlations were not estimated")
        return lags, {
            p: sum(corr.C3[p, q].at(-lags[:, None], -j[None, :]) @ ker[q] for q in LABELS)
            for p in LABELS
        }
    # factorised three-point tensor, exact where all three events coincide
    out = {}
    for p in LABELS:
        total = np.zeros(len(lags))
        for q in LABELS:
            B = corr.p_c * C2[p, q].at(diff)
            B[lags == 0, 0] = C2["c", "c"].at(0) if p == q == "c" else 0.0
            total += B @ ker[q]
        out[p] = total
    return lags, out


def closed_form_response(model: CalibratedModel, estimates: Estimates) -> Response:
    """Responses implied by the kernels and the measured correlations.

    Lags run over ``Lk - L .. L`` (all lags for CIM2) where every needed
    correlation is available. For an in-sample calibration the positive-lag
    part reproduces the empirical response up to solver accuracy.
    """
    lags, S_pi = _closed_form_S(model, estimates)
    S_pipi = None
    if model.kind in (ModelKind.HDIM2, ModelKind.HDIM2STAR, ModelKind.CIM2):
        # returns vanish on n events
        S_pipi = {}
        for p in LABELS:
            S_pipi[p, "c"] = S_pi[p]
            S_pipi[p, "n"] = np.zeros_like(S_pi[p])
    return Response.from_S(lags, S_pi, S_pipi)


# --------------------------------------------------------------------------
# prediction quality


def model_correlation(true_returns, predicted, N: int) -> float:
    """Pearson correlation of overlapping ``N``-trade aggregate returns,
    per day, averaged with equal day weights."""
    a = _returns_of(true_returns)
    b = _returns_of(predicted)
    if len(a) != len(b) or any(len(x) != len(y) for x, y in zip(a, b)):
        raise InputError("true and predicted returns are not aligned")
    N = int(N)
    if N < 1 or any(N >= len(x) for x in a):
        raise InputError(f"N={N} must be positive and shorter than every day")

    def one(pair):
        x, y = (_window_sums(np.asarray(v, np.float64), N) for v in pair)
        x = x - x.mean()
        y = y - y.mean()
        sxx, syy = float(x @ x), float(y @ y)
        if sxx == 0.0 or syy == 0.0:
            raise UndefinedStatisticError("zero variance of aggregate returns")
        return float(x @ y) / math.sqrt(sxx * syy)

    return float(np.mean(map_ordered(one, list(zip(a, b)))))


# --------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_tidy_csv(path, rows, header=None) -> None:
    """One row per point; floats are written with full precision."""
    rows = list(rows)
    if header is None:
        header = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in header])


def write_plot_data(path, rows, columns) -> None:
    """Whitespace-separated columns with a comment header (gnuplot)."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(columns) + "\n")
        for r in rows:
            fh.write(" ".join(_fmt(r[c]) for c in columns) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=1, sort_keys=True)
        fh.write("\n")
