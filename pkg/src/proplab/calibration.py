"""Kernel calibration for the propagator models.

All models are fitted by solving ``S = C k``: the (conditioned) responses of
the return to past labelled signs equal a correlation matrix times the
stacked kernels. Notation for a day with signs ``eps``, change indicator
``I_c`` and returns ``r``::

    x_p(t)       = 1[pi(t) = p] eps(t)
    S_pq(l)      = < x_p(t - l) 1[pi(t) = q] r(t) >
    C_pq(k)      = < x_p(s) x_q(s + k) >
    C3_pq(l, j)  = < I_c(t) x_p(t - l) x_q(t - j) >

Every expectation is a day-by-day spectral estimate averaged with equal day
weights (see ``spectral``). Kernels run over ``j = 0..Lk`` with ``Lk <= L``,
the lag bound of the correlations.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._parallel import map_ordered, n_threads
from .errors import InputError, NumericalError, SingularSystemError
from .events import InstrumentData, Label
from .models import CalibratedModel, ModelKind
from .spectral import CrossCorr2, CrossCorr3, SegmentedSpectra

log = logging.getLogger(__name__)

__all__ = [
    "CorrelationSet",
    "Estimates",
    "LinearSystem",
    "ResponseSet",
    "assemble",
    "assemble_hdim2",
    "assemble_hdim2_star",
    "assemble_tim1",
    "assemble_tim2",
    "calibrate",
    "calibrate_many",
    "estimate",
    "estimate_cim2",
    "estimate_correlations",
    "estimate_responses",
    "smooth_kernel",
    "solve_system",
]

LABELS = ("n", "c")
PAIRS = tuple((p, q) for p in LABELS for q in LABELS)
COND_RIDGE = 1e10
RIDGE_SCALE = 1e-8


# --------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class ResponseSet:
    """Responses over lags ``-L..L``; ``S_pipi[(p, q)]`` is ``S_pq``."""

    S: np.ndarray
    S_pi: dict
    S_pipi: dict

    @property
    def L(self) -> int:
        return (len(self.S) - 1) // 2

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.L, self.L + 1)

    def at(self, lag, which=None):
        arr = self.S if which is None else (self.S_pi[which] if isinstance(which, str) else self.S_pipi[which])
        return arr[np.asarray(lag) + self.L]

    @classmethod
    def from_components(cls, S_pipi: dict) -> "ResponseSet":
        S_pi = {p: S_pipi[p, "n"] + S_pipi[p, "c"] for p in LABELS}
        return cls(S_pi["n"] + S_pi["c"], S_pi, dict(S_pipi))


@dataclass(frozen=True)
class CorrelationSet:
    """Two-point label-sign correlations ``C2[(p, q)]``, optionally the
    three-point tensors ``C3[(p, q)]``, and the day-averaged fraction of
    price-changing events."""

    C2: dict
    C3: dict | None
    p_c: float
    active: tuple  # labels that occur in the data

    @property
    def L(self) -> int:
        return self.C2["n", "n"].L

    def sign_autocorr(self) -> CrossCorr2:
        vals = sum(self.C2[k].values for k in PAIRS)
        return CrossCorr2(values=vals, counts=self.C2["n", "n"].counts)


@dataclass(frozen=True, eq=False)
class Estimates:
    """Responses and correlations of one data set, plus the per-day pieces
    needed for leave-one-day-out errors."""

    responses: ResponseSet
    correlations: CorrelationSet
    L: int
    segment_length: int
    n_days: int
    n_events: int
    per_day: list | None = field(default=None, repr=False)

    def leave_one_out(self, k: int) -> "Estimates":
        if self.per_day is None:
            raise InputError("per-day estimates were not kept")
        if self.n_days < 2:
            raise InputError("leave-one-day-out needs at least two days")
        rest = self.per_day[:k] + self.per_day[k + 1:]
        return _reduce(rest, self.L, self.segment_length, self.n_events, keep=False)


def _day_raw(day, L: int, seg: int, three_point: bool) -> dict:
    eps = day.sign.astype(np.float64)
    ic = day.indicator(Label.c)
    x_c = eps * ic
    series = {"x_n": eps - x_c, "x_c": x_c, "r_n": day.ret * (1.0 - ic), "r_c": day.ret * ic}
    if three_point:
        series["i_c"] = ic
    sp = SegmentedSpectra(series, L, seg)
    out = {}
    for p, q in PAIRS:
        out["S", p, q] = sp.xcorr2(f"x_{p}", f"r_{q}")
        out["C2", p, q] = sp.xcorr2(f"x_{p}", f"x_{q}")
    if three_point:
        for p, q in (("n", "n"), ("n", "c"), ("c", "c")):
            out["C3", p, q] = sp.xcorr3("i_c", f"x_{p}", f"x_{q}")
        t = out["C3", "n", "c"]
        out["C3", "c", "n"] = CrossCorr3(t.values.T.copy(), t.mask.T.copy(), t.counts.T.copy())
    out["pc"] = float(ic.mean())
    out["count", "c"] = int(ic.sum())
    out["count", "n"] = len(ic) - int(ic.sum())
    return out


def _reduce(per_day: list, L: int, seg: int, n_events: int, keep: bool) -> Estimates:
    est = _finalize(_accumulate(None, per_day), L, seg, n_events)
    if keep:
        object.__setattr__(est, "per_day", list(per_day))
    return est


def _check_L(data: InstrumentData, L) -> int:
    if L is None:
        L = min(data.max_lag, 512)
    L = int(L)
    if L < 0:
        raise InputError("lag bound must be non-negative")
    if L > data.max_lag:
        raise InputError(
            f"lag bound {L} exceeds the shortest day ({data.max_lag + 1} events allow L <= {data.max_lag})"
        )
    return L


def estimate(data: InstrumentData, L: int | None = None, three_point: bool = True,
             segment_length: int | None = None, keep_days: bool = False) -> Estimates:
    """Day-averaged responses and correlations up to lag ``L``.

    Long days are cut into segments of ``segment_length`` events (default
    ``2 L``) with minimal overlap.
    """
    L = _check_L(data, L)
    seg = max(2 * L, L + 1) if segment_length is None else int(segment_length)
    if seg < L + 1:
        raise InputError(f"segment length {seg} too short for lag bound {L}")
    per_day = []
    # reduce in chunks so that only a few day tensors are alive at a time
    # unless they are kept for resampling
    chunk = max(1, n_threads()) * 4
    sums = None
    for i in range(0, len(data.days), chunk):
        part = map_ordered(lambda d: _day_raw(d, L, seg, three_point), data.days[i:i + chunk])
        if keep_days:
            per_day.extend(part)
        else:
            sums = _accumulate(sums, part)
    if keep_days:
        return _reduce(per_day, L, seg, data.n_events, keep=True)
    return _finalize(sums, L, seg, data.n_events)


def _accumulate(sums, part):
    for d in part:
        if sums is None:
            sums = {"_n": 0}
            for k, v in d.items():
                if isinstance(v, (CrossCorr2, CrossCorr3)):
                    sums[k] = [v.values.copy(), v.counts.copy(), getattr(v, "mask", None)]
                else:
                    sums[k] = v
        else:
            for k, v in d.items():
                if isinstance(v, (CrossCorr2, CrossCorr3)):
                    sums[k][0] = sums[k][0] + v.values
                    sums[k][1] = sums[k][1] + v.counts
                else:
                    sums[k] += v
        sums["_n"] += 1
    return sums


def _finalize(sums, L, seg, n_events) -> Estimates:
    """Equal-weight day means from accumulated sums."""
    nd = sums["_n"]

    def mean_cc(key):
        vals, counts, mask = sums[key]
        if mask is None:
            return CrossCorr2(vals / nd, counts)
        return CrossCorr3(vals / nd, mask, counts)

    S_pipi = {k: mean_cc(("S",) + k).values for k in PAIRS}
    C2 = {k: mean_cc(("C2",) + k) for k in PAIRS}
    C3 = {k: mean_cc(("C3",) + k) for k in PAIRS} if ("C3", "n", "n") in sums else None
    active = tuple(p for p in LABELS if sums["count", p] > 0)
    return Estimates(
        responses=ResponseSet.from_components(S_pipi),
        correlations=CorrelationSet(C2, C3, sums["pc"] / nd, active),
        L=L, segment_length=seg, n_days=nd, n_events=n_events,
    )


def estimate_responses(data: InstrumentData, L: int | None = None, **kw) -> ResponseSet:
    return estimate(data, L, three_point=False, **kw).responses


def estimate_correlations(data: InstrumentData, L: int | None = None, three_point: bool = True,
                          **kw) -> CorrelationSet:
    return estimate(data, L, three_point=three_point, **kw).correlations


# --------------------------------------------------------------------------
# linear systems


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """``matrix @ concat(kernels) = rhs``.

    ``blocks`` names the stacked unknowns in order; each has ``Lk + 1``
    entries. ``inactive`` kernels were dropped from the system (their event
    type never occurs) and are returned as zeros. ``toeplitz`` holds the
    (first column, first row) pair when the matrix is Toeplitz.
    """

    kind: ModelKind
    matrix: np.ndarray
    rhs: np.ndarray
    blocks: tuple
    Lk: int
    inactive: tuple = ()
    toeplitz: tuple | None = None


def _kernel_lag(L: int, Lk) -> int:
    Lk = L if Lk is None else int(Lk)
    if not 0 <= Lk <= L:
        raise InputError(f"kernel lag {Lk} outside [0, {L}]")
    return Lk


def assemble_tim1(responses: ResponseSet, sign_autocorr: CrossCorr2, Lk: int | None = None,
                  matrix: str = "sign") -> LinearSystem:
    """Toeplitz system ``sum_j C(l - j) g(j) = S(l)`` for ``l, j = 0..Lk``.

    ``matrix="sign"`` uses the sign autocorrelation ``<eps(t) eps(t + k)>``;
    ``matrix="return-sign"`` uses ``<r(t) eps(t + l - j)>`` instead, which
    equals ``S(j - l)``.
    """
    L = responses.L
    Lk = _kernel_lag(L, Lk)
    k = np.arange(Lk + 1)
    if matrix == "sign":
        if sign_autocorr.L < Lk:
            raise InputError("sign autocorrelation is shorter than the kernel")
        col = sign_autocorr.at(k)
        row = sign_autocorr.at(-k)
    elif matrix == "return-sign":
        col = responses.at(-k)
        row = responses.at(k)
    else:
        raise InputError(f"unknown TIM1 matrix variant {matrix!r}")
    M = linalg.toeplitz(col, row)
    return LinearSystem(ModelKind.TIM1, M, responses.at(k).copy(), ("g",), Lk, (), (col, row))


def _block_system(kind, blocks_of, entry, rhs_of, active, Lk):
    """Stack the blocks of labels in ``active``; ``entry(p, q)`` returns the
    ``(Lk+1, Lk+1)`` block coupling row label ``p`` to kernel label ``q``."""
    rows = []
    for p in active:
        rows.append(np.hstack([entry(p, q) for q in active]))
    M = np.vstack(rows)
    b = np.concatenate([rhs_of(p) for p in active])
    inactive = tuple(blocks_of[p] for p in LABELS if p not in active)
    return LinearSystem(kind, M, b, tuple(blocks_of[p] for p in active), Lk, inactive)


def assemble_tim2(responses: ResponseSet, correlations: CorrelationSet, Lk: int | None = None) -> LinearSystem:
    """Blocks ``C_pq(l - j)``; right-hand side ``S_p(l)``."""
    L = responses.L
    Lk = _kernel_lag(L, Lk)
    k = np.arange(Lk + 1)
    diff = k[:, None] - k[None, :]
    C2 = correlations.C2
    return _block_system(
        ModelKind.TIM2,
        {"n": "g_n", "c": "g_c"},
        lambda p, q: C2[p, q].at(diff),
        lambda p: responses.at(k, p).copy(),
        correlations.active,
        Lk,
    )


def _hdim2_system(kind, responses, correlations, Lk, entry):
    L = responses.L
    Lk = _kernel_lag(L, Lk)
    if "c" not in correlations.active:
        raise InputError("no price-changing events: HDIM2 kernels are undefined")
    k = np.arange(Lk + 1)
    sys_ = _block_system(
        kind,
        {"n": "kappa_nc", "c": "kappa_cc"},
        lambda p, q: entry(p, q, k),
        lambda p: responses.at(k, (p, "c")).copy(),
        correlations.active,
        Lk,
    )
    if "n" in correlations.active:
        # kappa_nc(0) is never used: pin it to zero through the first row
        M = sys_.matrix.copy()
        b = sys_.rhs.copy()
        M[0, :] = 0.0
        M[0, 0] = 1.0
        b[0] = 0.0
        sys_ = LinearSystem(kind, M, b, sys_.blocks, sys_.Lk, sys_.inactive)
    return sys_


def assemble_hdim2(responses: ResponseSet, correlations: CorrelationSet, Lk: int | None = None) -> LinearSystem:
    """Blocks ``C3_pq(l, j)`` from the three-point tensors; right-hand side
    ``S_pc(l)``; the row ``l = 0`` of the n block enforces ``kappa_nc(0) = 0``."""
    if correlations.C3 is None:
        raise InputError("three-point correlations were not estimated")
    C3 = correlations.C3
    return _hdim2_system(
        ModelKind.HDIM2, responses, correlations, Lk,
        lambda p, q, k: C3[p, q].at(-k[:, None], -k[None, :]),
    )


def assemble_hdim2_star(responses: ResponseSet, correlations: CorrelationSet,
                        Lk: int | None = None) -> LinearSystem:
    """HDIM2 with the three-point tensor replaced by two-point factors,
    ``C3_pq(l, j) ~ P(c) C_pq(l - j)``.

    The single entry where all three events coincide (``l = j = 0``) is
    taken exactly, ``C3_pq(0, 0) = 1[p = q = c] P(c)``; otherwise the
    factorised model would not even reproduce the memoryless limit on
    white, label-independent flow.
    """
    C2 = correlations.C2
    pc = correlations.p_c

    def entry(p, q, k):
        B = pc * C2[p, q].at(k[:, None] - k[None, :])
        B[0, 0] = C2["c", "c"].at(0) if p == q == "c" else 0.0
        return B

    return _hdim2_system(ModelKind.HDIM2STAR, responses, correlations, Lk, entry)


def assemble(kind, est: Estimates, Lk: int | None = None, tim1_matrix: str = "sign") -> LinearSystem:
    kind = ModelKind.parse(kind)
    if kind is ModelKind.TIM1:
        return assemble_tim1(est.responses, est.correlations.sign_autocorr(), Lk, tim1_matrix)
    if kind is ModelKind.TIM2:
        return assemble_tim2(est.responses, est.correlations, Lk)
    if kind is ModelKind.HDIM2:
        return assemble_hdim2(est.responses, est.correlations, Lk)
    if kind is ModelKind.HDIM2STAR:
        return assemble_hdim2_star(est.responses, est.correlations, Lk)
    raise InputError(f"{kind.value} is not calibrated through a linear system")


def solve_system(system: LinearSystem) -> tuple[dict, dict]:
    """Solve with the conditioning policy; return ``(kernels, info)``.

    A condition number at or beyond ``1/eps`` raises ``SingularSystemError``.
    Above ``1e10`` a ridge ``lambda = 1e-8 trace / dim`` is added to the
    diagonal and reported in ``info``.
    """
    M, b = system.matrix, system.rhs
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(b))):
        raise NumericalError("system contains non-finite entries")
    cond = float(np.linalg.cond(M)) if M.size else 1.0
    if not math.isfinite(cond) or cond >= 1.0 / np.finfo(float).eps:
        raise SingularSystemError(f"{system.kind.value} correlation matrix is singular", cond)
    ridge = 0.0
    if cond > COND_RIDGE:
        ridge = RIDGE_SCALE * float(np.trace(M)) / len(M)
        if not ridge > 0:
            raise SingularSystemError(f"{system.kind.value}: ridge fallback impossible", cond)
        log.warning("%s system ill-conditioned (%.3g); ridge %.3g", system.kind.value, cond, ridge)
        x = linalg.solve(M + ridge * np.eye(len(M)), b)
    elif system.toeplitz is not None:
        x = linalg.solve_toeplitz(system.toeplitz, b)
    else:
        x = linalg.solve(M, b)
    n = system.Lk + 1
    kernels = {name: x[i * n:(i + 1) * n].copy() for i, name in enumerate(system.blocks)}
    for name in system.inactive:
        kernels[name] = np.zeros(n)
    if "kappa_nc" in kernels:
        kernels["kappa_nc"][0] = 0.0
    return kernels, {"condition": cond, "ridge": ridge}


# --------------------------------------------------------------------------
# constant impact and smoothing


def estimate_cim2(data: InstrumentData) -> CalibratedModel:
    """``Delta_c`` = mean absolute return over price-changing events."""
    total = 0.0
    count = 0
    for day in data.days:
        c = day.is_change
        total += float(np.sum(np.abs(day.ret[c])))
        count += int(np.sum(c))
    if count == 0:
        raise InputError("no price-changing events: Delta_c undefined")
    delta = total / count
    if not delta > 0:
        raise NumericalError("price-changing events carry zero returns")
    return CalibratedModel.cim2(delta, n_days=len(data.days), n_c_events=count)


def smooth_kernel(kernel, cutoff: int = 10, centers_per_decade: float = 5.0) -> np.ndarray:
    """Replace lags ``> cutoff`` by a least-squares fit of multiquadric radial
    basis functions with log-spaced centers (plus a constant).

    The shape parameter equals the spacing of the centers in log-lag. Too
    short kernels are returned unchanged with a warning.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    out = kernel.copy()
    lags = np.arange(cutoff + 1, len(kernel))
    if len(kernel) <= cutoff + 1:
        return out
    x = np.log(lags)
    span = x[-1] - x[0]
    n_centers = max(3, int(math.ceil(centers_per_decade * span / math.log(10))))
    if len(lags) < n_centers + 2:
        warnings.warn("too few lags to smooth the kernel; returned unchanged", RuntimeWarning, stacklevel=2)
        return out
    centers = np.linspace(x[0], x[-1], n_centers)
    shape = centers[1] - centers[0]
    A = np.sqrt((x[:, None] - centers[None, :]) ** 2 + shape**2)
    A = np.hstack([A, np.ones((len(x), 1))])
    coef, *_ = np.linalg.lstsq(A, kernel[lags], rcond=None)
    out[lags] = A @ coef
    return out


# --------------------------------------------------------------------------
# end-to-end


def _fit_kernels(kind, est, Lk, tim1_matrix, smooth, cutoff):
    kernels, info = solve_system(assemble(kind, est, Lk, tim1_matrix))
    if smooth:
        kernels = {k: smooth_kernel(v, cutoff) for k, v in kernels.items()}
        if "kappa_nc" in kernels:
            kernels["kappa_nc"][0] = 0.0
    return kernels, info


def calibrate(data: InstrumentData, kind, L: int | None = None, kernel_lag: int | None = None,
              smooth: bool | None = None, tim1_matrix: str = "sign", stderr: bool = False,
              estimates: Estimates | None = None, segment_length: int | None = None,
              smoothing_cutoff: int = 10) -> CalibratedModel:
    """Calibrate one model kind on ``data``.

    ``smooth`` defaults to on for the HDIM2 variants and off otherwise.
    ``stderr=True`` adds leave-one-day-out jackknife errors of the kernels to
    ``meta["stderr"]``.
    """
    kind = ModelKind.parse(kind)
    if kind is ModelKind.CIM2:
        model = estimate_cim2(data)
        if stderr and len(data.days) > 1:
            vals = [estimate_cim2(data.subset(data.days[:k] + data.days[k + 1:])).delta_c
                    for k in range(len(data.days))]
            model.meta["stderr"] = {"delta_c": [_jackknife_se(np.array(vals)[:, None])[0]]}
        return model
    if smooth is None:
        smooth = kind in (ModelKind.HDIM2, ModelKind.HDIM2STAR)
    need3 = kind is ModelKind.HDIM2
    if estimates is None or (need3 and estimates.correlations.C3 is None) or (
        stderr and estimates.per_day is None
    ):
        estimates = estimate(data, L, three_point=need3, segment_length=segment_length, keep_days=stderr)
    Lk = _kernel_lag(estimates.L, kernel_lag)
    kernels, info = _fit_kernels(kind, estimates, Lk, tim1_matrix, smooth, smoothing_cutoff)
    meta = {
        "L_corr": estimates.L,
        "segment_length": estimates.segment_length,
        "n_days": estimates.n_days,
        "n_events": estimates.n_events,
        "smoothed": bool(smooth),
        "condition": info["condition"],
        "ridge": info["ridge"],
    }
    if kind is ModelKind.TIM1:
        meta["tim1_matrix"] = tim1_matrix
    if stderr:
        meta["stderr"] = {
            k: [float(x) for x in v]
            for k, v in kernel_stderr(kind, estimates, Lk, tim1_matrix, smooth, smoothing_cutoff).items()
        }
    return CalibratedModel(kind, kernels, meta)


def _jackknife_se(samples: np.ndarray) -> np.ndarray:
    n = len(samples)
    return np.sqrt((n - 1) / n * np.sum((samples - samples.mean(axis=0)) ** 2, axis=0))


def kernel_stderr(kind, est: Estimates, Lk: int, tim1_matrix: str = "sign", smooth: bool = False,
                  cutoff: int = 10) -> dict:
    """Leave-one-day-out jackknife standard errors of the kernels."""
    samples = []
    for k in range(est.n_days):
        kern, _ = _fit_kernels(kind, est.leave_one_out(k), Lk, tim1_matrix, smooth, cutoff)
        samples.append(kern)
    return {name: _jackknife_se(np.array([s[name] for s in samples])) for name in samples[0]}


def calibrate_many(data: InstrumentData, kinds, L: int | None = None, **kw) -> dict:
    """Calibrate several kinds sharing one set of estimates."""
    kinds = [ModelKind.parse(k) for k in kinds]
    need3 = ModelKind.HDIM2 in kinds
    est = None
    if any(k is not ModelKind.CIM2 for k in kinds):
        est = estimate(data, L, three_point=need3, segment_length=kw.pop("segment_length", None),
                       keep_days=kw.get("stderr", False))
    return {k.value: calibrate(data, k, estimates=est, **kw) for k in kinds}
