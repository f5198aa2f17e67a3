"""Run calibrated models as dynamical systems on an order flow.

Every day starts from an empty history: the convolutions only see events of
the same day.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from ._parallel import map_ordered
from .errors import InputError
from .events import DaySeries, InstrumentData, Label, write_events_csv
from .models import CalibratedModel, ModelKind
from .spectral import SegmentedSpectra

__all__ = [
    "BiasEstimate",
    "PredictedSeries",
    "calibration_bias",
    "predict_day",
    "prediction_error",
    "run_model",
    "write_predicted_csv",
]


def predict_day(model: CalibratedModel, sign, label) -> np.ndarray:
    """Model returns for one day given signs (+-1) and labels (0 = n, 1 = c)."""
    eps = np.asarray(sign, dtype=np.float64)
    is_c = np.asarray(label) == Label.c
    if eps.shape != is_c.shape:
        raise InputError("signs and labels must be aligned")
    k = model.kernels
    kind = model.kind
    if kind is ModelKind.CIM2:
        return model.delta_c * eps * is_c
    if kind is ModelKind.TIM1:
        return kernels.causal_convolve(eps, k["g"])
    x_c = eps * is_c
    x_n = eps - x_c
    if kind is ModelKind.TIM2:
        return kernels.causal_convolve(x_n, k["g_n"]) + kernels.causal_convolve(x_c, k["g_c"])
    if kind in (ModelKind.HDIM2, ModelKind.HDIM2STAR):
        r = kernels.causal_convolve(x_n, k["kappa_nc"]) + kernels.causal_convolve(x_c, k["kappa_cc"])
        return np.where(is_c, r, 0.0)
    raise InputError(f"unknown model kind {kind!r}")


@dataclass(frozen=True, eq=False)
class PredictedSeries:
    """Predicted returns, one array per source day."""

    kind: ModelKind
    dates: tuple
    days: tuple

    def __len__(self) -> int:
        return len(self.days)

    def as_instrument(self, flow: InstrumentData) -> InstrumentData:
        """The source flow with its returns replaced by the predictions."""
        self._check(flow)
        out = []
        for day, r in zip(flow.days, self.days):
            out.append(DaySeries.from_returns(
                day.date, day.sign, day.label, r, volume=day.volume,
                log_mid0=day.log_mid[0], t=day.t,
            ))
        return flow.subset(out)

    def _check(self, flow: InstrumentData) -> None:
        if len(flow.days) != len(self.days) or any(
            len(d) != len(r) for d, r in zip(flow.days, self.days)
        ):
            raise InputError("predictions are not aligned with the flow")


def run_model(model: CalibratedModel, flow: DaySeries | InstrumentData) -> PredictedSeries:
    days = (flow,) if isinstance(flow, DaySeries) else flow.days

    def one(day):
        r = predict_day(model, day.sign, day.label)
        r.setflags(write=False)
        return r

    preds = map_ordered(one, days)
    return PredictedSeries(model.kind, tuple(d.date for d in days), tuple(preds))


def prediction_error(flow: DaySeries | InstrumentData, pred: PredictedSeries) -> list:
    """``nu(t) = r(t) - r_hat(t)`` per day."""
    days = (flow,) if isinstance(flow, DaySeries) else flow.days
    if len(days) != len(pred.days):
        raise InputError("predictions are not aligned with the flow")
    out = []
    for day, r in zip(days, pred.days):
        if len(day) != len(r):
            raise InputError(f"{day.date}: {len(r)} predictions for {len(day)} events")
        out.append(day.ret - r)
    return out


@dataclass(frozen=True)
class BiasEstimate:
    """Calibration bias over lags ``l = -L..L``.

    ``values[p]`` is ``<nu(t) x_p(t - l)>`` with ``x_p = 1[pi = p] eps``;
    ``values[(p, q)]`` additionally restricts ``t`` to events labelled
    ``q``, so ``values[p] = values[(p, "n")] + values[(p, "c")]``.
    ``stderr`` holds standard errors of the equal-weight day averages.
    """

    lags: np.ndarray
    values: dict
    stderr: dict

    @property
    def L(self) -> int:
        return (len(self.lags) - 1) // 2

    def zscores(self, key) -> np.ndarray:
        v = self.values[key]
        se = self.stderr[key]
        # entries that vanish identically (up to FFT round-off) carry no error bar
        tiny = 1e-12 * max(float(np.max(se, initial=0.0)), np.finfo(float).tiny)
        zero = np.abs(v) <= 1e-10 * max(float(np.max(np.abs(v), initial=0.0)), np.finfo(float).tiny)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > tiny, v / se, np.copysign(np.inf, v))
        z = np.where(zero & (se <= tiny), 0.0, z)
        return np.where(np.isnan(se), np.nan, z)

    def max_abs_z(self, lo: int, hi: int, keys=None) -> tuple[float, object, int]:
        """Largest ``|z|`` over lags ``lo..hi``: ``(|z|, key, lag)``."""
        keys = list(self.values) if keys is None else keys
        best = (0.0, None, lo)
        sel = slice(lo + self.L, hi + self.L + 1)
        for k in keys:
            z = np.nan_to_num(np.abs(self.zscores(k)[sel]), nan=-1.0)
            i = int(np.argmax(z))
            if z[i] > best[0]:
                best = (float(z[i]), k, lo + i)
        return best


BIAS_KEYS = ("n", "c", ("n", "n"), ("n", "c"), ("c", "n"), ("c", "c"))


def calibration_bias(nu, flow: InstrumentData, L: int, segment_length: int | None = None) -> BiasEstimate:
    """Cross-correlation between prediction error and lagged labelled signs.

    Days are estimated whole unless ``segment_length`` is given.
    """
    if len(nu) != len(flow.days):
        raise InputError("error series are not aligned with the flow")
    if L < 0 or L > flow.max_lag:
        raise InputError(f"lag bound {L} outside [0, {flow.max_lag}]")

    def one(pair):
        day, v = pair
        v = np.asarray(v, dtype=np.float64)
        if len(v) != len(day):
            raise InputError(f"{day.date}: error series length mismatch")
        ic = day.indicator(Label.c)
        sp = SegmentedSpectra(
            {"x_n": day.labelled_sign(Label.n), "x_c": day.labelled_sign(Label.c),
             "nu_n": v * (1.0 - ic), "nu_c": v * ic},
            L, None if segment_length is None else max(int(segment_length), L + 1),
        )
        out = {(p, q): sp.xcorr2(f"x_{p}", f"nu_{q}").values for p in "nc" for q in "nc"}
        for p in "nc":
            out[p] = out[p, "n"] + out[p, "c"]
        return out

    per_day = map_ordered(one, list(zip(flow.days, nu)))
    values, stderr = {}, {}
    for key in BIAS_KEYS:
        arr = np.array([d[key] for d in per_day])
        values[key] = arr.mean(axis=0)
        if len(arr) > 1:
            stderr[key] = arr.std(axis=0, ddof=1) / np.sqrt(len(arr))
        else:
            stderr[key] = np.full(arr.shape[1], np.nan)
    return BiasEstimate(np.arange(-L, L + 1), values, stderr)


def write_predicted_csv(path, flow: InstrumentData, predictions: dict) -> None:
    """Canonical event columns plus one ``r_hat_<kind>`` column per model."""
    extra = {}
    for name, pred in predictions.items():
        pred._check(flow)
        extra[f"r_hat_{name}"] = list(pred.days)
    write_events_csv(path, flow, extra)
