"""Synthetic order flows with known ground-truth impact.

Signs are thresholded Gaussian noise whose correlation is chosen so that the
*signs* have the autocorrelation of fractional Gaussian noise with the
requested Hurst exponent. Labels are drawn from a change probability that
depends on the trailing mean sign, and returns come from a propagator model.
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_ordered
from .errors import InputError
from .events import DaySeries, InstrumentData, Label
from .models import CalibratedModel, ModelKind
from .simulate import predict_day

__all__ = [
    "ChangeProb",
    "FlowSpec",
    "fgn_autocorr",
    "gen_labels",
    "gen_returns",
    "gen_sign_flow",
    "generate",
    "power_law_model",
    "trailing_mean",
]

# independent random streams per day
_SIGNS, _LABELS, _NOISE, _VOLUME = range(4)
_OPEN_MS = 10 * 3_600_000  # first event at 10:00
_SPAN_MS = 5 * 3_600_000 + 30 * 60_000


def fgn_autocorr(H: float, n: int) -> np.ndarray:
    """Autocorrelation of fractional Gaussian noise at lags ``0..n-1``."""
    k = np.arange(n, dtype=np.float64)
    h2 = 2.0 * H
    return 0.5 * (np.abs(k + 1) ** h2 - 2 * k**h2 + np.abs(k - 1) ** h2)


def _embedding_sqrt_eigs(rho: np.ndarray) -> np.ndarray:
    """Square roots of the circulant-embedding eigenvalues for lags
    ``0..n`` (``len(rho) = n + 1``), scaled for a length-``2n`` FFT."""
    row = np.concatenate([rho, rho[-2:0:-1]])
    lam = np.fft.fft(row).real
    if lam.min() < -1e-8 * lam.max():
        raise InputError("unreachable persistence target: circulant embedding is not positive")
    return np.sqrt(np.clip(lam, 0.0, None) / len(row))


def _gaussian_with_autocorr(rho_ext: np.ndarray, n: int, rng) -> np.ndarray:
    """Stationary Gaussian path of length ``n`` whose autocorrelation is
    ``rho_ext[:n]`` (Davies-Harte; ``rho_ext`` holds lags ``0..n``)."""
    sq = _embedding_sqrt_eigs(rho_ext)
    z = rng.standard_normal(len(sq)) + 1j * rng.standard_normal(len(sq))
    return np.fft.fft(sq * z).real[:n]


def _sign_gauss_corr(H: float, n: int) -> np.ndarray:
    """Gaussian correlation whose thresholded signs follow fGn, lags ``0..n``."""
    return np.sin(0.5 * np.pi * fgn_autocorr(H, n + 1))


@dataclass(frozen=True)
class ChangeProb:
    """Probability that an event changes the mid, given the local mean sign.

    ``constant``: ``P(c) = p0``. ``pinning``: ``P(c) = p0 (1 - |m|^gamma)``
    clipped to ``[floor, 1]``, so strongly one-sided flow rarely moves the
    price.
    """

    kind: str = "pinning"
    p0: float = 0.4
    gamma: float = 2.0
    floor: float = 0.01

    def __post_init__(self):
        if self.kind not in ("constant", "pinning"):
            raise InputError(f"unknown change probability {self.kind!r}")
        if not 0 < self.p0 <= 1:
            raise InputError("p0 must lie in (0, 1]")
        if self.kind == "pinning" and not (self.gamma > 0 and 0 < self.floor <= 1):
            raise InputError("pinning needs gamma > 0 and floor in (0, 1]")

    def __call__(self, imbalance) -> np.ndarray:
        m = np.asarray(imbalance, dtype=np.float64)
        if self.kind == "constant":
            return np.full(m.shape, self.p0)
        return np.clip(self.p0 * (1.0 - np.abs(m) ** self.gamma), self.floor, 1.0)

    @classmethod
    def parse(cls, text) -> "ChangeProb":
        """``"0.3"``, ``"constant:0.3"``, ``"pinning"`` or ``"pinning:p0=0.4,gamma=2"``."""
        if isinstance(text, cls):
            return text
        s = str(text).strip()
        try:
            return cls("constant", float(s))
        except ValueError:
            pass
        kind, _, rest = s.partition(":")
        kind = kind.strip().lower()
        if kind == "constant":
            return cls("constant", float(rest))
        kw = {}
        for item in filter(None, (x.strip() for x in rest.split(","))):
            key, _, value = item.partition("=")
            if key not in ("p0", "gamma", "floor"):
                raise InputError(f"unknown change-probability parameter {key!r}")
            kw[key] = float(value)
        return cls(kind, **kw)

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant:{self.p0!r}"
        return f"pinning:p0={self.p0!r},gamma={self.gamma!r},floor={self.floor!r}"


def power_law_model(kind, L: int = 64, exponent: float = 0.5, amplitude: float = 1e-4,
                    n_ratio: float = 0.3, delta_c: float = 5e-5) -> CalibratedModel:
    """Ground-truth model with kernels ``amplitude * (1 + j)^-exponent``.

    Kernels of non-price-changing events are scaled by ``n_ratio``; the
    HDIM2 constraint ``kappa_nc(0) = 0`` is applied.
    """
    kind = ModelKind.parse(kind)
    g = amplitude * (1.0 + np.arange(L + 1)) ** -exponent
    meta = {"generator": "power_law", "exponent": exponent, "amplitude": amplitude}
    if kind is ModelKind.CIM2:
        return CalibratedModel.cim2(delta_c, generator="constant")
    if kind is ModelKind.TIM1:
        return CalibratedModel(kind, {"g": g}, meta)
    if kind is ModelKind.TIM2:
        return CalibratedModel(kind, {"g_n": n_ratio * g, "g_c": g}, meta)
    kn = n_ratio * g
    kn[0] = 0.0
    return CalibratedModel(kind, {"kappa_nc": kn, "kappa_cc": g}, meta)


@dataclass(frozen=True)
class FlowSpec:
    T: int = 50_000
    days: int = 20
    sign_memory: float = 0.5
    change_prob: ChangeProb = field(default_factory=ChangeProb)
    generator_model: CalibratedModel = field(default_factory=lambda: CalibratedModel.cim2(5e-5))
    noise: float = 0.0
    seed: int = 0
    window: int = 50
    instrument_id: str = "SYNTH"
    price0: float = 100.0
    volume_sigma: float = 1.0

    def __post_init__(self):
        if self.T < 2 or self.days < 1:
            raise InputError("need T >= 2 events on at least one day")
        if not 0 < self.sign_memory < 1:
            raise InputError("sign_memory must lie in (0, 1)")
        if self.noise < 0 or self.window < 1:
            raise InputError("noise must be >= 0 and window >= 1")
        object.__setattr__(self, "change_prob", ChangeProb.parse(self.change_prob))

    def rng(self, day: int, stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.seed), int(day), stream]))

    def describe(self) -> dict:
        return {
            "T": self.T,
            "days": self.days,
            "sign_memory": self.sign_memory,
            "change_prob": self.change_prob.describe(),
            "generator": self.generator_model.kind.value,
            "noise": self.noise,
            "seed": self.seed,
            "window": self.window,
        }


def _day_signs(spec: FlowSpec, day: int, rho_g=None) -> np.ndarray:
    rng = spec.rng(day, _SIGNS)
    if spec.sign_memory == 0.5:
        return rng.choice(np.array([-1, 1], dtype=np.int8), spec.T)
    if rho_g is None:
        rho_g = _sign_gauss_corr(spec.sign_memory, spec.T)
    x = _gaussian_with_autocorr(rho_g, spec.T, rng)
    return np.where(x >= 0, 1, -1).astype(np.int8)


def gen_sign_flow(spec: FlowSpec) -> list:
    """+-1 signs per day with fractional-noise sign autocorrelation.

    A Gaussian with correlation ``sin(pi/2 rho)`` thresholded at zero has
    sign correlation ``rho`` (arcsine law).
    """
    rho_g = None
    if spec.sign_memory != 0.5:
        rho_g = _sign_gauss_corr(spec.sign_memory, spec.T)
        _embedding_sqrt_eigs(rho_g)  # fail early
    return map_ordered(lambda d: _day_signs(spec, d, rho_g), range(spec.days))


def trailing_mean(x, window: int) -> np.ndarray:
    """Mean of ``x`` over the last ``window`` points including ``t``,
    truncated at the start of the series."""
    x = np.asarray(x, dtype=np.float64)
    cs = np.concatenate([[0.0], np.cumsum(x)])
    t = np.arange(1, len(x) + 1)
    lo = np.maximum(t - window, 0)
    return (cs[t] - cs[lo]) / (t - lo)


def gen_labels(signs, change_prob, rng: np.random.Generator, window: int = 50) -> np.ndarray:
    """Labels drawn as Bernoulli(change_prob(trailing mean sign))."""
    p = np.asarray(ChangeProb.parse(change_prob)(trailing_mean(signs, window)))
    if np.any(~(p > 0)) or np.any(p > 1):
        raise InputError("change probability must lie in (0, 1]")
    return (rng.random(len(p)) < p).astype(np.int8)


def gen_returns(signs, labels, model: CalibratedModel, noise: float = 0.0,
                rng: np.random.Generator | None = None, noise_on: str = "c") -> np.ndarray:
    """Model returns plus optional Gaussian noise on price-changing events."""
    if noise_on != "c":
        raise InputError("noise is only allowed on price-changing events")
    r = predict_day(model, signs, labels)
    if noise > 0:
        if rng is None:
            raise InputError("noise requires a random generator")
        is_c = np.asarray(labels) == Label.c
        r = r + noise * rng.standard_normal(len(r)) * is_c
    return r


def _day_date(day: int) -> dt.date:
    return np.busday_offset("2020-01-02", day, roll="forward").astype(dt.date)


def generate(spec: FlowSpec) -> InstrumentData:
    """Full synthetic data set; byte-identical for identical specs."""
    model = spec.generator_model
    consistent = model.kind in (ModelKind.HDIM2, ModelKind.HDIM2STAR, ModelKind.CIM2)
    step = max(1, _SPAN_MS // spec.T)
    rho_g = None
    if spec.sign_memory != 0.5:
        rho_g = _sign_gauss_corr(spec.sign_memory, spec.T)

    def one(d):
        signs = _day_signs(spec, d, rho_g)
        labels = gen_labels(signs, spec.change_prob, spec.rng(d, _LABELS), spec.window)
        ret = gen_returns(signs, labels, model, spec.noise, spec.rng(d, _NOISE))
        if consistent and np.any(ret[labels == Label.c] == 0):
            raise InputError("generator produced a zero return on a price-changing event")
        volume = spec.rng(d, _VOLUME).lognormal(math.log(100.0), spec.volume_sigma, spec.T)
        day = DaySeries.from_returns(
            _day_date(d), signs, labels, ret, volume=volume,
            log_mid0=math.log(spec.price0), t=_OPEN_MS + step * np.arange(spec.T),
        )
        day.validate(check_labels=consistent)
        return day

    days = map_ordered(one, range(spec.days))
    report = {"synthetic": spec.describe(), "label_consistent": consistent}
    return InstrumentData(spec.instrument_id, tuple(days), report)
