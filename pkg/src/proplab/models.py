"""Calibrated propagator models and their JSON form.

Kernel names per kind::

    tim1       g
    tim2       g_n, g_c
    hdim2      kappa_nc, kappa_cc     (kappa_nc[0] == 0)
    hdim2star  kappa_nc, kappa_cc
    cim2       delta_c                (one value)

For the history-dependent models only kernels switched on by a price-changing
current event are kept, since the returns of n events are zero.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InputError

__all__ = ["CalibratedModel", "ModelKind", "KERNEL_NAMES"]


class ModelKind(str, Enum):
    TIM1 = "tim1"
    TIM2 = "tim2"
    HDIM2 = "hdim2"
    HDIM2STAR = "hdim2star"
    CIM2 = "cim2"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InputError(f"unknown model kind {value!r}") from None


KERNEL_NAMES = {
    ModelKind.TIM1: ("g",),
    ModelKind.TIM2: ("g_n", "g_c"),
    ModelKind.HDIM2: ("kappa_nc", "kappa_cc"),
    ModelKind.HDIM2STAR: ("kappa_nc", "kappa_cc"),
    ModelKind.CIM2: ("delta_c",),
}


@dataclass(eq=False)
class CalibratedModel:
    kind: ModelKind
    kernels: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        names = KERNEL_NAMES[self.kind]
        if set(self.kernels) != set(names):
            raise InputError(f"{self.kind.value} needs kernels {names}, got {sorted(self.kernels)}")
        ks = {k: np.asarray(self.kernels[k], dtype=np.float64) for k in names}
        for k, v in ks.items():
            if v.ndim != 1 or len(v) == 0 or not np.all(np.isfinite(v)):
                raise InputError(f"kernel {k} must be a finite non-empty 1-D array")
        if len({len(v) for v in ks.values()}) != 1:
            raise InputError("kernels of one model must share their length")
        if self.kind is ModelKind.CIM2:
            if len(ks["delta_c"]) != 1 or not ks["delta_c"][0] > 0:
                raise InputError("delta_c must be a single positive number")
        self.kernels = ks

    @property
    def L(self) -> int:
        """Largest kernel lag (0 for the memoryless model)."""
        return len(next(iter(self.kernels.values()))) - 1

    @property
    def delta_c(self) -> float:
        return float(self.kernels["delta_c"][0])

    @classmethod
    def cim2(cls, delta_c: float, **meta) -> "CalibratedModel":
        return cls(ModelKind.CIM2, {"delta_c": [delta_c]}, dict(meta))

    def integrated(self) -> dict:
        """Cumulative kernels ``G(l) = sum_{l' <= l} g(l')``."""
        return {k: np.cumsum(v) for k, v in self.kernels.items()}

    def scaled(self, factor: float) -> "CalibratedModel":
        return CalibratedModel(self.kind, {k: v * factor for k, v in self.kernels.items()}, dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "L": self.L,
            "kernels": {k: [float(x) for x in v] for k, v in self.kernels.items()},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d) -> "CalibratedModel":
        try:
            model = cls(d["kind"], d["kernels"], dict(d.get("meta", {})))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed model description: {exc}") from None
        if "L" in d and int(d["L"]) != model.L:
            raise InputError(f"model declares L={d['L']} but kernels have L={model.L}")
        return model

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "CalibratedModel":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise InputError(f"model file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d)
