"""Trade records to labelled per-day event series.

Raw records carry ``timestamp_ms, price, bid, ask, volume, flags`` (and
optionally ``date``, in which case ``timestamp_ms`` counts from midnight;
otherwise it is a Unix epoch timestamp). Prices are handled as decimals so
that mid-prices compare exactly; logarithms are taken only when the events
are emitted.
"""
from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field, fields
from decimal import Decimal, InvalidOperation
from enum import IntEnum
from itertools import groupby
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from . import __version__
from .errors import InputError, UndefinedStatisticError

log = logging.getLogger(__name__)

RAW_COLUMNS = ("timestamp_ms", "price", "bid", "ask", "volume", "flags")
EVENT_COLUMNS = ("date", "t", "sign", "label", "log_mid", "ret", "volume")
_MS_PER_MIN = 60_000


class Label(IntEnum):
    n = 0  # mid-price unchanged by the trade
    c = 1  # mid-price changed


@dataclass(frozen=True)
class TradeEvent:
    timestamp: int
    sign: int
    label: Label
    log_mid: float
    ret: float
    volume: float


@dataclass(frozen=True, eq=False)
class DaySeries:
    """Events of one trading day, stored column-wise.

    ``label`` is 1 for price-changing (c) and 0 for non-changing (n) events.
    ``ret[t]`` is the log-return to the mid before the next event; for the
    last event it is measured against the day's final mid.
    """

    date: dt.date
    t: np.ndarray
    sign: np.ndarray
    label: np.ndarray
    log_mid: np.ndarray
    ret: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        conv = {
            "t": np.int64,
            "sign": np.int8,
            "label": np.int8,
            "log_mid": np.float64,
            "ret": np.float64,
            "volume": np.float64,
        }
        for name, dtype in conv.items():
            arr = np.asarray(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.t)
        if any(len(getattr(self, k)) != n for k in conv):
            raise InputError(f"{self.date}: column lengths differ")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_returns(cls, date, sign, label, ret, volume=None, log_mid0=0.0, t=None):
        """Build a day from model returns; the mid path is their cumulative sum."""
        ret = np.asarray(ret, dtype=np.float64)
        n = len(ret)
        log_mid = log_mid0 + np.concatenate([[0.0], np.cumsum(ret[:-1])])
        return cls(
            date=date,
            t=np.arange(n) if t is None else t,
            sign=sign,
            label=label,
            log_mid=log_mid,
            ret=ret,
            volume=np.ones(n) if volume is None else volume,
        )

    @property
    def is_change(self) -> np.ndarray:
        return self.label == Label.c

    def indicator(self, label: Label | str) -> np.ndarray:
        """0/1 float series of ``label == label``."""
        return (self.label == Label[label] if isinstance(label, str) else self.label == label).astype(
            np.float64
        )

    def labelled_sign(self, label: Label | str) -> np.ndarray:
        """``1[pi(t) = label] * eps(t)``."""
        return self.indicator(label) * self.sign

    def events(self) -> Iterator[TradeEvent]:
        for i in range(len(self)):
            yield TradeEvent(
                int(self.t[i]),
                int(self.sign[i]),
                Label(int(self.label[i])),
                float(self.log_mid[i]),
                float(self.ret[i]),
                float(self.volume[i]),
            )

    def replace(self, **changes) -> "DaySeries":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return DaySeries(**kw)

    def validate(self, check_labels: bool = True) -> None:
        """Raise ``InputError`` if an event-series invariant is broken."""
        if len(self) == 0:
            raise InputError(f"{self.date}: empty day")
        if not np.all(np.isin(self.sign, (-1, 1))):
            raise InputError(f"{self.date}: signs must be +-1")
        if not np.all(np.isin(self.label, (0, 1))):
            raise InputError(f"{self.date}: labels must be n or c")
        if np.any(self.volume < 0) or not np.all(np.isfinite(self.volume)):
            raise InputError(f"{self.date}: volumes must be finite and >= 0")
        if np.any(np.diff(self.t) <= 0):
            raise InputError(f"{self.date}: events not strictly ordered")
        if not (np.all(np.isfinite(self.log_mid)) and np.all(np.isfinite(self.ret))):
            raise InputError(f"{self.date}: non-finite prices or returns")
        tol = 8 * np.spacing(np.max(np.abs(self.log_mid)) + 1.0)
        if np.any(np.abs(np.diff(self.log_mid) - self.ret[:-1]) > tol):
            raise InputError(f"{self.date}: returns inconsistent with mid path")
        if check_labels:
            unchanged = self.label == Label.n
            if np.any((self.ret == 0) != unchanged):
                raise InputError(f"{self.date}: label n must coincide with zero return")
            if np.any(np.diff(self.log_mid)[unchanged[:-1]] != 0):
                raise InputError(f"{self.date}: mid moved after an n event")


@dataclass(frozen=True, eq=False)
class InstrumentData:
    instrument_id: str
    days: tuple
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "days", tuple(self.days))
        if not self.days:
            raise InputError(f"{self.instrument_id}: no trading days")

    @property
    def max_lag(self) -> int:
        """Events on the shortest day minus one."""
        return min(len(d) for d in self.days) - 1

    @property
    def n_events(self) -> int:
        return sum(len(d) for d in self.days)

    def subset(self, days) -> "InstrumentData":
        return InstrumentData(self.instrument_id, tuple(days), dict(self.report))

    def validate(self, check_labels: bool = True) -> None:
        for d in self.days:
            d.validate(check_labels=check_labels)


# --------------------------------------------------------------------------
# raw trade parsing


def _parse_hhmm(value) -> int | None:
    if value is None or value == "":
        return None
    h, m = str(value).split(":")
    return (int(h) * 60 + int(m)) * _MS_PER_MIN


@dataclass(frozen=True)
class IngestConfig:
    instrument_id: str = "UNKNOWN"
    trim_minutes: float = 30.0
    session_open: str | None = None  # "HH:MM", local exchange time
    session_close: str | None = None
    shortened_tolerance_minutes: float = 30.0
    utc_offset_minutes: int = 0
    irregular_flags: tuple | None = None  # None: any flag other than "" / "0"

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, str]) -> "IngestConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in cfg:
                continue
            raw = cfg[f.name]
            if f.name in ("trim_minutes", "shortened_tolerance_minutes"):
                kw[f.name] = float(raw)
            elif f.name == "utc_offset_minutes":
                kw[f.name] = int(raw)
            elif f.name == "irregular_flags":
                kw[f.name] = tuple(s.strip() for s in str(raw).split(",") if s.strip())
            else:
                kw[f.name] = str(raw)
        return cls(**kw)


@dataclass
class _Trade:
    date: dt.date
    tod: int
    price: Decimal
    mid2: Decimal  # bid + ask, i.e. twice the mid
    volume: Decimal
    sign: int = 0


def _decimal(value) -> Decimal:
    d = value if isinstance(value, Decimal) else Decimal(str(value).strip())
    return d


def _is_irregular(flag, cfg: IngestConfig) -> bool:
    flag = "" if flag is None else str(flag).strip()
    if cfg.irregular_flags is None:
        return flag not in ("", "0")
    return flag in cfg.irregular_flags


def _record_time(rec: Mapping, cfg: IngestConfig) -> tuple[dt.date, int]:
    ms = int(str(rec["timestamp_ms"]).strip())
    if rec.get("date") not in (None, ""):
        return dt.date.fromisoformat(str(rec["date"]).strip()), ms
    stamp = dt.datetime(1970, 1, 1) + dt.timedelta(milliseconds=ms + cfg.utc_offset_minutes * _MS_PER_MIN)
    midnight = dt.datetime(stamp.year, stamp.month, stamp.day)
    return stamp.date(), (stamp - midnight) // dt.timedelta(milliseconds=1)


def _log_mid(mid2: Decimal) -> float:
    return math.log(float(mid2 / 2))


def parse_trades(records: Iterable[Mapping], config: IngestConfig | None = None) -> InstrumentData:
    """Clean, sign, merge and label raw trades into per-day event series.

    Unparseable records are rejected and counted rather than raised; the
    counters are returned in ``InstrumentData.report``.
    """
    cfg = config or IngestConfig()
    report = {
        "records": 0,
        "rejected_malformed": 0,
        "rejected_nonfinite": 0,
        "rejected_irregular": 0,
        "at_mid": 0,
        "straddling_groups": 0,
        "merged_trades": 0,
        "trimmed_events": 0,
        "days_dropped_short_hours": 0,
        "days_dropped_empty": 0,
    }
    by_day: dict[dt.date, list[_Trade]] = {}
    for rec in records:
        report["records"] += 1
        try:
            date, tod = _record_time(rec, cfg)
            price, bid, ask, vol = (_decimal(rec[k]) for k in ("price", "bid", "ask", "volume"))
        except (KeyError, ValueError, TypeError, InvalidOperation, OverflowError):
            report["rejected_malformed"] += 1
            continue
        if not all(x.is_finite() for x in (price, bid, ask, vol)):
            report["rejected_nonfinite"] += 1
            continue
        if _is_irregular(rec.get("flags"), cfg) or bid <= 0 or ask < bid or vol < 0:
            report["rejected_irregular"] += 1
            continue
        by_day.setdefault(date, []).append(_Trade(date, tod, price, bid + ask, vol))

    if not by_day:
        _no_days(cfg, report)

    for trades in by_day.values():
        trades.sort(key=lambda tr: tr.tod)  # stable: file order within a millisecond

    open_ms = _parse_hhmm(cfg.session_open)
    close_ms = _parse_hhmm(cfg.session_close)
    tol = cfg.shortened_tolerance_minutes * _MS_PER_MIN
    firsts = {d: tr[0].tod for d, tr in by_day.items()}
    lasts = {d: tr[-1].tod for d, tr in by_day.items()}
    ref_open = open_ms if open_ms is not None else float(np.median(list(firsts.values())))
    ref_close = close_ms if close_ms is not None else float(np.median(list(lasts.values())))

    days = []
    for date in sorted(by_day):
        if firsts[date] > ref_open + tol or lasts[date] < ref_close - tol:
            report["days_dropped_short_hours"] += 1
            log.warning("%s: shortened trading hours, day dropped", date)
            continue
        day = _build_day(
            date,
            by_day[date],
            open_ms if open_ms is not None else firsts[date],
            close_ms if close_ms is not None else lasts[date],
            cfg,
            report,
        )
        if day is None:
            report["days_dropped_empty"] += 1
            log.warning("%s: no events left after cleaning, day dropped", date)
            continue
        days.append(day)
    if not days:
        _no_days(cfg, report)
    return InstrumentData(cfg.instrument_id, tuple(days), report)


def _no_days(cfg, report):
    raise InputError(f"{cfg.instrument_id}: no usable trading day in input ({report})")


def _build_day(date, trades, open_ms, close_ms, cfg, report) -> DaySeries | None:
    signed = []
    for tr in trades:
        twice = 2 * tr.price
        if twice == tr.mid2:
            report["at_mid"] += 1
            continue
        tr.sign = 1 if twice > tr.mid2 else -1
        signed.append(tr)

    # events: (tod, sign, mid2, volume, index of last constituent trade)
    events = []
    for tod, grp in groupby(enumerate(signed), key=lambda it: it[1].tod):
        grp = list(grp)
        signs = {tr.sign for _, tr in grp}
        if len(signs) > 1:
            report["straddling_groups"] += 1
            continue
        report["merged_trades"] += len(grp) - 1
        first = grp[0][1]
        events.append((tod, first.sign, first.mid2, sum(tr.volume for _, tr in grp), grp[-1][1]))

    lo = open_ms + cfg.trim_minutes * _MS_PER_MIN
    hi = close_ms - cfg.trim_minutes * _MS_PER_MIN
    kept = [e for e in events if lo <= e[0] <= hi]
    report["trimmed_events"] += len(events) - len(kept)
    if not kept:
        return None

    # final mid: first quote recorded after the last kept event
    last_trade = kept[-1][4]
    pos = next(i for i, tr in enumerate(trades) if tr is last_trade)
    final_mid2 = trades[pos + 1].mid2 if pos + 1 < len(trades) else kept[-1][2]

    mids = [e[2] for e in kept] + [final_mid2]
    logs = {m: _log_mid(m) for m in set(mids)}
    log_mid = np.array([logs[m] for m in mids])
    label = np.array([mids[i + 1] != mids[i] for i in range(len(kept))], dtype=np.int8)
    return DaySeries(
        date=date,
        t=[e[0] for e in kept],
        sign=[e[1] for e in kept],
        label=label,
        log_mid=log_mid[:-1],
        ret=np.diff(log_mid),
        volume=[float(e[3]) for e in kept],
    )


def read_raw_csv(path) -> tuple[list[dict], dict]:
    """Read raw trade records; raises ``InputError`` on missing columns."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    if not rows:
        raise InputError(f"{path}: empty file")
    reader = csv.DictReader(rows)
    header = reader.fieldnames or []
    missing = [c for c in RAW_COLUMNS if c not in header]
    if missing:
        raise InputError(f"{path}: missing columns {missing}")
    return list(reader), {"columns": header}


# --------------------------------------------------------------------------
# canonical event files


def write_events_csv(path, data: InstrumentData, extra: Mapping[str, list] | None = None) -> None:
    """Write the canonical event format; ``extra`` adds per-day columns."""
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        fh.write(f"# proplab {__version__} instrument={data.instrument_id}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(EVENT_COLUMNS) + list(extra))
        for k, day in enumerate(data.days):
            iso = day.date.isoformat()
            cols = [extra[name][k] for name in extra]
            for i in range(len(day)):
                w.writerow(
                    [
                        iso,
                        int(day.t[i]),
                        int(day.sign[i]),
                        Label(int(day.label[i])).name,
                        repr(float(day.log_mid[i])),
                        repr(float(day.ret[i])),
                        repr(float(day.volume[i])),
                    ]
                    + [repr(float(c[i])) for c in cols]
                )


def read_events_csv(path, instrument_id: str | None = None) -> InstrumentData:
    """Read a canonical event file (extra columns are ignored)."""
    path = Path(path)
    header_id = None
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("instrument="):
                        header_id = tok.split("=", 1)[1]
                continue
            lines.append(line)
    if not lines:
        raise InputError(f"{path}: empty file")
    reader = csv.DictReader(lines)
    missing = [c for c in EVENT_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise InputError(f"{path}: missing columns {missing}")
    per_day: dict[str, list] = {}
    try:
        for row in reader:
            per_day.setdefault(row["date"], []).append(
                (
                    int(row["t"]),
                    int(row["sign"]),
                    int(Label[row["label"]]),
                    float(row["log_mid"]),
                    float(row["ret"]),
                    float(row["volume"]),
                )
            )
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: malformed event row ({exc})") from exc
    days = []
    for iso in sorted(per_day):
        cols = list(zip(*per_day[iso]))
        days.append(
            DaySeries(dt.date.fromisoformat(iso), cols[0], cols[1], cols[2], cols[3], cols[4], cols[5])
        )
    return InstrumentData(instrument_id or header_id or path.stem, tuple(days))


# --------------------------------------------------------------------------
# statistics and splits


def move_pair_counts(data: InstrumentData) -> tuple[int, int]:
    """Continuations and alternations between consecutive non-zero moves."""
    n_cont = n_alt = 0
    for day in data.days:
        moves = np.sign(day.ret[day.ret != 0])
        prod = moves[1:] * moves[:-1]
        n_cont += int(np.sum(prod > 0))
        n_alt += int(np.sum(prod < 0))
    return n_cont, n_alt


def compute_eta(data: InstrumentData) -> float:
    """Microstructural parameter ``eta = N_c / (2 N_a)``.

    Zero returns are skipped when pairing moves; pairs never span days.
    """
    n_cont, n_alt = move_pair_counts(data)
    if n_cont + n_alt == 0:
        raise UndefinedStatisticError("eta needs at least two price moves within a day")
    if n_alt == 0:
        raise UndefinedStatisticError("eta undefined: no alternating price moves")
    return n_cont / (2 * n_alt)


def split_odd_even(data: InstrumentData) -> tuple[InstrumentData, InstrumentData]:
    """Split by day position: (1st, 3rd, ...) and (2nd, 4th, ...)."""
    if len(data.days) < 2:
        raise InputError(
            "odd/even split needs at least two days; use an explicit in-sample run instead"
        )
    return data.subset(data.days[0::2]), data.subset(data.days[1::2])
