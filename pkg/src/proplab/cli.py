"""Command-line interface.

Subcommands: ``ingest``, ``synth``, ``calibrate``, ``simulate``,
``diagnose`` and ``report``. Options can also come from an INI file given
with ``--config``; each subcommand reads the section of the same name and
command-line flags win over it. Exit codes: 0 ok, 2 input or configuration
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError, NumericalError, SingularSystemError

log = logging.getLogger("proplab")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
METRICS = ("impact", "signature", "bias", "response", "correlation")


# --------------------------------------------------------------------------
# option handling


class Options:
    """Command-line values layered over a config section and defaults."""

    def __init__(self, args: argparse.Namespace, section: dict):
        self._args = args
        self._section = section

    def get(self, name: str, default=None, conv=None):
        value = getattr(self._args, name, None)
        key = name.lower()  # configparser folds keys to lower case
        if value is None and key in self._section:
            value = self._section[key]
            if conv is not None:
                try:
                    value = conv(value)
                except ValueError as exc:
                    raise InputError(f"config value {name}={self._section[key]!r}: {exc}") from None
        if value is None:
            return default
        return value


def _read_config(path, command: str) -> dict:
    if path is None:
        return {}
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    if not cp.has_section(command):
        return {}
    return {k.replace("-", "_"): v for k, v in cp.items(command)}


def _int_list(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    try:
        vals = [int(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError:
        raise InputError(f"expected a comma-separated list of integers, got {text!r}") from None
    if not vals:
        raise InputError("empty list")
    return vals


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _kinds(text) -> list:
    from .models import ModelKind

    if text is None:
        return []
    items = [s.strip() for s in str(text).split(",") if s.strip()]
    if "all" in items:
        return list(ModelKind)
    return [ModelKind.parse(s) for s in items]


def _select_days(data, split: str):
    from .events import split_odd_even

    if split == "none":
        return data
    odd, even = split_odd_even(data)
    if split == "odd":
        return odd
    if split == "even":
        return even
    raise InputError(f"unknown split {split!r} (odd, even or none)")


def _load_models(paths, directory, kinds) -> dict:
    from .models import CalibratedModel

    files = [Path(p) for p in (paths or [])]
    if directory is not None:
        d = Path(directory)
        if not d.is_dir():
            raise InputError(f"model directory not found: {d}")
        if kinds:
            files += [d / f"{k.value}.json" for k in kinds]
        else:
            files += sorted(p for p in d.glob("*.json") if p.stem != "calibration")
    if not files:
        raise InputError("no model given (use --models DIR or --model-file)")
    models = {}
    for f in files:
        m = CalibratedModel.from_json(f)
        models[m.kind.value] = m
    return models


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path, obj) -> None:
    from .diagnostics import write_json

    write_json(path, obj)


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args, opt: Options) -> int:
    from .events import IngestConfig, parse_trades, read_raw_csv, write_events_csv

    section = dict(opt._section)
    for name in ("instrument_id", "trim_minutes", "session_open", "session_close"):
        v = getattr(args, name, None)
        if v is not None:
            section[name] = str(v)
    try:
        cfg = IngestConfig.from_mapping(section)
    except (TypeError, ValueError) as exc:
        raise InputError(f"ingest configuration: {exc}") from None
    records, _ = read_raw_csv(args.input)
    data = parse_trades(records, cfg)
    write_events_csv(args.output, data)
    summary = {"instrument": data.instrument_id, "days": len(data.days), "events": data.n_events,
               "report": data.report}
    _write_json(Path(args.output).with_suffix(".summary.json"), summary)
    for k, v in sorted(data.report.items()):
        print(f"{k}: {v}")
    print(f"wrote {data.n_events} events on {len(data.days)} days to {args.output}")
    return EXIT_OK


def cmd_synth(args, opt: Options) -> int:
    from .events import write_events_csv
    from .synth import FlowSpec, generate, power_law_model

    kind = opt.get("generator", "cim2")
    truth = power_law_model(
        kind,
        L=opt.get("kernel_length", 64, int),
        exponent=opt.get("exponent", 0.5, float),
        amplitude=opt.get("amplitude", 1e-4, float),
        delta_c=opt.get("delta_c", 5e-5, float),
    )
    spec = FlowSpec(
        T=opt.get("events", 50_000, int),
        days=opt.get("days", 20, int),
        sign_memory=opt.get("sign_memory", 0.5, float),
        change_prob=opt.get("change_prob", "pinning"),
        generator_model=truth,
        noise=opt.get("noise", 0.0, float),
        seed=opt.get("seed", 0, int),
        window=opt.get("window", 50, int),
        instrument_id=opt.get("instrument_id", "SYNTH"),
    )
    data = generate(spec)
    write_events_csv(args.output, data)
    truth.meta.update(spec.describe())
    truth.to_json(Path(args.output).with_suffix(".truth.json"))
    print(f"wrote {data.n_events} synthetic events on {len(data.days)} days to {args.output}")
    return EXIT_OK


def cmd_calibrate(args, opt: Options) -> int:
    from .calibration import calibrate_many
    from .events import read_events_csv

    data = read_events_csv(args.input)
    split = opt.get("split", "odd")
    data = _select_days(data, split)
    kinds = _kinds(opt.get("model", "all"))
    smooth = opt.get("smooth", None, _bool)
    out = _out_dir(args.output)
    try:
        models = calibrate_many(
            data, kinds,
            L=opt.get("max_lag", None, int),
            kernel_lag=opt.get("kernel_lag", None, int),
            smooth=smooth,
            tim1_matrix=opt.get("tim1_matrix", "sign"),
            stderr=opt.get("stderr", False, _bool),
            segment_length=opt.get("segment_length", None, int),
        )
    except SingularSystemError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report = {"split": split, "days": len(data.days), "events": data.n_events, "models": {}}
    for name, m in models.items():
        m.meta["split"] = split
        m.to_json(out / f"{name}.json")
        report["models"][name] = {k: m.meta.get(k) for k in ("condition", "ridge", "L_corr", "smoothed")}
        cond = m.meta.get("condition")
        print(f"{name}: L={m.L}" + (f" condition={cond:.3g}" if cond is not None else ""))
    _write_json(out / "calibration.json", report)
    return EXIT_OK


def cmd_simulate(args, opt: Options) -> int:
    from .events import read_events_csv
    from .simulate import run_model, write_predicted_csv

    data = _select_days(read_events_csv(args.input), opt.get("split", "none"))
    models = _load_models(args.model_file, opt.get("models"), _kinds(opt.get("model")))
    preds = {name: run_model(m, data) for name, m in models.items()}
    write_predicted_csv(args.output, data, preds)
    print(f"wrote predictions of {', '.join(preds)} to {args.output}")
    return EXIT_OK


def _emit(out: Path, stem: str, rows, summary: dict, plot_cols, plot: bool) -> None:
    from .diagnostics import write_plot_data, write_tidy_csv

    rows = list(rows)
    write_tidy_csv(out / f"{stem}.csv", rows)
    _write_json(out / f"{stem}.json", summary)
    if plot:
        write_plot_data(out / f"{stem}.dat", rows, plot_cols)


def cmd_diagnose(args, opt: Options) -> int:
    from . import diagnostics as dg
    from .events import read_events_csv
    from .simulate import calibration_bias, prediction_error, run_model

    data = _select_days(read_events_csv(args.input), opt.get("split", "even"))
    models = _load_models(args.model_file, opt.get("models"), _kinds(opt.get("model")))
    metrics = [m.strip() for m in str(opt.get("metric", ",".join(METRICS))).split(",") if m.strip()]
    bad = [m for m in metrics if m not in METRICS]
    if bad:
        raise InputError(f"unknown metric(s) {bad}; choose from {list(METRICS)}")
    Ns = _int_list(opt.get("N", "50"))
    bins = opt.get("bins", dg.DEFAULT_BINS, int)
    variable = opt.get("variable", "sign")
    L = opt.get("max_lag", min(data.max_lag, 100), int)
    sig_L = opt.get("signature_lag", min(data.max_lag, 1000), int)
    plot = bool(opt.get("plot_data", False, _bool))
    out = _out_dir(args.output)

    preds = {name: run_model(m, data) for name, m in models.items()}
    series = {"data": None, **preds}

    if "impact" in metrics:
        for name, r in series.items():
            rows, summary = [], {"model": name, "variable": variable, "curves": {}}
            curves = []
            for N in Ns:
                c = dg.aggregate_impact(data, N, bins, variable, returns=r)
                curves.append(c)
                rows.extend(c.rows())
                entry = {"bins": len(c.counts)}
                try:
                    entry["chi"] = dg.curvature(c)
                    entry["central_slope"] = dg.central_slope(c)
                except (InputError, NumericalError) as exc:
                    entry["chi_error"] = str(exc)
                summary["curves"][str(N)] = entry
            if len(Ns) >= 4:
                try:
                    summary["kappa"] = dg.slope_scaling(curves)
                except (InputError, NumericalError) as exc:
                    summary["kappa_error"] = str(exc)
            _emit(out, f"{name}_impact", rows, summary, ["N", "x", "value", "stderr"], plot)

    if "signature" in metrics:
        for name, r in series.items():
            sp = dg.signature_plot(data, sig_L, returns=r)
            rets = dg._returns_of(data if r is None else r)
            summary = {"model": name, "L": sig_L, "D_LF": sp.D_LF}
            try:
                summary["hurst"] = dg.hurst_exponent([np.cumsum(x) for x in rets])
            except (InputError, NumericalError) as exc:
                summary["hurst_error"] = str(exc)
            _emit(out, f"{name}_signature", sp.rows(), summary,
                  ["lag", "value", "stderr", "subtracted"], plot)

    if "bias" in metrics:
        for name, pred in preds.items():
            b = calibration_bias(prediction_error(data, pred), data, L)
            rows = []
            for key in b.values:
                label = key if isinstance(key, str) else f"{key[0]}_{key[1]}"
                for i, lag in enumerate(b.lags):
                    rows.append({"lag": int(lag), "key": label, "value": b.values[key][i],
                                 "stderr": b.stderr[key][i]})
            z, key, lag = b.max_abs_z(0, L)
            summary = {"model": name, "L": L, "max_abs_z": z, "at_lag": lag,
                       "at_key": key if isinstance(key, str) else list(key) if key else None}
            _emit(out, f"{name}_bias", rows, summary, ["lag", "key", "value", "stderr"], plot)

    if "response" in metrics:
        from .calibration import estimate

        est = estimate(data, L, three_point=any(m.kind.value == "hdim2" for m in models.values()))
        for name, r in series.items():
            resp = dg.response_function(data, L, returns=r, stderr=True)
            _emit(out, f"{name}_response", resp.rows(), {"model": name, "L": L, "kind": "simulated"},
                  ["lag", "key", "value", "stderr"], plot)
        for name, m in models.items():
            if m.L > L:
                log.warning("%s kernels longer than --max-lag; closed form skipped", name)
                continue
            cf = dg.closed_form_response(m, est)
            _emit(out, f"{name}_closed_response", cf.rows(), {"model": name, "L": L, "kind": "closed_form"},
                  ["lag", "key", "value"], plot)

    if "correlation" in metrics:
        rows = []
        for name, pred in preds.items():
            for N in Ns:
                rows.append({"model": name, "N": N, "value": dg.model_correlation(data, pred, N)})
        summary = {f"{r['model']}_N{r['N']}": r["value"] for r in rows}
        _emit(out, "correlation", rows, summary, ["model", "N", "value"], plot)

    print(f"wrote {', '.join(metrics)} diagnostics for {', '.join(models)} to {out}")
    return EXIT_OK


def cmd_report(args, opt: Options) -> int:
    d = Path(args.directory)
    if not d.is_dir():
        raise InputError(f"not a directory: {d}")
    combined = {}
    for f in sorted(d.glob("*.json")):
        if f.name == "report.json":
            continue
        try:
            combined[f.stem] = json.loads(f.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{f}: invalid JSON ({exc})") from None
    if not combined:
        raise InputError(f"{d}: no diagnostic summaries found")
    _write_json(d / "report.json", combined)
    for stem, s in combined.items():
        if stem.endswith("_impact"):
            for N, c in s.get("curves", {}).items():
                chi = c.get("chi")
                print(f"{stem:32s} N={N:>5s} chi={chi:.4f}" if chi is not None else f"{stem:32s} N={N:>5s}")
        elif stem.endswith("_signature"):
            h = s.get("hurst")
            print(f"{stem:32s} D_LF={s['D_LF']:.4g}" + (f" H={h:.3f}" if h is not None else ""))
        elif stem.endswith("_bias"):
            z = s.get("max_abs_z")
            print(f"{stem:32s} max|z|=" + (f"{z:.2f} at lag {s['at_lag']}" if z is not None else "undefined"))
        elif stem == "correlation":
            for k, v in s.items():
                print(f"{'correlation ' + k:32s} {v:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proplab", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"proplab {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file; the section named after the command is read")
    common.add_argument("--threads", type=int, help="cap on worker threads (PROPLAB_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="clean raw trades into the event format")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--instrument-id", dest="instrument_id")
    s.add_argument("--trim-minutes", dest="trim_minutes", type=float)
    s.add_argument("--session-open", dest="session_open")
    s.add_argument("--session-close", dest="session_close")

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic event file")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--generator", choices=["tim1", "tim2", "hdim2", "hdim2star", "cim2"])
    s.add_argument("--events", type=int, help="events per day")
    s.add_argument("--days", type=int)
    s.add_argument("--sign-memory", dest="sign_memory", type=float)
    s.add_argument("--change-prob", dest="change_prob")
    s.add_argument("--noise", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--window", type=int)
    s.add_argument("--kernel-length", dest="kernel_length", type=int)
    s.add_argument("--exponent", type=float)
    s.add_argument("--amplitude", type=float)
    s.add_argument("--delta-c", dest="delta_c", type=float)
    s.add_argument("--instrument-id", dest="instrument_id")

    s = sub.add_parser("calibrate", parents=[common], help="calibrate models to model JSON files")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.add_argument("--model", help="tim1, tim2, hdim2, hdim2star, cim2 or all (comma-separated)")
    s.add_argument("--split", choices=["odd", "even", "none"])
    s.add_argument("--max-lag", dest="max_lag", type=int)
    s.add_argument("--kernel-lag", dest="kernel_lag", type=int)
    s.add_argument("--segment-length", dest="segment_length", type=int)
    s.add_argument("--smooth", dest="smooth", action="store_const", const=True)
    s.add_argument("--no-smooth", dest="smooth", action="store_const", const=False)
    s.add_argument("--tim1-matrix", dest="tim1_matrix", choices=["sign", "return-sign"])
    s.add_argument("--stderr", action="store_const", const=True)

    for name, helptext in (("simulate", "run models on an event file"),
                           ("diagnose", "out-of-sample diagnostics")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("input")
        s.add_argument("-o", "--output", required=True)
        s.add_argument("--models", help="directory of model JSON files")
        s.add_argument("--model-file", dest="model_file", action="append", help="model JSON (repeatable)")
        s.add_argument("--model", help="kinds to load from --models (default: all present)")
        s.add_argument("--split", choices=["odd", "even", "none"])
        if name == "diagnose":
            s.add_argument("--metric", help=f"comma-separated subset of {','.join(METRICS)}")
            s.add_argument("--N", dest="N", help="bin sizes, e.g. 10,50,200")
            s.add_argument("--bins", type=int)
            s.add_argument("--variable", choices=["sign", "volume"])
            s.add_argument("--max-lag", dest="max_lag", type=int)
            s.add_argument("--signature-lag", dest="signature_lag", type=int)
            s.add_argument("--plot-data", dest="plot_data", action="store_const", const=True)
            s.add_argument("--seed", type=int, help="accepted for symmetry; diagnostics are deterministic")

    s = sub.add_parser("report", parents=[common], help="summarise a diagnostics directory")
    s.add_argument("directory")
    return p


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        os.environ["PROPLAB_THREADS"] = str(max(1, args.threads))
    try:
        opt = Options(args, _read_config(args.config, args.command))
        return COMMANDS[args.command](args, opt)
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
