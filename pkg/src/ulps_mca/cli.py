"""``ulps-mca`` command-line front end."""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import formats
from .codes import generate_kasami_small_set
from .evaluation import (METHODS, TrialSpec, ecdf, estimate, locate, percentile, render_trial, run_trials,
                         sweep, trial_seeds)
from .scenario import Scenario, ScenarioError, Setup, load_scenario, scenario_from_dict

PACKAGE = "artifact"


class CliError(Exception):
    pass


def _versions() -> dict:
    out = {}
    for dist in (PACKAGE, "numpy", "scipy"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = "unknown"
    return out


def _int_auto(text: str) -> int:
    return int(text, 0)


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _methods(choice: str) -> tuple[str, ...]:
    return METHODS if choice == "both" else (choice,)


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario)
    try:
        sc = sc.with_overrides(args.M, args.gamma, args.J, args.delta_ms)
        return scenario_from_dict(sc.to_dict())
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_codes(args) -> int:
    ks = generate_kasami_small_set(args.polynomial, args.degree)
    codes = ks.sequences if args.assign is None else ks.beacon_codes(_assign(args.assign, len(ks.sequences)))
    formats.write_codes_csv(sys.stdout if args.out is None else args.out, codes)
    return 0


def _assign(text: str, available: int) -> tuple[int, ...]:
    vals = _int_list(text)
    if len(vals) == 1:
        n = vals[0]
        if not 1 <= n <= available:
            raise CliError(f"--assign {n}: the set has {available} sequences")
        return tuple(range(n))
    return tuple(vals)


def _simulate(sc: Scenario, seed: int, trials: int, methods, out: Path, workers: int,
              dump: int) -> None:
    spec = TrialSpec(sc, methods, trials, seed)
    res = run_trials(spec, workers)
    for m in methods:
        rows = [(k, res.truths[k], o.fix, o.error) for k, o in enumerate(res.outcomes[m])]
        formats.write_fixes_csv(out / f"fixes_{m}.csv", rows)
        formats.write_ecdf_csv(out / f"ecdf_{m}.csv", ecdf(res.errors(m)))
    if dump:
        setup = Setup(sc)
        bdir = _out_dir(out / "buffers")
        for k, s in enumerate(trial_seeds(seed, trials)[:dump]):
            tr = render_trial(setup, k, s)
            path = bdir / f"capture_{k:04d}.csv"
            formats.write_capture(path, tr.buffer)
            formats.write_json(bdir / f"capture_{k:04d}.truth.json",
                               {"trial": k, "position_m": [float(v) for v in tr.truth]})
    summary = {m: {"missing": res.missing(m),
                   "p50_m": _pct(res.errors(m), 0.5), "p80_m": _pct(res.errors(m), 0.8),
                   "p95_m": _pct(res.errors(m), 0.95)} for m in methods}
    if "mca" in methods:
        summary["mca"]["discard_fraction"] = res.discard_fraction()
    _manifest(out, "simulate", sc, seed=seed, trials=trials, methods=list(methods), dump_buffers=dump,
              summary=summary)


def _pct(errors, p):
    v = percentile(ecdf(errors), p)
    return None if not np.isfinite(v) else v


def _manifest(out: Path, command: str, sc: Scenario, **fields) -> None:
    doc = {"command": command, "scenario": sc.to_dict(), "versions": _versions(), **fields}
    formats.write_json(out / "manifest.json", doc)


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args.out)
    _simulate(sc, args.seed, args.trials, _methods(args.method), out, args.workers, args.dump_buffers)
    return 0


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args.out)
    _sweep(sc, args.seed, args.trials, args.M_values, args.gamma_values, out, args.workers)
    return 0


def _sweep(sc, seed, trials, Ms, gammas, out, workers):
    if not Ms or not gammas:
        raise CliError("sweep axes must be nonempty")
    grid = sweep(TrialSpec(sc, ("mca",), trials, seed), Ms, gammas, workers)
    formats.write_sweep_csv(out / "sweep.csv", grid)
    _manifest(out, "sweep", sc, seed=seed, trials=trials, M_values=list(Ms), gamma_values=list(gammas))


def cmd_rerun(args) -> int:
    try:
        doc = json.loads(Path(args.manifest).read_text())
        sc = scenario_from_dict(doc["scenario"])
        command = doc["command"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError(f"cannot use manifest {args.manifest}: {exc}") from exc
    out = _out_dir(args.out)
    if command == "simulate":
        _simulate(sc, doc["seed"], doc["trials"], tuple(doc["methods"]), out, args.workers,
                  doc.get("dump_buffers", 0))
    elif command == "sweep":
        _sweep(sc, doc["seed"], doc["trials"], doc["M_values"], doc["gamma_values"], out, args.workers)
    else:
        raise CliError(f"manifest command {command!r} cannot be rerun")
    return 0


def process_capture(buffer, sc: Scenario, methods=("mca",), timings: list | None = None) -> dict:
    """ToAs and fix for every whole frame of ``buffer``."""
    setup = Setup(sc)
    if buffer.rate_hz != sc.fs_rx:
        raise CliError(f"capture rate {buffer.rate_hz} Hz does not match scenario rate {sc.fs_rx} Hz")
    n = setup.frame_samples
    total = buffer.samples.size
    if total < n:
        raise CliError(f"capture too short: expected at least {n} samples (one frame), got {total}")
    windows = []
    for w in range(total // n):
        seg = type(buffer)(buffer.samples[w * n:(w + 1) * n], buffer.rate_hz)
        entry = {"window": w, "start_sample": w * n}
        for m in methods:
            t0 = time.perf_counter()
            toa, discarded = estimate(setup, seg, m)
            fix = locate(setup, toa)
            if timings is not None:
                timings.append({"window": w, "method": m, "seconds": time.perf_counter() - t0})
            entry[m] = {
                "toa_samples": list(toa.toa),
                "low_confidence": list(toa.low_confidence),
                "discarded": discarded,
                "fix": None if fix is None else {"position_m": list(fix.position),
                                                 "residual_m": fix.residual_rms,
                                                 "converged": fix.converged},
            }
        windows.append(entry)
    return {"scenario": sc.name, "rate_hz": buffer.rate_hz, "frame_samples": n,
            "trailing_samples": total % n, "windows": windows}


def cmd_process(args) -> int:
    sc = _scenario(args)
    buffer = formats.read_capture(args.capture)
    timings: list = []
    doc = process_capture(buffer, sc, _methods(args.method), timings)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    for t in timings:
        print(f"window {t['window']} {t['method']}: {t['seconds']:.3f} s", file=sys.stderr)
    if args.timing is not None:
        formats.write_json(args.timing, timings)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ulps-mca", description="Multipath compensation for a TDMA ultrasonic LPS.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("codes", help="write the Kasami small set as CSV")
    c.add_argument("--degree", type=int, default=8)
    c.add_argument("--polynomial", type=_int_auto, default=None, help="feedback polynomial, e.g. 0x11D")
    c.add_argument("--assign", default=None, help="N for the first N members, or a comma list of members")
    c.add_argument("--out", default=None, help="CSV path (default stdout)")
    c.set_defaults(func=cmd_codes)

    def scenario_args(q, trials=True):
        q.add_argument("--scenario", required=True, help="bundled scenario name or JSON file")
        q.add_argument("--M", type=int, default=None)
        q.add_argument("--gamma", type=float, default=None)
        q.add_argument("--J", type=int, default=None)
        q.add_argument("--delta-ms", type=float, default=None)
        if trials:
            q.add_argument("--seed", type=int, default=0)
            q.add_argument("--trials", type=int, default=250)
            q.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("simulate", help="Monte-Carlo trials: fixes, ECDFs and a manifest")
    scenario_args(s)
    s.add_argument("--method", choices=("mca", "classical", "both"), default="both")
    s.add_argument("--out", required=True)
    s.add_argument("--dump-buffers", type=int, default=0, metavar="N",
                   help="also write the first N received buffers as captures")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="mean MCA error over an M x gamma grid")
    scenario_args(w)
    w.add_argument("--M-values", type=_int_list, default=list(range(1, 11)))
    w.add_argument("--gamma-values", type=_float_list, default=[0.01, 0.1, 0.25, 0.5, 0.75, 1.0])
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("process", help="ToAs and fixes for a recorded capture")
    scenario_args(r, trials=False)
    r.add_argument("--capture", required=True)
    r.add_argument("--method", choices=("mca", "classical", "both"), default="mca")
    r.add_argument("--out", default=None, help="JSON path (default stdout)")
    r.add_argument("--timing", default=None, help="optional JSON file for per-window wall times")
    r.set_defaults(func=cmd_process)

    m = sub.add_parser("rerun", help="repeat a simulate or sweep run from its manifest")
    m.add_argument("--manifest", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--workers", type=int, default=1)
    m.set_defaults(func=cmd_rerun)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        print(f"ulps-mca {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
