"""Plain-text file formats: CSV bodies with JSON sidecars, JSON lines logs."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .channel import ChannelRealization, ReceivedBuffer
from .codes import BipolarSequence
from .mca import ChannelEstimate
from .positioning import PositionFix
from .waveform import CodePattern

SAMPLE_FORMAT = "float64-text"


class FormatError(ValueError):
    pass


def _num(x: float) -> str:
    # repr round-trips float64 exactly and is platform independent
    return repr(float(x))


def sidecar_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_codes_csv(dest, codes: Sequence[BipolarSequence]) -> None:
    """One row per sequence; header ``code,c0..c{N-1}``.  ``dest`` is a path or text stream."""
    if hasattr(dest, "write"):
        _codes_rows(dest, codes)
        return
    with open(dest, "w", newline="") as f:
        _codes_rows(f, codes)


def _codes_rows(f, codes):
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["code"] + [f"c{k}" for k in range(codes[0].length)])
    for i, s in enumerate(codes):
        w.writerow([i] + [int(v) for v in s.chips])


def read_codes_csv(path: str | Path) -> list[BipolarSequence]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "code":
        raise FormatError(f"{path}: missing codes header")
    return [BipolarSequence(np.array([int(v) for v in r[1:]], dtype=np.int8)) for r in rows[1:]]


def _write_samples(path, samples, header: str):
    with open(path, "w") as f:
        f.write(header + "\n")
        f.writelines(_num(v) + "\n" for v in np.asarray(samples, dtype=float))


def _read_samples(path, header: str) -> np.ndarray:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].strip() != header:
        raise FormatError(f"{path}: expected header row {header!r}")
    try:
        return np.array([float(v) for v in lines[1:] if v.strip()], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed sample ({exc})") from exc


def write_pattern(path: str | Path, pattern: CodePattern) -> None:
    _write_samples(path, pattern.samples, "sample")
    write_json(sidecar_path(path), {"rate_hz": pattern.rate_hz, "code_index": pattern.code_index,
                                    "n_samples": int(pattern.samples.size)})


def read_pattern(path: str | Path) -> CodePattern:
    meta = _read_sidecar(path, ("rate_hz", "code_index"))
    return CodePattern(_read_samples(path, "sample"), float(meta["rate_hz"]), int(meta["code_index"]))


def write_capture(path: str | Path, buffer: ReceivedBuffer) -> None:
    """Capture body (one sample per line) plus ``<name>.json`` header sidecar."""
    _write_samples(path, buffer.samples, "sample")
    write_json(sidecar_path(path), {"rate_hz": buffer.rate_hz, "channels": 1,
                                    "format": SAMPLE_FORMAT, "n_samples": int(buffer.samples.size)})


def _read_sidecar(path, required) -> dict:
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except OSError as exc:
        raise FormatError(f"missing header sidecar {side}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: invalid JSON ({exc})") from exc
    if not isinstance(meta, dict):
        raise FormatError(f"{side}: header must be a JSON object")
    missing = [k for k in required if k not in meta]
    if missing:
        raise FormatError(f"{side}: missing field(s) {', '.join(missing)}")
    return meta


def read_capture(path: str | Path) -> ReceivedBuffer:
    meta = _read_sidecar(path, ("rate_hz", "channels", "format", "n_samples"))
    rate, n = meta["rate_hz"], meta["n_samples"]
    if not isinstance(rate, (int, float)) or rate <= 0:
        raise FormatError(f"{path}: rate_hz must be positive, got {rate!r}")
    if meta["channels"] != 1:
        raise FormatError(f"{path}: only single-channel captures are supported, got {meta['channels']}")
    if meta["format"] != SAMPLE_FORMAT:
        raise FormatError(f"{path}: unsupported sample format {meta['format']!r}")
    if not isinstance(n, int) or n <= 0:
        raise FormatError(f"{path}: n_samples must be a positive integer, got {n!r}")
    x = _read_samples(path, "sample")
    if x.size != n:
        raise FormatError(f"{path}: truncated capture, header declares {n} samples but body has {x.size}")
    if not np.all(np.isfinite(x)):
        raise FormatError(f"{path}: non-finite samples")
    return ReceivedBuffer(x, float(rate))


def write_channel(path: str | Path, ch: ChannelRealization) -> None:
    write_json(path, ch.to_dict())


def read_channel(path: str | Path) -> ChannelRealization:
    return ChannelRealization.from_dict(json.loads(Path(path).read_text()))


def iteration_log_lines(est: ChannelEstimate) -> list[str]:
    return [json.dumps(r.to_dict(), sort_keys=True) for r in est.log]


def write_iteration_log(path: str | Path, est: ChannelEstimate) -> None:
    Path(path).write_text("".join(line + "\n" for line in iteration_log_lines(est)))


def write_fixes_csv(path: str | Path, rows: Iterable[tuple[int, np.ndarray, PositionFix | None, float]]) -> None:
    """Rows ``(trial, truth, fix, error)``; empty position fields when there is no fix."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["trial", "true_x", "true_y", "true_z", "x", "y", "z", "residual", "converged", "error"])
        for k, truth, fix, err in rows:
            t = [_num(v) for v in truth]
            if fix is None:
                w.writerow([k, *t, "", "", "", "", "false", "inf"])
            else:
                w.writerow([k, *t, *(_num(v) for v in fix.position), _num(fix.residual_rms),
                            "true" if fix.converged else "false", _num(err)])


def write_ecdf_csv(path: str | Path, curve) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["error_m", "probability"])
        for e, p in zip(curve.errors, curve.probabilities):
            w.writerow(["inf" if math.isinf(e) else _num(e), _num(p)])


def read_ecdf_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))[1:]
    return (np.array([float(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]))


def write_sweep_csv(path: str | Path, grid) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["M", "gamma", "mean_error_m", "missing"])
        for a, M in enumerate(grid.M_values):
            for b, g in enumerate(grid.gamma_values):
                e = grid.mean_error[a, b]
                w.writerow([M, _num(g), "inf" if math.isinf(e) else _num(e), int(grid.missing[a, b])])
