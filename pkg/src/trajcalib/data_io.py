"""Deterministic file formats: trajectory CSV, calibration report, cost curve.

Trajectory files are comma-separated UTF-8 text with a header row
(``timestamp_s,x_m,y_m,z_m`` plus optional ``sigma_m``), a period decimal
point, and ``#`` comment lines.  Reports are JSON documents with a fixed
key order and reals printed with 17 significant digits, so identical
inputs always serialize to identical bytes and parse back losslessly.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .extrinsic_registration import RegistrationResult, RigidTransform, euler_zyx_degrees
from .gp_trajectory import Measurement, MeasurementSet
from .sim_harness import MonteCarloReport
from .temporal_align import DelayEstimate

TRAJECTORY_COLUMNS = ("timestamp_s", "x_m", "y_m", "z_m")
SIGMA_COLUMN = "sigma_m"


def _open_lines(source):
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return fh.readlines()
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8")).readlines()
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return io.StringIO(data).readlines()


def parse_trajectory(source, sensor_id: str | None = None, default_sigma: float = 0.01) -> MeasurementSet:
    """Read one sensor's trajectory file into a validated MeasurementSet.

    Timestamps are parsed in extended precision and re-zeroed to the
    file's first stamp (recorded as ``epoch``) so wall-clock epochs do not
    degrade the dt powers used downstream.  A missing sigma column falls
    back to ``default_sigma`` (isotropic noise standard deviation, m).
    """
    if sensor_id is None:
        sensor_id = Path(source).stem if isinstance(source, (str, Path)) else "stream"
    lines = _open_lines(source)

    header = None
    n_cols = 0
    raw = []  # (line_no, fields)
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = [f.strip() for f in text.split(",")]
        if header is None:
            header = fields
            if tuple(header[:4]) != TRAJECTORY_COLUMNS or (
                len(header) == 5 and header[4] != SIGMA_COLUMN
            ) or len(header) not in (4, 5):
                raise ParseError(
                    f"header must be {','.join(TRAJECTORY_COLUMNS)}[,{SIGMA_COLUMN}], "
                    f"got {text!r}",
                    line_no,
                )
            n_cols = len(header)
            continue
        if len(fields) != n_cols:
            raise ParseError(
                f"expected {n_cols} comma-separated fields, got {len(fields)}", line_no
            )
        raw.append((line_no, fields))

    if header is None:
        raise ParseError("file contains no header row", 1)
    if len(raw) < 3:
        raise ValidationError(
            f"{sensor_id}: need at least 3 data rows, got {len(raw)}"
        )

    stamps = np.empty(len(raw), dtype=np.longdouble)
    values = np.empty((len(raw), n_cols - 1))
    for k, (line_no, fields) in enumerate(raw):
        try:
            stamps[k] = np.longdouble(fields[0])
            for j in range(1, n_cols):
                values[k, j - 1] = float(fields[j])
        except ValueError:
            raise ParseError(f"could not parse row fields {fields!r}", line_no) from None
        if not math.isfinite(float(stamps[k])) or not np.all(np.isfinite(values[k])):
            raise ParseError("row contains a non-finite value", line_no)
        if n_cols == 5 and values[k, 3] <= 0:
            raise ParseError(f"sigma_m must be positive, got {fields[4]}", line_no)

    for k in range(1, len(raw)):
        if stamps[k] <= stamps[k - 1]:
            raise ValidationError(
                f"timestamps must be strictly increasing: line {raw[k - 1][0]} "
                f"has {raw[k - 1][1][0]!r}, line {raw[k][0]} has {raw[k][1][0]!r}"
            )

    epoch = stamps[0]
    times = np.asarray(stamps - epoch, dtype=float)
    sigmas = values[:, 3] if n_cols == 5 else np.full(len(raw), float(default_sigma))
    measurements = [
        Measurement(time=t, position=values[k, 0:3], noise_cov=sigmas[k] ** 2 * np.eye(3))
        for k, t in enumerate(times)
    ]
    return MeasurementSet(sensor_id=sensor_id, measurements=measurements, epoch=float(epoch))


def fields_repr(s: str) -> str:
    return repr(s)


def _fmt(x: float) -> str:
    if not math.isfinite(x):
        raise ValidationError(f"cannot serialize non-finite value {x!r}")
    return f"{float(x):.17g}"


def write_trajectory(data: MeasurementSet) -> str:
    """Serialize a MeasurementSet to trajectory-file text.

    Only isotropic noise covariances fit the file format; the absolute
    timestamps written are ``epoch + time``.
    """
    lines = [",".join(TRAJECTORY_COLUMNS + (SIGMA_COLUMN,))]
    epoch = np.longdouble(data.epoch)
    for m in data.measurements:
        cov = m.noise_cov
        sigma2 = cov[0, 0]
        if np.abs(cov - sigma2 * np.eye(3)).max() > 1e-12 * max(1.0, sigma2):
            raise ValidationError(
                "trajectory file format supports isotropic noise only"
            )
        stamp = float(epoch + np.longdouble(m.time))
        lines.append(
            ",".join(
                [_fmt(stamp)]
                + [_fmt(v) for v in m.position]
                + [_fmt(math.sqrt(sigma2))]
            )
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# JSON emission with deterministic key order and 17-significant-digit reals.


def _emit(obj, out: list[str], indent: int):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (key, value) in enumerate(obj.items()):
            out.append(f"{pad}  {json.dumps(str(key))}: ")
            _emit(value, out, indent + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(np.asarray(obj).tolist()) if isinstance(obj, np.ndarray) else list(obj)
        if not seq:
            out.append("[]")
            return
        out.append("[")
        for i, value in enumerate(seq):
            _emit(value, out, indent)
            if i < len(seq) - 1:
                out.append(", ")
        out.append("]")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt(float(obj)))
    elif obj is None:
        out.append("null")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    else:
        raise ValidationError(f"cannot serialize value of type {type(obj).__name__}")


def _dumps(obj) -> str:
    out: list[str] = []
    _emit(obj, out, 0)
    return "".join(out) + "\n"


@dataclass
class CalibrationReport:
    """Full pipeline output plus provenance for one calibrate invocation."""

    delay: DelayEstimate
    extrinsic: RegistrationResult
    provenance: dict


def write_report(report: CalibrationReport) -> str:
    """Serialize a calibration report to deterministic JSON text."""
    doc = {
        "schema": "trajcalib-report-v1",
        "provenance": report.provenance,
        "delay": {
            "delay_s": report.delay.delay,
            "final_cost_m2_per_s2": report.delay.final_cost,
            "rms_residual_m_per_s": report.delay.rms_residual,
            "iterations": report.delay.iterations,
            "converged": report.delay.converged,
            "observability_m_per_s2": report.delay.observability,
            "n_correspondences": report.delay.n_correspondences,
        },
        "extrinsic": {
            "rotation_matrix": report.extrinsic.transform.rotation,
            "translation_m": report.extrinsic.transform.translation,
            "euler_zyx_deg": report.extrinsic.euler_zyx,
            "rms_residual_m": report.extrinsic.rms_residual,
            "n_pairs": report.extrinsic.n_pairs,
            "collinearity": report.extrinsic.collinearity,
        },
    }
    return _dumps(doc)


def parse_report(text: str | bytes) -> CalibrationReport:
    """Parse ``write_report`` output back into a CalibrationReport."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"report is not valid JSON: {exc}") from None
    if doc.get("schema") != "trajcalib-report-v1":
        raise ValidationError(f"unknown report schema {doc.get('schema')!r}")
    d = doc["delay"]
    e = doc["extrinsic"]
    delay = DelayEstimate(
        delay=d["delay_s"],
        final_cost=d["final_cost_m2_per_s2"],
        rms_residual=d["rms_residual_m_per_s"],
        iterations=d["iterations"],
        converged=d["converged"],
        observability=d["observability_m_per_s2"],
        n_correspondences=d["n_correspondences"],
    )
    extrinsic = RegistrationResult(
        transform=RigidTransform(
            rotation=np.array(e["rotation_matrix"]),
            translation=np.array(e["translation_m"]),
        ),
        euler_zyx=np.array(e["euler_zyx_deg"]),
        rms_residual=e["rms_residual_m"],
        n_pairs=e["n_pairs"],
        collinearity=e["collinearity"],
    )
    return CalibrationReport(delay=delay, extrinsic=extrinsic, provenance=doc["provenance"])


def write_cost_curve(rows) -> str:
    """Delimited (delay_s, cost) table for external plotting."""
    rows = np.asarray(rows, dtype=float)
    lines = ["delay_s,cost_m2_per_s2"]
    for d, c in rows:
        lines.append(f"{_fmt(d)},{_fmt(c)}")
    return "\n".join(lines) + "\n"


def write_ground_truth(true_delay: float, transform: RigidTransform) -> str:
    """Ground-truth sidecar for a simulated dataset."""
    from .extrinsic_registration import euler_zyx_degrees

    return _dumps(
        {
            "schema": "trajcalib-truth-v1",
            "true_delay_s": true_delay,
            "rotation_matrix": transform.rotation,
            "translation_m": transform.translation,
            "euler_zyx_deg": euler_zyx_degrees(transform.rotation),
        }
    )


def write_monte_carlo_report(report: MonteCarloReport) -> str:
    """Aggregate Monte-Carlo statistics as deterministic JSON."""
    cfg = report.config
    doc = {
        "schema": "trajcalib-mc-report-v1",
        "config": {
            "duration_s": cfg.duration,
            "sample_interval_s": cfg.sample_interval,
            "sensor2_start_offset_s": cfg.sensor2_start_offset,
            "counter_phase": cfg.counter_phase,
            "noise_sigma_m": cfg.noise_sigma,
            "trajectory_seed": cfg.trajectory_seed,
            "n_runs": cfg.n_runs,
            "qc_scale_m2_per_s5": report.qc_scale,
            "true_delay_s": cfg.true_delay,
            "true_euler_zyx_deg": __import__(
                "trajcalib.extrinsic_registration", fromlist=["euler_zyx_degrees"]
            ).euler_zyx_degrees(cfg.ground_truth_transform.rotation),
            "true_translation_m": cfg.ground_truth_transform.translation,
        },
        "aggregates": report.aggregates,
        "failures": {
            str(r.run_index): r.failure for r in report.records if r.failure
        },
    }
    return _dumps(doc)


def write_monte_carlo_rows(report: MonteCarloReport) -> str:
    """Per-run Monte-Carlo errors as delimited text."""
    lines = [
        "run,converged,delay_error_s,euler_z_error_deg,euler_y_error_deg,"
        "euler_x_error_deg,tx_error_m,ty_error_m,tz_error_m,observability_m_per_s2"
    ]
    for r in report.records:
        if r.failure is not None:
            lines.append(f"{r.run_index},false,nan,nan,nan,nan,nan,nan,nan,nan")
            continue
        fields = [str(r.run_index), "true" if r.converged else "false"]
        fields.append(_fmt(r.delay_error_s))
        fields.extend(_fmt(v) for v in r.euler_error_deg)
        fields.extend(_fmt(v) for v in r.translation_error_m)
        fields.append(_fmt(r.observability))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"
