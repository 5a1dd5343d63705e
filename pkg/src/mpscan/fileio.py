"""On-disk formats: scan plans, fields, scan bundles, system matrices and
metric reports.

* Plans serialize to JSON (angles in radians, times in periods).
* Fields persist as a JSON header ``{nx, ny, domain}`` next to a raw
  little-endian float64 binary, row major; a 16-bit PGM export is provided
  for visual inspection.
* Scan bundles are a directory with ``manifest.json`` (plan, resolution,
  noise level, seed, generator name, counts) and ``samples.csv`` with
  header ``t,patch,sx,sy,rx,ry,vx,vy`` in shortest round-trip decimals.
* System matrices persist as JSON header ``{rows, cols, layout}`` plus raw
  column-major binary.
* Metric reports are CSV rows ``experiment,stage,param,psnr,ssim``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from mpscan.baseline import SystemMatrix
from mpscan.geometry import (
    LissajousParams,
    RigidMotion,
    ScanData,
    ScanPlan,
    SweepMotion,
)
from mpscan.grid import DenseField, GridSpec
from mpscan.rng import GENERATOR_NAME

CSV_HEADER = ["t", "patch", "sx", "sy", "rx", "ry", "vx", "vy"]
REPORT_HEADER = ["experiment", "stage", "param", "psnr", "ssim"]


# ---------------------------------------------------------------------------
# Scan plans
# ---------------------------------------------------------------------------

def plan_to_dict(plan: ScanPlan) -> dict:
    base = plan.base
    out = {
        "base": {
            "amplitudes": list(base.amplitudes),
            "frequencies": list(base.frequencies),
            "phases": list(base.phases),
            "samples_per_period": base.samples_per_period,
        },
        "patch_duration": plan.patch_duration,
        "move_time": plan.move_time,
        "kind": plan.kind,
    }
    if plan.patches is not None:
        out["patches"] = [
            {
                "offset": list(p.offset),
                "angle": p.angle,
                "offset_rate": list(p.offset_rate),
                "angle_rate": p.angle_rate,
            }
            for p in plan.patches
        ]
    else:
        sw = plan.sweep
        out["sweep"] = {
            "offset_start": list(sw.offset_start),
            "offset_end": list(sw.offset_end),
            "angle_start": sw.angle_start,
            "angle_end": sw.angle_end,
            "periods": sw.periods,
        }
    return out


def plan_from_dict(data: dict) -> ScanPlan:
    b = data["base"]
    base = LissajousParams(
        amplitudes=tuple(b["amplitudes"]),
        frequencies=tuple(int(m) for m in b["frequencies"]),
        phases=tuple(b["phases"]),
        samples_per_period=int(b["samples_per_period"]),
    )
    kwargs = {
        "base": base,
        "patch_duration": data.get("patch_duration", 1.0),
        "move_time": data.get("move_time", 0.0),
    }
    if data["kind"] == "patches":
        kwargs["patches"] = tuple(
            RigidMotion(
                offset=tuple(p["offset"]),
                angle=p.get("angle", 0.0),
                offset_rate=tuple(p.get("offset_rate", (0.0, 0.0))),
                angle_rate=p.get("angle_rate", 0.0),
            )
            for p in data["patches"]
        )
    else:
        sw = data["sweep"]
        kwargs["sweep"] = SweepMotion(
            offset_start=tuple(sw["offset_start"]),
            offset_end=tuple(sw["offset_end"]),
            angle_start=sw.get("angle_start", 0.0),
            angle_end=sw.get("angle_end", 0.0),
            periods=int(sw["periods"]),
        )
    return ScanPlan(**kwargs)


def save_plan(path, plan: ScanPlan):
    Path(path).write_text(json.dumps(plan_to_dict(plan), indent=2))


def load_plan(path) -> ScanPlan:
    return plan_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

def save_field(path_base, f: DenseField):
    """Write ``<base>.json`` and ``<base>.f64``."""
    base = Path(path_base)
    header = {"nx": f.nx, "ny": f.ny, "domain": list(f.domain)}
    base.with_suffix(".json").write_text(json.dumps(header))
    f.values.astype("<f8").tofile(base.with_suffix(".f64"))


def load_field(path_base) -> DenseField:
    base = Path(path_base)
    header = json.loads(base.with_suffix(".json").read_text())
    values = np.fromfile(base.with_suffix(".f64"), dtype="<f8")
    return DenseField(header["nx"], header["ny"], tuple(header["domain"]), values)


def save_pgm(path, f: DenseField):
    """16-bit portable graymap preview (min..max mapped to 0..65535).

    Rows run from the top of the image, so the y axis points up.
    """
    vals = f.values
    lo, hi = float(vals.min()), float(vals.max())
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    img = ((vals - lo) * scale).round().astype(">u2")
    raster = img.T[::-1]  # rows = descending y, columns = ascending x
    with open(path, "wb") as fh:
        fh.write(f"P5\n{f.nx} {f.ny}\n65535\n".encode())
        fh.write(raster.tobytes())


# ---------------------------------------------------------------------------
# Scan bundles
# ---------------------------------------------------------------------------

def save_bundle(directory, data: ScanData, plan: ScanPlan, h: float,
                noise_level: float, seed: int, extra: dict | None = None):
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    patches = np.unique(data.patch)
    manifest = {
        "plan": plan_to_dict(plan),
        "h": h,
        "noise_level": noise_level,
        "seed": seed,
        "generator": GENERATOR_NAME,
        "counts": {
            "patches": int(plan.num_patches),
            "patches_with_samples": int(patches.size),
            "samples": int(len(data)),
        },
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    with open(out / "samples.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for k in range(len(data)):
            writer.writerow(
                [repr(float(data.t[k])), int(data.patch[k])]
                + [repr(float(x)) for x in (*data.s[k], *data.r[k], *data.v[k])]
            )


def load_bundle(directory) -> tuple[ScanData, dict]:
    path = Path(directory)
    manifest = json.loads((path / "manifest.json").read_text())
    raw = np.genfromtxt(path / "samples.csv", delimiter=",", skip_header=1)
    raw = raw.reshape(-1, 8)
    data = ScanData(t=raw[:, 0], patch=raw[:, 1].astype(int), s=raw[:, 2:4],
                    r=raw[:, 4:6], v=raw[:, 6:8])
    return data, manifest


# ---------------------------------------------------------------------------
# System matrices
# ---------------------------------------------------------------------------

def save_system_matrix(path_base, system: SystemMatrix):
    base = Path(path_base)
    header = {
        "rows": system.rows,
        "cols": system.cols,
        "layout": "column-major",
        "n_samples": system.n_samples,
        "grid": {"nx": system.grid.nx, "ny": system.grid.ny,
                 "domain": list(system.grid.domain)},
    }
    base.with_suffix(".json").write_text(json.dumps(header))
    system.matrix.astype("<f8").T.tofile(base.with_suffix(".f64"))


def load_system_matrix(path_base) -> SystemMatrix:
    base = Path(path_base)
    header = json.loads(base.with_suffix(".json").read_text())
    raw = np.fromfile(base.with_suffix(".f64"), dtype="<f8")
    matrix = raw.reshape(header["cols"], header["rows"]).T.copy()
    g = header["grid"]
    grid = GridSpec(g["nx"], g["ny"], tuple(g["domain"]))
    return SystemMatrix(matrix=matrix, grid=grid, n_samples=header["n_samples"])


# ---------------------------------------------------------------------------
# Metric reports and diagnostics
# ---------------------------------------------------------------------------

def write_report(path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in REPORT_HEADER})


def append_report_row(path, row: dict):
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_HEADER)
        if new:
            writer.writeheader()
        writer.writerow({k: row.get(k, "") for k in REPORT_HEADER})


def save_json(path, payload: dict):
    Path(path).write_text(json.dumps(payload, indent=2, default=_json_default))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")
