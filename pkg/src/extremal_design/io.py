"""File formats: binary ensembles, grid and station CSVs, JSON records and small SVG plots."""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domain import GriddedField, SpatialGrid, StationSeries

MAGIC = b"RPEN"
VERSION = 1
# magic, version, N, L, xi, seed
_HEADER = struct.Struct("<4sIQQdq")


class FormatError(ValueError):
    pass


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------- ensembles

def write_ensemble(path, samples: np.ndarray, xi: float, seed: int) -> None:
    """Flat binary: fixed header then row-major little-endian float64 body."""
    a = np.ascontiguousarray(samples, dtype="<f8")
    if a.ndim != 2:
        raise FormatError("ensemble must be a 2-D array")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, a.shape[0], a.shape[1], float(xi), int(seed)))
        fh.write(a.tobytes(order="C"))


def read_ensemble(path):
    """Return ``(samples, xi, seed)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError("file too short for an ensemble header")
    magic, version, n, L, xi, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError("not an ensemble file")
    if version != VERSION:
        raise FormatError(f"unsupported ensemble version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n * L:
        raise FormatError("ensemble body size does not match its header")
    samples = np.frombuffer(body, dtype="<f8").reshape(n, L).astype(float)
    return samples, xi, seed


def write_ensemble_csv(path, samples: np.ndarray) -> None:
    np.savetxt(path, samples, delimiter=",", fmt="%.17g",
               header=",".join(f"s{j}" for j in range(samples.shape[1])), comments="")


# ----------------------------------------------------------- grids, fields

def grid_to_dict(grid: SpatialGrid) -> dict:
    return {
        "locations": grid.locations.tolist(),
        "cell_spacing": grid.cell_spacing,
        "boundary_flags": grid.boundary_flags.astype(int).tolist(),
    }


def grid_from_dict(d: dict) -> SpatialGrid:
    return SpatialGrid(np.asarray(d["locations"], float), float(d["cell_spacing"]),
                       np.asarray(d["boundary_flags"], bool))


def _coord_names(d: int) -> list:
    if d > 2:
        raise FormatError("only 1-D and 2-D grids have a CSV form")
    return ["x", "y"][:d]


def write_field_csv(path, grid: SpatialGrid, values) -> None:
    values = np.asarray(values, float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_coord_names(grid.dim) + ["value"])
        for loc, v in zip(grid.locations, values):
            w.writerow([repr(float(c)) for c in loc] + [repr(float(v))])


def read_field_csv(path, cell_spacing: Optional[float] = None) -> GriddedField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("empty field file")
    head = rows[0]
    if head[-1] != "value" or head[:-1] not in (["x"], ["x", "y"]):
        raise FormatError("field CSV needs columns x[,y],value")
    arr = np.array([[float(c) for c in r] for r in rows[1:]])
    locs = arr[:, :-1]
    h = cell_spacing if cell_spacing is not None else _infer_spacing(locs)
    return GriddedField(SpatialGrid(locs, h), arr[:, -1])


def _infer_spacing(locs: np.ndarray) -> float:
    diffs = [np.diff(np.unique(locs[:, j])) for j in range(locs.shape[1])]
    diffs = np.concatenate([d[d > 0] for d in diffs if d.size])
    if diffs.size == 0:
        raise FormatError("cannot infer cell spacing from a single location")
    return float(diffs.min())


def write_raster_stack(path, grid: SpatialGrid, stack: np.ndarray) -> None:
    """Wide CSV: coordinates then one column per time step; ``.npz`` writes a binary archive."""
    stack = np.asarray(stack, float)
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, locations=grid.locations, cell_spacing=grid.cell_spacing, stack=stack)
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_coord_names(grid.dim) + [f"t{t}" for t in range(stack.shape[0])])
        for j, loc in enumerate(grid.locations):
            w.writerow([repr(float(c)) for c in loc] + [repr(float(v)) for v in stack[:, j]])


def read_raster_stack(path):
    """Return ``(grid, stack)`` with ``stack`` of shape (T, L)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"raster stack not found: {path}")
    if path.suffix == ".npz":
        with np.load(path) as z:
            return SpatialGrid(z["locations"], float(z["cell_spacing"])), z["stack"]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    d = 2 if len(head) > 1 and head[1] == "y" else 1
    arr = np.array([[float(c) for c in r] for r in rows[1:]])
    locs = arr[:, :d]
    return SpatialGrid(locs, _infer_spacing(locs)), arr[:, d:].T.copy()


# ---------------------------------------------------------------- stations

def write_station(csv_path, st: StationSeries) -> None:
    """Write ``timestamp,value`` rows and a ``.json`` sidecar with name and coordinates."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "value"])
        for t, v in zip(st.times, st.values):
            w.writerow([str(t), "" if np.isnan(v) else repr(float(v))])
    write_json(csv_path.with_suffix(".json"),
               {"name": st.name, "location": st.location.tolist(), "rainfall": st.rainfall})


def read_station(csv_path) -> StationSeries:
    csv_path = Path(csv_path)
    meta = read_json(csv_path.with_suffix(".json"))
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["timestamp", "value"]:
        raise FormatError("station CSV needs columns timestamp,value")
    times = np.array([int(r[0]) for r in rows[1:]])
    vals = np.array([float(r[1]) if r[1] else np.nan for r in rows[1:]])
    return StationSeries(meta["location"], times, vals, meta.get("name", csv_path.stem),
                         meta.get("rainfall", True))


# ------------------------------------------------------------------ tables

def write_table(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_table(path) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


# --------------------------------------------------------------------- svg

_COLOURS = ["#000000", "#1f4fd1", "#7a7a7a", "#c2410c", "#15803d", "#7e22ce"]


def svg_lines(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
              width: int = 480, height: int = 320) -> None:
    """Static line chart; ``series`` maps a label to ``(x, y)``."""
    pad = 48
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="11">{xlabel}</text>',
           f'<text x="12" y="{height / 2:.1f}" font-size="11" transform="rotate(-90 12 {height / 2:.1f})">{ylabel}</text>',
           f'<text x="{pad}" y="{height - pad + 14}" font-size="9">{x0:.3g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 14}" font-size="9" text-anchor="end">{x1:.3g}</text>',
           f'<text x="{pad - 4}" y="{height - pad}" font-size="9" text-anchor="end">{y0:.3g}</text>',
           f'<text x="{pad - 4}" y="{pad + 4}" font-size="9" text-anchor="end">{y1:.3g}</text>']
    for i, (label, (x, y)) in enumerate(series.items()):
        col = _COLOURS[i % len(_COLOURS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y) if np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * i}" font-size="10" fill="{col}" '
                   f'text-anchor="end">{label}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def svg_heatmap(path, grid: SpatialGrid, values, marks: Sequence[int] = (), title: str = "",
                size: int = 360) -> None:
    """Cell map of a 2-D grid field in grey levels; ``marks`` are drawn as red dots."""
    if grid.dim != 2:
        raise FormatError("heatmaps need a 2-D grid")
    v = np.asarray(values, float)
    fin = v[np.isfinite(v)]
    lo, hi = (float(fin.min()), float(fin.max())) if fin.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    locs = grid.locations
    mn, mx = locs.min(axis=0), locs.max(axis=0)
    h = grid.cell_spacing
    scale = (size - 40) / max(mx[0] - mn[0] + h, mx[1] - mn[1] + h)
    cell = h * scale
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>',
           f'<text x="{size / 2:.1f}" y="14" text-anchor="middle" font-size="12">{title}</text>']

    def xy(loc):
        return 20 + (loc[0] - mn[0]) * scale, size - 20 - (loc[1] - mn[1] + h) * scale

    for loc, val in zip(locs, v):
        g = 255 if not np.isfinite(val) else int(round(255 * (1 - (val - lo) / span)))
        x, y = xy(loc)
        out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cell:.2f}" height="{cell:.2f}" '
                   f'fill="rgb({g},{g},{g})"/>')
    for k in marks:
        x, y = xy(locs[k])
        out.append(f'<circle cx="{x + cell / 2:.2f}" cy="{y + cell / 2:.2f}" r="{max(cell / 3, 2):.2f}" fill="red"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
