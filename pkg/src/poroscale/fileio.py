"""Plain-text file formats: level sets, interfaces, legacy VTK, CSV and JSON."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .geometry import LevelSetField, UnitCellGrid


def fmt(x) -> str:
    """Round-trip float formatting used by every text output."""
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- level sets ---

def write_levelset(path, phi: LevelSetField) -> None:
    """Header line ``levelset n=<n> margin=<m>`` then n+1 rows of node values.

    Row j holds the nodes with second coordinate y_j, from bottom to top.
    """
    with open(path, "w") as fh:
        fh.write(f"levelset n={phi.n} margin={fmt(phi.margin)}\n")
        for row in phi.values:
            fh.write(" ".join(fmt(v) for v in row) + "\n")


def read_levelset(path) -> LevelSetField:
    with open(path) as fh:
        header = fh.readline().split()
        if not header or header[0] != "levelset":
            raise ValueError(f"{path}: missing 'levelset' header")
        meta = dict(item.split("=", 1) for item in header[1:])
        values = np.loadtxt(fh, ndmin=2)
    n = int(meta["n"])
    if values.shape != (n + 1, n + 1):
        raise ValueError(f"{path}: expected {(n + 1, n + 1)} values, found {values.shape}")
    return LevelSetField(UnitCellGrid(n), values, float(meta["margin"]))


def write_interface_csv(path, lines) -> None:
    """Interface vertices as ``x,y,component_id`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "component_id"])
        for k, pl in enumerate(lines):
            pts = pl.points if hasattr(pl, "points") else np.asarray(pl)
            for x, y in pts:
                w.writerow([fmt(x), fmt(y), k])


# --- tabular ---

def write_rows_csv(path, rows: list, columns: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], (int, np.integer, str)) else fmt(r[c]) for c in columns])


# --- legacy VTK ---

def write_vtk_structured_points(path, dims, origin, spacing, point_scalars=None, cell_scalars=None,
                                cell_vectors=None, title: str = "poroscale") -> None:
    """ASCII legacy VTK STRUCTURED_POINTS file for 2D data (z extent 1).

    ``dims`` counts points per axis.  Arrays are indexed [j, i] (y, x).
    """
    nxp, nyp = dims
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_POINTS",
             f"DIMENSIONS {nxp} {nyp} 1", f"ORIGIN {fmt(origin[0])} {fmt(origin[1])} 0",
             f"SPACING {fmt(spacing[0])} {fmt(spacing[1])} 1"]
    if point_scalars:
        lines.append(f"POINT_DATA {nxp * nyp}")
        for name, arr in point_scalars.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [fmt(v) for v in np.asarray(arr).ravel()]
    if cell_scalars or cell_vectors:
        ncell = max(nxp - 1, 1) * max(nyp - 1, 1)
        lines.append(f"CELL_DATA {ncell}")
        for name, arr in (cell_scalars or {}).items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [fmt(v) for v in np.asarray(arr).ravel()]
        for name, arr in (cell_vectors or {}).items():
            lines.append(f"VECTORS {name} double")
            a = np.asarray(arr).reshape(-1, 2)
            lines += [f"{fmt(x)} {fmt(y)} 0" for x, y in a]
    Path(path).write_text("\n".join(lines) + "\n")


def write_darcy_vtk(path, field) -> None:
    g = field.grid
    write_vtk_structured_points(path, (g.nx + 1, g.ny + 1), (0.0, 0.0), (g.hx, g.hy),
                                point_scalars={"pressure": field.p},
                                cell_vectors={"velocity": field.v}, title="darcy")


def write_state_vtk(path, grid, state) -> None:
    write_vtk_structured_points(path, (grid.nx + 1, grid.ny + 1), (0.0, 0.0), (grid.hx, grid.hy),
                                point_scalars={"concentration": state.c, "porosity": state.phi},
                                title=f"transport t={fmt(state.t)}")


def read_vtk_point_scalars(path) -> dict:
    """Minimal reader for the point scalars written above (used in tests)."""
    tokens = Path(path).read_text().split("\n")
    out, k = {}, 0
    dims = None
    while k < len(tokens):
        line = tokens[k]
        if line.startswith("DIMENSIONS"):
            dims = tuple(int(v) for v in line.split()[1:3])
        if line.startswith("SCALARS") and dims is not None:
            name = line.split()[1]
            n = dims[0] * dims[1]
            vals = np.array([float(v) for v in tokens[k + 2:k + 2 + n]])
            out[name] = vals.reshape(dims[1], dims[0])
            k += 2 + n
            continue
        if line.startswith("CELL_DATA"):
            break
        k += 1
    return out


# --- manifest ---

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, files, extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    entries = [{"path": str(Path(f).relative_to(out_dir)), "sha256": sha256_file(f),
                "bytes": Path(f).stat().st_size} for f in sorted(map(Path, files))]
    path = out_dir / "manifest.json"
    write_json(path, {"artifacts": entries, **(extra or {})})
    return path
