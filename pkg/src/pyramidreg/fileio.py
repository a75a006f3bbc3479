"""File formats: PLY and XYZ clouds, correspondences, warps, run reports.

PLY support covers ascii and binary little-endian vertex data with
float or double coordinates. Unknown vertex properties ride along
unchanged (read -> warp -> write keeps colors and normals); big-endian
files are rejected outright. All readers locate their complaints with a
path and, where meaningful, a line or row number.
"""

from __future__ import annotations

import json

import numpy as np

from .core import CorrespondenceSet, PointCloud
from .errors import FileFormatError, NonFiniteError

REPORT_SCHEMA = "pyramidreg-report/v1"
METRICS_SCHEMA = "pyramidreg-metrics/v1"

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_COORD_TYPES = ("float", "float32", "double", "float64")


def _parse_ply_header(blob: bytes, path):
    try:
        end = blob.index(b"end_header")
    except ValueError:
        raise FileFormatError(f"{path}: missing end_header") from None
    end = blob.index(b"\n", end) + 1
    lines = blob[:end].decode("latin-1").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FileFormatError(f"{path}: not a PLY file (missing 'ply' magic)")
    fmt = None
    elements = []  # (name, count, [(kind, name), ...]); kind is dtype or 'list'
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if len(parts) < 2:
                raise FileFormatError(f"{path}: malformed format line")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise FileFormatError(f"{path}: malformed element line '{line.strip()}'")
            try:
                count = int(parts[2])
            except ValueError:
                raise FileFormatError(f"{path}: bad element count '{parts[2]}'") from None
            elements.append((parts[1], count, []))
        elif parts[0] == "property":
            if not elements:
                raise FileFormatError(f"{path}: property before any element")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise FileFormatError(f"{path}: malformed list property '{line.strip()}'")
                elements[-1][2].append(("list", parts[4]))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise FileFormatError(f"{path}: unsupported property '{line.strip()}'")
                elements[-1][2].append((parts[1], parts[2]))
        elif parts[0] == "end_header":
            break
        else:
            raise FileFormatError(f"{path}: unexpected header line '{line.strip()}'")
    if fmt == "binary_big_endian":
        raise FileFormatError(f"{path}: binary_big_endian PLY is not supported "
                              "(only ascii and binary_little_endian)")
    if fmt not in ("ascii", "binary_little_endian"):
        raise FileFormatError(f"{path}: unknown PLY format '{fmt}'")
    return fmt, elements, end


def read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        blob = fh.read()
    fmt, elements, offset = _parse_ply_header(blob, path)
    names = [name for name, _, _ in elements]
    if "vertex" not in names:
        raise FileFormatError(f"{path}: no vertex element")
    vertex_pos = names.index("vertex")
    count, props = elements[vertex_pos][1], elements[vertex_pos][2]
    if any(kind == "list" for kind, _ in props):
        raise FileFormatError(f"{path}: list properties on vertices are not supported")
    prop_names = [n for _, n in props]
    for coord in ("x", "y", "z"):
        if coord not in prop_names:
            raise FileFormatError(f"{path}: vertex element lacks property '{coord}'")
        kind = props[prop_names.index(coord)][0]
        if kind not in _COORD_TYPES:
            raise FileFormatError(f"{path}: coordinate '{coord}' must be float or double, got {kind}")

    if fmt == "ascii":
        rows = _read_ply_ascii(blob[offset:], elements, vertex_pos, path)
    else:
        rows = _read_ply_binary(blob[offset:], elements, vertex_pos, path)
    if len(rows) != count:
        raise FileFormatError(f"{path}: truncated vertex data: expected {count} vertices, "
                              f"found {len(rows)}")

    cols = {}
    for j, (kind, name) in enumerate(props):
        cols[name] = (kind, rows[:, j] if count else np.empty(0))
    pts = np.stack([cols[c][1] for c in ("x", "y", "z")], axis=1) if count else np.empty((0, 3))
    attrs = tuple((name, kind, np.asarray(col, dtype=_PLY_TYPES[kind]))
                  for (kind, name), col in ((p, cols[p[1]][1]) for p in props)
                  if name not in ("x", "y", "z"))
    try:
        return PointCloud(pts, attrs)
    except NonFiniteError as exc:
        raise FileFormatError(f"{path}: {exc}") from None


def _read_ply_ascii(body: bytes, elements, vertex_pos, path) -> np.ndarray:
    lines = [ln for ln in body.decode("latin-1").splitlines()]
    cursor = 0
    for pos, (name, count, props) in enumerate(elements):
        if pos == vertex_pos:
            width = len(props)
            rows = np.empty((count, width))
            for i in range(count):
                while cursor < len(lines) and not lines[cursor].split():
                    cursor += 1
                if cursor >= len(lines):
                    return rows[:i]
                tokens = lines[cursor].split()
                cursor += 1
                if len(tokens) < width:
                    raise FileFormatError(f"{path}: vertex row {i} has {len(tokens)} values, "
                                          f"expected {width}")
                try:
                    rows[i] = [float(t) for t in tokens[:width]]
                except ValueError:
                    raise FileFormatError(f"{path}: vertex row {i}: non-numeric value") from None
            return rows
        cursor += count  # skip a non-vertex element line per entry
    raise FileFormatError(f"{path}: vertex element not reached")  # pragma: no cover


def _read_ply_binary(body: bytes, elements, vertex_pos, path) -> np.ndarray:
    offset = 0
    for pos, (name, count, props) in enumerate(elements):
        if pos == vertex_pos:
            dtype = np.dtype([(n, "<" + _PLY_TYPES[k]) for k, n in props])
            have = (len(body) - offset) // dtype.itemsize
            take = min(count, max(have, 0))
            raw = np.frombuffer(body, dtype=dtype, count=take, offset=offset)
            rows = np.empty((take, len(props)))
            for j, (_, n) in enumerate(props):
                rows[:, j] = raw[n]
            return rows
        if any(kind == "list" for kind, _ in props):
            raise FileFormatError(f"{path}: cannot skip variable-length element '{name}' "
                                  "before the vertex data")
        stride = sum(np.dtype(_PLY_TYPES[k]).itemsize for k, _ in props)
        offset += stride * count
    raise FileFormatError(f"{path}: vertex element not reached")  # pragma: no cover


def write_ply(cloud: PointCloud, path, binary: bool = True):
    """Write a cloud (double-precision coordinates, attrs preserved)."""
    n = cloud.count
    header = ["ply",
              f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {n}",
              "property double x", "property double y", "property double z"]
    for name, kind, _ in cloud.attrs:
        header.append(f"property {kind} {name}")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            dtype = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            dtype += [(name, "<" + _PLY_TYPES[kind]) for name, kind, _ in cloud.attrs]
            rec = np.empty(n, dtype=dtype)
            rec["x"], rec["y"], rec["z"] = cloud.points.T
            for name, _, col in cloud.attrs:
                rec[name] = col
            fh.write(rec.tobytes())
        else:
            attr_cols = [(col, kind) for _, kind, col in cloud.attrs]
            for i in range(n):
                parts = [f"{v:.9g}" for v in cloud.points[i]]
                for col, kind in attr_cols:
                    parts.append(f"{col[i]:.9g}" if kind in _COORD_TYPES else str(int(col[i])))
                fh.write((" ".join(parts) + "\n").encode("ascii"))


def read_xyz(path) -> PointCloud:
    """Whitespace-delimited 'x y z' text; '#' comments and blanks allowed."""
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 3:
                raise FileFormatError(f"{path}:{lineno}: expected 3 coordinates, got {len(tokens)}")
            try:
                pts.append([float(t) for t in tokens])
            except ValueError:
                raise FileFormatError(f"{path}:{lineno}: non-numeric coordinate") from None
    try:
        return PointCloud(np.asarray(pts).reshape(-1, 3))
    except NonFiniteError as exc:
        raise FileFormatError(f"{path}: {exc}") from None


def write_xyz(cloud: PointCloud, path):
    with open(path, "w", encoding="utf-8") as fh:
        for p in cloud.points:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def read_cloud(path) -> PointCloud:
    """Dispatch on extension: .ply or .xyz."""
    p = str(path)
    if p.lower().endswith(".ply"):
        return read_ply(path)
    if p.lower().endswith(".xyz"):
        return read_xyz(path)
    raise FileFormatError(f"{path}: unknown cloud format (expected .ply or .xyz)")


def write_cloud(cloud: PointCloud, path, binary: bool = True):
    p = str(path)
    if p.lower().endswith(".ply"):
        write_ply(cloud, path, binary=binary)
    elif p.lower().endswith(".xyz"):
        write_xyz(cloud, path)
    else:
        raise FileFormatError(f"{path}: unknown cloud format (expected .ply or .xyz)")


def read_correspondences(path, conf_threshold: float = 0.3) -> CorrespondenceSet:
    """Rows of 'u v [confidence]'; confidence defaults to 1.0.

    Rows below ``conf_threshold`` are dropped here, at load time.
    """
    u, v, c = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) not in (2, 3):
                raise FileFormatError(f"{path}:{lineno}: expected 'u v [confidence]'")
            try:
                ui, vi = int(tokens[0]), int(tokens[1])
                conf = float(tokens[2]) if len(tokens) == 3 else 1.0
            except ValueError:
                raise FileFormatError(f"{path}:{lineno}: malformed correspondence row") from None
            if ui < 0 or vi < 0:
                raise FileFormatError(f"{path}:{lineno}: negative index")
            if not np.isfinite(conf):
                raise FileFormatError(f"{path}:{lineno}: non-finite confidence")
            if conf < conf_threshold:
                continue
            u.append(ui)
            v.append(vi)
            c.append(conf)
    return CorrespondenceSet(np.array(u, dtype=np.int64), np.array(v, dtype=np.int64),
                             np.array(c, dtype=np.float64))


def read_warp(path) -> np.ndarray:
    """Per-point displacement rows 'dx dy dz'."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 3:
                raise FileFormatError(f"{path}:{lineno}: expected 3 components, got {len(tokens)}")
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise FileFormatError(f"{path}:{lineno}: non-numeric component") from None
    warp = np.asarray(rows, dtype=np.float64).reshape(-1, 3)
    if not np.isfinite(warp).all():
        bad = int(np.argwhere(~np.isfinite(warp).all(axis=1))[0][0])
        raise FileFormatError(f"{path}: non-finite warp component at row {bad}")
    return warp


def write_warp(warp: np.ndarray, path):
    warp = np.asarray(warp, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for row in warp:
            fh.write(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g}\n")


# ---------------------------------------------------------------------------
# run reports


def build_report(result, metrics=None, command: str = "register") -> dict:
    """Report dict for a RegistrationResult; schema-stable key names."""
    cfg = result.pyramid.cfg
    return {
        "schema": REPORT_SCHEMA,
        "command": command,
        "config": cfg.as_dict(),
        "levels": [
            {
                "level": t.level,
                "iterations": t.iterations,
                "stop_reason": t.stop_reason,
                "final_cost": t.final_cost,
                "final_total_cost": t.final_total_cost,
                "mean_alpha": t.mean_alpha,
            }
            for t in result.traces
        ],
        "totals": {
            "iterations": result.total_iterations,
            "wall_seconds": result.wall_seconds,
        },
        "metrics": metrics.as_dict() if metrics is not None else None,
    }


def build_metrics_report(metrics, count: int) -> dict:
    return {
        "schema": METRICS_SCHEMA,
        "command": "eval",
        "points": count,
        "metrics": metrics.as_dict(),
    }


def write_report(report: dict, path):
    validate_report(report)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    validate_report(report)
    return report


def _require(cond: bool, msg: str):
    if not cond:
        raise FileFormatError(f"invalid report: {msg}")


def validate_report(report: dict):
    """Check the documented report layout; raises FileFormatError."""
    _require(isinstance(report, dict), "not an object")
    schema = report.get("schema")
    if schema == METRICS_SCHEMA:
        _require(isinstance(report.get("points"), int), "'points' must be an integer")
        _require(isinstance(report.get("metrics"), dict), "'metrics' must be an object")
        for key in ("epe", "acc_strict", "acc_relaxed", "outlier"):
            _require(isinstance(report["metrics"].get(key), (int, float)),
                     f"metrics.{key} must be a number")
        return
    _require(schema == REPORT_SCHEMA, f"unknown schema '{schema}'")
    _require(isinstance(report.get("config"), dict), "'config' must be an object")
    levels = report.get("levels")
    _require(isinstance(levels, list) and levels, "'levels' must be a non-empty list")
    for entry in levels:
        _require(isinstance(entry, dict), "level entry must be an object")
        _require(isinstance(entry.get("level"), int), "level index must be an integer")
        _require(isinstance(entry.get("iterations"), int), "iterations must be an integer")
        _require(entry.get("stop_reason") in ("max_iter", "cost_threshold", "stalled"),
                 f"bad stop_reason '{entry.get('stop_reason')}'")
        for key in ("final_cost", "final_total_cost", "mean_alpha"):
            _require(isinstance(entry.get(key), (int, float)), f"{key} must be a number")
    totals = report.get("totals")
    _require(isinstance(totals, dict), "'totals' must be an object")
    _require(isinstance(totals.get("iterations"), int), "totals.iterations must be an integer")
    _require(isinstance(totals.get("wall_seconds"), (int, float)),
             "totals.wall_seconds must be a number")
    metrics = report.get("metrics")
    if metrics is not None:
        _require(isinstance(metrics, dict), "'metrics' must be an object or null")


def write_levels_csv(report: dict, path):
    """Per-level delimited summary next to the JSON report."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("level,iterations,stop_reason,final_cost,final_total_cost,mean_alpha\n")
        for t in report["levels"]:
            fh.write(f"{t['level']},{t['iterations']},{t['stop_reason']},"
                     f"{t['final_cost']:.12g},{t['final_total_cost']:.12g},"
                     f"{t['mean_alpha']:.12g}\n")


def write_metrics_csv(metrics, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epe,acc_strict,acc_relaxed,outlier\n")
        fh.write(f"{metrics.epe:.12g},{metrics.acc_strict:.12g},"
                 f"{metrics.acc_relaxed:.12g},{metrics.outlier:.12g}\n")
