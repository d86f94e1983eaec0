"""File formats: ASCII PLY and CSV clouds, trajectory exports, JSON configs.

Floats are written with repr-style shortest round-trip formatting, so
fixed-seed runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .geometry import PointCloud


def _fmt(v: float) -> str:
    return repr(float(v))


def write_ply(path, cloud: PointCloud | np.ndarray, labels=None) -> None:
    """Write an ASCII PLY cloud: x y z and an optional integer label."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    if labels is None and isinstance(cloud, PointCloud):
        labels = cloud.labels
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property float x", "property float y", "property float z"]
    if labels is not None:
        lines.append("property int label")
    lines.append("end_header")
    for i, p in enumerate(pts):
        row = f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}"
        if labels is not None:
            row += f" {int(labels[i])}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ply(path) -> PointCloud:
    """Read an ASCII PLY written by write_ply (x y z [label])."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n = None
    has_label = False
    body_at = None
    for i, line in enumerate(text[1:], start=1):
        tok = line.strip().split()
        if tok[:2] == ["element", "vertex"]:
            n = int(tok[2])
        elif tok[:2] == ["property", "int"] and tok[2] == "label":
            has_label = True
        elif tok == ["end_header"]:
            body_at = i + 1
            break
    if n is None or body_at is None:
        raise ValueError(f"{path}: malformed PLY header")
    pts = np.empty((n, 3))
    labels = np.empty(n, dtype=int) if has_label else None
    for j in range(n):
        tok = text[body_at + j].split()
        pts[j] = [float(tok[0]), float(tok[1]), float(tok[2])]
        if has_label:
            labels[j] = int(tok[3])
    return PointCloud(pts, labels)


def write_cloud_csv(path, cloud: PointCloud | np.ndarray, header: bool = True) -> None:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(["x", "y", "z"])
        for p in pts:
            w.writerow([_fmt(p[0]), _fmt(p[1]), _fmt(p[2])])


def read_cloud_csv(path) -> PointCloud:
    """Read x,y,z per line; a non-numeric first row is treated as a header."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(row[0]), float(row[1]), float(row[2])])
            except ValueError:
                if i == 0:
                    continue
                raise
    return PointCloud(np.asarray(rows, dtype=float))


def write_trajectories_csv(path, trajectories) -> None:
    """One row per waypoint: finger_id, waypoint_index, x, y, z."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["finger_id", "waypoint_index", "x", "y", "z"])
        for traj in trajectories:
            for i, p in enumerate(traj.waypoints):
                w.writerow([traj.finger_id, i, _fmt(p[0]), _fmt(p[1]), _fmt(p[2])])


def write_trajectories_ply(path, trajectories) -> None:
    """Polyline PLY: all waypoints as vertices, one edge per path segment."""
    verts = []
    edges = []
    for traj in trajectories:
        base = len(verts)
        verts.extend(np.asarray(traj.waypoints, float))
        edges.extend((base + i, base + i + 1) for i in range(len(traj.waypoints) - 1))
    lines = ["ply", "format ascii 1.0", f"element vertex {len(verts)}",
             "property float x", "property float y", "property float z",
             f"element edge {len(edges)}", "property int vertex1",
             "property int vertex2", "end_header"]
    lines += [f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}" for p in verts]
    lines += [f"{a} {b}" for a, b in edges]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def dump_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
