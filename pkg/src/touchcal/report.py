"""Artifact emission: CSV tables, JSON reports and the deviation scatter SVG.

Every writer here is byte-deterministic for identical inputs; floats go
through fixed format strings, never through ``str`` of numpy scalars.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .emulator import Screen
from .pipeline import QUADRANTS, CalibrationSample, DeviationReport

SVG_PAD_MM = 20.0
BASE_BOX_MM = (80.0, 50.0)


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _pm(stats: dict) -> str:
    if not stats or stats.get("mean") is None:
        return "n/a"
    return f"{stats['mean']:.2f} ± {stats['std']:.2f}"


def write_table1_csv(reports: Mapping[str, DeviationReport], path: str | Path) -> None:
    """Models x quadrants, each cell "mean ± std" in cm, plus the pooled mean."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["model", *QUADRANTS, "Mean"])
        for tag, rep in reports.items():
            w.writerow([tag, *(_pm(rep.quadrants[q]) for q in QUADRANTS), _pm(rep.overall)])


def _num(v: Optional[float], fmt: str = ".4f") -> str:
    return "" if v is None else format(v, fmt)


def write_summary_csv(reports: Sequence[DeviationReport], path: str | Path) -> None:
    """One row per (model, duration) evaluation with the pooled 2D deviation stats."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["model", "duration_s", "n_targets", "misses",
                    "mean_cm", "std_cm", "median_cm", "max_cm"])
        for rep in reports:
            o = rep.overall
            w.writerow([rep.model, f"{rep.duration:g}", rep.n_targets, rep.miss_count,
                        _num(o["mean"]), _num(o["std"]), _num(o["median"]), _num(o["max"])])


def write_error_grid_csv(rows: Sequence[tuple], path: str | Path) -> None:
    """Raw (ix, iy, x, y, deviation) lattice; a missed touch leaves the last field empty."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["ix", "iy", "x", "y", "deviation_cm"])
        for ix, iy, x, y, d in rows:
            w.writerow([ix, iy, f"{x:.6f}", f"{y:.6f}", _num(d)])


def write_joint_csv(reports: Sequence[DeviationReport], path: str | Path,
                    names: Optional[Sequence[str]] = None) -> None:
    """Long-format per-joint readback deviation; ``names`` fixes the row order."""
    if names is None:
        names = list(reports[0].joints) if reports else []
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["model", "duration_s", "joint", "mean_abs_deg", "median_abs_deg"])
        for rep in reports:
            for n in names:
                j = rep.joints[n]
                w.writerow([rep.model, f"{rep.duration:g}", n,
                            f"{j['mean_abs']:.4f}", f"{j['median_abs']:.4f}"])


def emit_scatter_svg(samples: Sequence[CalibrationSample], screen: Screen, path: str | Path,
                     base_xy: Optional[Sequence[float]] = None, title: str = "") -> None:
    """Targets (red) joined to their hits (blue) on a to-scale screen outline.

    Drawing units are millimetres. The screen's y = 0 edge, the one nearest
    the robot, is drawn at the bottom; ``base_xy`` (screen metres, usually
    negative y) places the arm-base box. Misses draw only the target.
    """
    W, H = 1000.0 * screen.width, 1000.0 * screen.height
    x0, y0, x1, y1 = 0.0, 0.0, W, H
    if base_xy is not None:
        bx, by = 1000.0 * float(base_xy[0]), 1000.0 * float(base_xy[1])
        bw, bh = BASE_BOX_MM
        x0, x1 = min(x0, bx - bw / 2), max(x1, bx + bw / 2)
        y0, y1 = min(y0, by - bh / 2), max(y1, by + bh / 2)
    x0, y0, x1, y1 = x0 - SVG_PAD_MM, y0 - SVG_PAD_MM, x1 + SVG_PAD_MM, y1 + SVG_PAD_MM

    def sx(x):
        return f"{1000.0 * x:.2f}"

    def sy(y):
        return f"{H - 1000.0 * y:.2f}"

    view = f"{x0:.2f} {H - y1:.2f} {x1 - x0:.2f} {y1 - y0:.2f}"
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{view}" '
           f'width="{x1 - x0:.2f}mm" height="{y1 - y0:.2f}mm">']
    if title:
        out.append(f"<title>{title}</title>")
    out.append(f'<rect x="0.00" y="0.00" width="{W:.2f}" height="{H:.2f}" '
               'fill="none" stroke="black" stroke-width="1"/>')
    if base_xy is not None:
        bw, bh = BASE_BOX_MM
        out.append(f'<rect x="{bx - bw / 2:.2f}" y="{H - by - bh / 2:.2f}" width="{bw:.2f}" '
                   f'height="{bh:.2f}" fill="#dddddd" stroke="black" stroke-width="1"/>')
        out.append(f'<text x="{bx:.2f}" y="{H - by + 4:.2f}" font-size="12" '
                   'text-anchor="middle">NICO arm</text>')
    segs, targets, hits = [], [], []
    for s in samples:
        t = s.target_screen
        targets.append(f'<circle cx="{sx(t[0])}" cy="{sy(t[1])}" r="2"/>')
        if s.contact_screen is not None:
            c = s.contact_screen
            segs.append(f'<line x1="{sx(t[0])}" y1="{sy(t[1])}" x2="{sx(c[0])}" y2="{sy(c[1])}"/>')
            hits.append(f'<circle cx="{sx(c[0])}" cy="{sy(c[1])}" r="2"/>')
    if segs:
        out += ['<g stroke="#555555" stroke-width="0.8">', *segs, "</g>"]
    if targets:
        out += ['<g fill="red">', *targets, "</g>"]
    if hits:
        out += ['<g fill="blue">', *hits, "</g>"]
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def base_on_screen(screen: Screen, base_world) -> np.ndarray:
    """Arm base projected into screen metres."""
    return screen.to_screen(np.asarray(base_world, dtype=float))[:2]
