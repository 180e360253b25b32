"""Trace CSV, SVG ellipse plots and comparison reports."""

import csv
import json
import os

import numpy as np

from ..kinematics import joint_positions
from ..tensor import mandel_fold, mandel_index
from .scenario import TrackingTrace

SEGMENTS = 40


def _fmt(v):
    return format(float(v), ".17g")


def trace_header(n, D=2):
    r, c, _ = mandel_index(D)
    names = [f"{i + 1}{j + 1}" for i, j in zip(r, c)]
    return (
        ["t"]
        + [f"q{i + 1}" for i in range(n)]
        + [f"dq{i + 1}" for i in range(n)]
        + [f"m{s}" for s in names]
        + [f"mt{s}" for s in names]
        + ["dist", "x1", "x2"]
    )


def write_trace_csv(trace, path):
    """Write a trace with a fixed header; floats use 17 significant digits.

    Off-diagonal ellipsoid columns hold Mandel entries (scaled by sqrt(2)).
    """
    n = trace.q.shape[1]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(trace_header(n))
            for k in range(len(trace)):
                row = np.concatenate([[trace.t[k]], trace.q[k], trace.qdot[k], trace.m[k],
                                      trace.m_target[k], [trace.dist[k]], trace.x[k]])
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_trace_csv(path):
    """Read back the columns written by :func:`write_trace_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    n = sum(h.startswith("q") for h in header)
    Dt = sum(h.startswith("mt") for h in header)
    cols = np.cumsum([0, 1, n, n, Dt, Dt, 1, 2])
    part = [data[:, a:b] for a, b in zip(cols[:-1], cols[1:])]
    return TrackingTrace(
        t=part[0][:, 0], q=part[1], qdot=part[2], m=part[3], m_target=part[4], dist=part[5][:, 0],
        x=part[6], x_target=np.full_like(part[6], np.nan), residuals={},
    )


def ellipse_points(M, center=(0.0, 0.0), scale=1.0, segments=SEGMENTS):
    """Vertices of the ellipse ``{c + scale * M^1/2 u : |u| = 1}``.

    Returns ``segments`` points; joined cyclically they form a closed
    polyline with ``segments`` segments.
    """
    w, V = np.linalg.eigh(np.asarray(M, dtype=float))
    th = 2 * np.pi * np.arange(segments) / segments
    circle = np.stack([np.cos(th), np.sin(th)])
    return np.asarray(center, dtype=float) + scale * ((V * np.sqrt(np.maximum(w, 0.0))) @ circle).T


def _poly(points, flip, **style):
    pts = " ".join(f"{x:.5f},{flip(y):.5f}" for x, y in points)
    attrs = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in style.items())
    return f'<polygon points="{pts}" {attrs}/>'


def _line(points, flip, **style):
    pts = " ".join(f"{x:.5f},{flip(y):.5f}" for x, y in points)
    attrs = " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in style.items())
    return f'<polyline points="{pts}" fill="none" {attrs}/>'


def svg_document(elements, bounds, size=600):
    xmin, ymin, xmax, ymax = bounds
    pad = 0.05 * max(xmax - xmin, ymax - ymin, 1e-9)
    vb = f"{xmin - pad:.5f} {-(ymax + pad):.5f} {xmax - xmin + 2 * pad:.5f} {ymax - ymin + 2 * pad:.5f}"
    body = "\n".join(elements)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="{vb}">\n'
            f"{body}\n</svg>\n")


def write_svg(trace, chain, path, ellipse_scale=0.25, snapshots=5):
    """Robot postures with current (red) and desired (green) ellipsoids at
    the tip, for ``snapshots`` evenly spaced rows of the trace."""
    flip = lambda y: -y
    idx = np.unique(np.linspace(0, len(trace) - 1, snapshots).astype(int))
    elems, pts = [], []
    reach = float(np.sum(chain.lengths))
    for k in idx:
        P = joint_positions(chain, trace.q[k])
        tip = P[-1]
        E = ellipse_points(mandel_fold(trace.m[k]), tip, ellipse_scale)
        Et = ellipse_points(mandel_fold(trace.m_target[k]), tip, ellipse_scale)
        shade = 0.3 + 0.7 * (k - idx[0]) / max(idx[-1] - idx[0], 1)
        elems.append(_line(P, flip, stroke=f"rgb({int(80 * shade)},{int(80 * shade)},{int(80 * shade)})",
                           stroke_width=0.02 * reach / 4))
        elems.append(_poly(Et, flip, fill="none", stroke="green", stroke_width=0.01 * reach / 4))
        elems.append(_poly(E, flip, fill="none", stroke="red", stroke_width=0.01 * reach / 4))
        pts += [P, E, Et]
    elems.append(_line(trace.x, flip, stroke="blue", stroke_width=0.01 * reach / 4))
    allp = np.vstack(pts + [trace.x])
    bounds = (*allp.min(0), *allp.max(0))
    _write(path, svg_document(elems, bounds))


def write_ellipse_svg(M, path, center=(0.0, 0.0), scale=1.0):
    """A single ellipse; ``M = I`` gives a circle of radius ``scale``."""
    E = ellipse_points(M, center, scale)
    r = np.abs(E - center).max()
    c = np.asarray(center, dtype=float)
    _write(path, svg_document([_poly(E, lambda y: -y, fill="none", stroke="black", stroke_width=0.01 * r)],
                              (c[0] - r, c[1] - r, c[0] + r, c[1] + r)))


def _write(path, text):
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def comparison_report(results):
    """Summary of named traces (or error strings for aborted runs)."""
    report = {"methods": {}}
    for name, res in results.items():
        if isinstance(res, TrackingTrace):
            report["methods"][name] = {
                "final_distance": res.final_distance,
                "initial_distance": float(res.dist[0]),
                "steps": len(res),
                "monotone": bool(np.all(np.diff(res.dist) <= 0)),
                "distance": [float(d) for d in res.dist],
            }
        else:
            report["methods"][name] = {"error": str(res)}
    return report


def write_comparison(results, out_dir):
    """Write ``report.json`` and one distance curve column per method."""
    os.makedirs(out_dir, exist_ok=True)
    report = comparison_report(results)
    _write(os.path.join(out_dir, "report.json"), json.dumps(report, indent=1))
    traces = {k: v for k, v in results.items() if isinstance(v, TrackingTrace)}
    T = max((len(v) for v in traces.values()), default=0)
    with open(os.path.join(out_dir, "distances.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + list(traces))
        for k in range(T):
            w.writerow([k] + [_fmt(v.dist[k]) if k < len(v) else "" for v in traces.values()])
    return report
