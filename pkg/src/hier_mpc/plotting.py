"""Static SVG figures for closed-loop runs.

Plots are written as plain SVG text so no plotting library is needed.  They
are presentation only; nothing here feeds back into the controller.
"""

from __future__ import annotations

import itertools
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .convex_sets import HPolytope
from .sim import ClosedLoopLog
from .scenario import Setup

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def polytope_vertices(P: HPolytope, tol: float = 1e-9) -> np.ndarray:
    """Vertices of a bounded H-polytope by enumerating n-subsets of its faces.

    Fine for the handful of faces an obstacle has; not meant for large sets.
    """
    n = P.dim
    pts = []
    for rows in itertools.combinations(range(P.n_faces), n):
        F = P.F[list(rows)]
        if abs(np.linalg.det(F)) < 1e-12:
            continue
        x = np.linalg.solve(F, P.g[list(rows)])
        if np.all(P.F @ x <= P.g + tol):
            pts.append(x)
    return np.array(pts).reshape(-1, n)


def planar_outline(P: HPolytope, dims=(0, 1)) -> np.ndarray:
    """Counter-clockwise outline of the projection of P onto two coordinates."""
    V = polytope_vertices(P)
    if V.shape[0] == 0:
        return V
    Y = V[:, list(dims)]
    try:
        hull = ConvexHull(Y)
    except QhullError:
        return Y
    return Y[hull.vertices]


def _arena_outline(X: HPolytope, idx) -> np.ndarray:
    """Outline of the rows of X that only involve the coordinates ``idx``."""
    others = np.ones(X.dim, dtype=bool)
    others[list(idx)] = False
    keep = np.all(X.F[:, others] == 0, axis=1) & np.any(X.F[:, list(idx)] != 0, axis=1)
    if not np.any(keep):
        return np.empty((0, 2))
    return planar_outline(HPolytope(X.F[keep][:, list(idx)], X.g[keep]))


class _Panel:
    """Linear map from data coordinates into a rectangle of the canvas."""

    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim = xlim
        lo, hi = ylim
        if hi - lo < 1e-12:
            lo, hi = lo - 1.0, hi + 1.0
        self.ylim = (lo, hi)

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (np.asarray(x) - lo) / (hi - lo) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (np.asarray(y) - lo) / (hi - lo) * self.h

    def polyline(self, xs, ys, color, width=1.5, dash=None) -> str:
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.px(xs), self.py(ys)))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'

    def polygon(self, pts, fill, stroke, dash=None, opacity=1.0) -> str:
        s = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.px(pts[:, 0]), self.py(pts[:, 1])))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polygon points="{s}" fill="{fill}" fill-opacity="{opacity}" stroke="{stroke}"{extra}/>'

    def frame(self, title, xlabel, ylabel) -> list[str]:
        x0, y0, w, h = self.x0, self.y0, self.w, self.h
        out = [
            f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#444"/>',
            f'<text x="{x0 + w / 2}" y="{y0 - 8}" text-anchor="middle" font-size="13">{escape(title)}</text>',
            f'<text x="{x0 + w / 2}" y="{y0 + h + 32}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
            f'<text x="{x0 - 42}" y="{y0 + h / 2}" text-anchor="middle" font-size="11" '
            f'transform="rotate(-90 {x0 - 42} {y0 + h / 2})">{escape(ylabel)}</text>',
        ]
        for v in np.linspace(*self.xlim, 5):
            out.append(f'<text x="{self.px(v):.1f}" y="{y0 + h + 14}" text-anchor="middle" font-size="9">{v:.3g}</text>')
        for v in np.linspace(*self.ylim, 5):
            out.append(f'<text x="{x0 - 4}" y="{self.py(v) + 3:.1f}" text-anchor="end" font-size="9">{v:.3g}</text>')
        return out


def _document(width, height, body: list[str]) -> str:
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">'
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"


def _mode_colors(setup: Setup) -> dict:
    return {pm.name: PALETTE[i % len(PALETTE)] for i, pm in enumerate(setup.modes)}


def _segments_by_mode(log: ClosedLoopLog):
    """Consecutive runs of steps sharing a mode, overlapping by one point."""
    steps = log.steps
    start = 0
    for i in range(1, len(steps) + 1):
        if i == len(steps) or steps[i].mode != steps[start].mode:
            yield steps[start].mode, steps[start : min(i + 1, len(steps))]
            start = i


def trajectory_svg(log: ClosedLoopLog, setup: Setup) -> str:
    """Top-down path with raw obstacles and each mode's enlarged obstacles."""
    bundle = setup.bundle
    sc = setup.scenario
    pos = list(bundle.position_idx)
    colors = _mode_colors(setup)
    if len(pos) < 2:
        raise ValueError("top-down view needs at least two output coordinates")
    Y = np.array([s.x[pos] for s in log.steps])
    arena = _arena_outline(sc.X, pos[:2])
    pts = [Y[:, :2], sc.start[pos][None, :2], sc.goal[pos][None, :2]]
    if arena.shape[0] >= 3:
        pts.append(arena)
    allp = np.vstack(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    pad = 0.05 * max(hi - lo)
    lo, hi = lo - pad, hi + pad
    span = max(hi - lo)
    panel = _Panel(60, 40, 520 * (hi[0] - lo[0]) / span, 520 * (hi[1] - lo[1]) / span, (lo[0], hi[0]), (lo[1], hi[1]))
    body = panel.frame(f"{sc.name}: path (seed {log.seed}, {log.outcome})", "y0", "y1")
    if arena.shape[0] >= 3:
        body.append(panel.polygon(arena, "none", "#444"))
    for ob in setup.obstacles:
        outline = planar_outline(ob.base)
        if outline.shape[0] >= 3:
            body.append(panel.polygon(outline, "#888", "#444", opacity=0.6))
        for pm in setup.modes:
            grown = planar_outline(HPolytope(ob.E, ob.enlarged[pm.name]))
            if grown.shape[0] >= 3:
                body.append(panel.polygon(grown, "none", colors[pm.name], dash="4,3"))
    for mode, seg in _segments_by_mode(log):
        P = np.array([s.x[pos] for s in seg])
        body.append(panel.polyline(P[:, 0], P[:, 1], colors.get(mode, "#000")))
    for label, p, color in (("start", sc.start[pos], "#000"), ("goal", sc.goal[pos], "#2ca02c")):
        cx, cy = panel.px(p[0]), panel.py(p[1])
        body.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{color}"/>')
        body.append(f'<text x="{cx + 6:.2f}" y="{cy - 6:.2f}" font-size="10">{label}</text>')
    body += _legend(colors, panel.x0 + panel.w + 12, panel.y0)
    return _document(panel.x0 + panel.w + 110, panel.y0 + panel.h + 50, body)


def _legend(colors: dict, x, y) -> list[str]:
    out = []
    for i, (name, color) in enumerate(colors.items()):
        yy = y + 14 * i + 8
        out.append(f'<line x1="{x}" y1="{yy}" x2="{x + 16}" y2="{yy}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x + 20}" y="{yy + 3}" font-size="10">{escape(name)}</text>')
    return out


def altitude_svg(log: ClosedLoopLog, setup: Setup) -> str:
    """Third output coordinate against time (altitude for the quadcopter)."""
    pos = list(setup.bundle.position_idx)
    if len(pos) < 3:
        raise ValueError("altitude profile needs a third output coordinate")
    t = np.array([s.t for s in log.steps])
    z = np.array([s.x[pos[2]] for s in log.steps])
    panel = _Panel(60, 40, 600, 220, (t[0], max(t[-1], t[0] + 1e-9)), (z.min(), z.max()))
    body = panel.frame("altitude", "t [s]", "y2")
    body.append(panel.polyline(t, z, PALETTE[0]))
    return _document(700, 310, body)


def timeline_svg(log: ClosedLoopLog, setup: Setup) -> str:
    """Speed, active mode and inputs against time, stacked."""
    bundle = setup.bundle
    colors = _mode_colors(setup)
    names = list(colors)
    steps = [s for s in log.steps if np.all(np.isfinite(s.u))] or log.steps
    t = np.array([s.t for s in steps])
    tlim = (t[0], max(t[-1], t[0] + 1e-9))
    vel = list(bundle.velocity_idx)
    speed = np.array([np.linalg.norm(s.x[vel]) for s in steps])
    U = np.array([s.u for s in steps])
    body = []
    p1 = _Panel(60, 40, 600, 130, tlim, (0.0, max(speed.max(), 1e-6)))
    body += p1.frame("speed", "", "|v|")
    body.append(p1.polyline(t, speed, PALETTE[0]))
    p2 = _Panel(60, 230, 600, 80, tlim, (-0.5, len(names) - 0.5))
    body += p2.frame("operation mode", "", "mode")
    for mode, seg in _segments_by_mode(log):
        ts = [s.t for s in seg]
        k = names.index(mode) if mode in names else -1
        body.append(p2.polyline(ts, [k] * len(ts), colors.get(mode, "#000"), width=4))
    for i, nm in enumerate(names):
        body.append(f'<text x="{p2.x0 + p2.w + 6}" y="{p2.py(i) + 3:.1f}" font-size="10">{escape(nm)}</text>')
    finite = U[np.isfinite(U).all(axis=1)] if U.size else U
    ulo = float(finite.min()) if finite.size else -1.0
    uhi = float(finite.max()) if finite.size else 1.0
    p3 = _Panel(60, 370, 600, 160, tlim, (ulo, uhi))
    body += p3.frame("inputs", "t [s]", "u")
    for i in range(bundle.m):
        body.append(p3.polyline(t, U[:, i], PALETTE[(i + 2) % len(PALETTE)]))
    body += _legend({lab: PALETTE[(i + 2) % len(PALETTE)] for i, lab in enumerate(bundle.input_labels)}, p3.x0 + p3.w + 12, p3.y0)
    return _document(760, 580, body)


def write_run_plots(log: ClosedLoopLog, setup: Setup, out_dir) -> list[Path]:
    """Write every figure that applies to the run's model; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    n_out = len(setup.bundle.position_idx)
    figures = [("timeline.svg", timeline_svg)]
    if n_out >= 2:
        figures.append(("path.svg", trajectory_svg))
    if n_out >= 3:
        figures.append(("altitude.svg", altitude_svg))
    for name, fn in figures:
        path = out_dir / name
        path.write_text(fn(log, setup))
        written.append(path)
    return written
