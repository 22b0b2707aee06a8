"""Minimal SVG figures: loss curves, error-vs-loss scatter and the log-log fit."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from xml.sax.saxutils import escape

from pinnlab.analysis import FitResult, fit_convergence
from pinnlab.train import read_table

log = logging.getLogger(__name__)

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 30, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    ticks, v = [], first
    while v <= hi + 1e-12 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


class Figure:
    """One panel with linear axes. Log plots are drawn by passing log10 data."""

    def __init__(self, xs, ys, title: str, xlabel: str, ylabel: str):
        xs, ys = list(xs), list(ys)
        pad = lambda lo, hi: (lo - 0.05 * (hi - lo or 1), hi + 0.05 * (hi - lo or 1))
        self.x0, self.x1 = pad(min(xs), max(xs))
        self.y0, self.y1 = pad(min(ys), max(ys))
        self.parts: list[str] = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def px(self, x: float) -> float:
        return LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)

    def py(self, y: float) -> float:
        return H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)

    def polyline(self, xs, ys, color=COLORS[0], width=1.5, css_class="series"):
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys))
        self.parts.append(f'<polyline class="{css_class}" fill="none" stroke="{color}" '
                          f'stroke-width="{width}" points="{pts}"/>')

    def scatter(self, xs, ys, color=COLORS[0]):
        for x, y in zip(xs, ys):
            self.parts.append(f'<circle class="point" cx="{self.px(x):.2f}" cy="{self.py(y):.2f}" '
                              f'r="3" fill="{color}"/>')

    def text(self, x_px, y_px, s, anchor="start", css_class="note"):
        self.parts.append(f'<text class="{css_class}" x="{x_px:.1f}" y="{y_px:.1f}" '
                          f'text-anchor="{anchor}" font-size="12">{escape(s)}</text>')

    def _axes(self, xfmt, yfmt) -> list[str]:
        out = [f'<rect x="{LEFT}" y="{TOP}" width="{W - LEFT - RIGHT}" height="{H - TOP - BOTTOM}" '
               'fill="none" stroke="#333"/>']
        for t in _nice_ticks(self.x0, self.x1):
            x = self.px(t)
            out.append(f'<line x1="{x:.1f}" y1="{H - BOTTOM}" x2="{x:.1f}" y2="{H - BOTTOM + 5}" stroke="#333"/>')
            out.append(f'<text x="{x:.1f}" y="{H - BOTTOM + 18}" text-anchor="middle" font-size="11">'
                       f'{escape(xfmt(t))}</text>')
        for t in _nice_ticks(self.y0, self.y1):
            y = self.py(t)
            out.append(f'<line x1="{LEFT - 5}" y1="{y:.1f}" x2="{LEFT}" y2="{y:.1f}" stroke="#333"/>')
            out.append(f'<text x="{LEFT - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">'
                       f'{escape(yfmt(t))}</text>')
        out.append(f'<text x="{(LEFT + W - RIGHT) / 2}" y="{H - 10}" text-anchor="middle" '
                   f'font-size="13">{escape(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{(TOP + H - BOTTOM) / 2}" text-anchor="middle" font-size="13" '
                   f'transform="rotate(-90 16 {(TOP + H - BOTTOM) / 2})">{escape(self.ylabel)}</text>')
        out.append(f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(self.title)}</text>')
        return out

    def save(self, path, xfmt=lambda v: f"{v:g}", yfmt=lambda v: f"{v:g}") -> Path:
        body = "\n".join(self._axes(xfmt, yfmt) + self.parts)
        svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
               f'viewBox="0 0 {W} {H}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')
        path = Path(path)
        path.write_text(svg)
        return path


def loss_curve(runs: dict[str, list[dict]], path) -> Path:
    """Training loss against step on a log10 axis, one line per run."""
    series = {}
    for name, recs in runs.items():
        pts = [(int(r["step"]), float(r["loss_total"])) for r in recs
               if r["loss_total"] not in ("", None) and float(r["loss_total"]) > 0]
        if pts:
            series[name] = pts
    if not series:
        raise ValueError("no loss records to plot")
    xs = [s for pts in series.values() for s, _ in pts]
    ys = [math.log10(v) for pts in series.values() for _, v in pts]
    fig = Figure(xs, ys, "Training loss", "step", "log10 loss")
    for k, (name, pts) in enumerate(sorted(series.items())):
        fig.polyline([s for s, _ in pts], [math.log10(v) for _, v in pts], COLORS[k % len(COLORS)])
    return fig.save(path)


def error_scatter(pairs, path) -> Path:
    if not pairs:
        raise ValueError("no (loss, error) pairs to plot")
    fig = Figure([p[0] for p in pairs], [p[1] for p in pairs], "L2 error vs empirical loss",
                 "empirical loss", "L2 error")
    fig.scatter([p[0] for p in pairs], [p[1] for p in pairs])
    return fig.save(path)


def loglog_fit(pairs, path, fit: FitResult | None = None) -> Path:
    """log10-log10 scatter; overlays the least-squares line and its (n, C) when a fit is given."""
    if not pairs:
        raise ValueError("no (loss, error) pairs to plot")
    lx = [math.log10(p[0]) for p in pairs]
    ly = [math.log10(p[1]) for p in pairs]
    fig = Figure(lx, ly, "L2 error vs empirical loss (base 10 log scale)", "log10 loss", "log10 L2 error")
    fig.scatter(lx, ly)
    if fit is not None:
        a, b = min(lx), max(lx)
        fig.polyline([a, b], [fit.n * a + fit.log10C, fit.n * b + fit.log10C], COLORS[1], 2.0, "fit")
        fig.parts.append(f'<desc id="fit" data-n="{fit.n!r}" data-log10C="{fit.log10C!r}"/>')
        fig.text(LEFT + 10, TOP + 18, f"log10(err) = {fit.n:.3f} log10(loss) {fit.log10C:+.3f}")
        fig.text(LEFT + 10, TOP + 34, f"n = {fit.n:.3f}, C = {fit.C:.3g}")
    return fig.save(path)


def table_pairs(rows, loss_col: str = "loss", err_col: str = "err") -> list[tuple[float, float]]:
    pairs = []
    for r in rows:
        if r.get("status", "ok") not in ("ok", ""):
            continue
        try:
            lo, er = float(r[loss_col]), float(r[err_col])
        except (KeyError, TypeError, ValueError):
            continue
        if lo > 0 and er > 0 and math.isfinite(lo) and math.isfinite(er):
            pairs.append((lo, er))
    return pairs


def emit_plots(directory, table: str | None = None, loss_col: str = "loss", err_col: str = "err") -> list[Path]:
    """Write loss_curve.svg, error_vs_loss.svg and loglog_fit.svg into ``directory``.

    ``directory`` is a run directory (records.csv) or a sweep directory
    (sweep.csv plus one sub-directory per run).
    """
    d = Path(directory)
    written = []
    runs = {}
    if (d / "records.csv").exists():
        runs[d.name] = read_table(d / "records.csv")
    for sub in sorted(p for p in d.iterdir() if p.is_dir()) if d.is_dir() else []:
        if (sub / "records.csv").exists():
            runs[sub.name] = read_table(sub / "records.csv")
    if runs:
        written.append(loss_curve(runs, d / "loss_curve.svg"))

    tpath = Path(table) if table else next((d / n for n in ("sweep.csv", "checkpoints.csv")
                                            if (d / n).exists()), None)
    if tpath is not None:
        pairs = table_pairs(read_table(tpath), loss_col, err_col)
        if not pairs:
            raise ValueError(f"{tpath}: no usable (loss, error) rows")
        written.append(error_scatter(pairs, d / "error_vs_loss.svg"))
        fit = None
        try:
            fit = fit_convergence(pairs)
        except ValueError as exc:
            log.warning("fit overlay skipped: %s", exc)
        written.append(loglog_fit(pairs, d / "loglog_fit.svg", fit))
    if not written:
        raise ValueError(f"{d}: nothing to plot (no records.csv or sweep table)")
    return written
