"""Box-plot statistics and a small dependency-free SVG renderer."""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np


@dataclass(frozen=True)
class BoxStats:
    """Quartiles use linear interpolation between order statistics.

    Whiskers reach the most extreme observations within 1.5 IQR of the box;
    anything beyond is an outlier.
    """

    n: int
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]
    mean: float


def box_stats(values) -> BoxStats:
    v = np.sort(np.asarray(values, dtype=float))
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise ValueError("no finite values")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    out = v[(v < lo_fence) | (v > hi_fence)]
    return BoxStats(int(v.size), float(q1), float(med), float(q3), float(inside.min()),
                    float(inside.max()), tuple(float(x) for x in out), float(v.mean()))


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = np.floor(lo / step) * step
    return [float(start + k * step) for k in range(int(np.ceil((hi - start) / step)) + 1)]


def render_svg(groups: dict[str, list], title: str = "", ylabel: str = "RMSE",
               width: int = 640, height: int = 400) -> str:
    """SVG 1.1 box plot, one box per group; statistics are embedded as comments."""
    stats = {k: box_stats(v) for k, v in groups.items() if np.isfinite(np.asarray(v, float)).any()}
    left, right, top, bottom = 70, 20, 40, 60
    pw, ph = width - left - right, height - top - bottom
    if stats:
        lo = min(min((s.whisker_low, *s.outliers)) for s in stats.values())
        hi = max(max((s.whisker_high, *s.outliers)) for s in stats.values())
    else:
        lo, hi = 0.0, 1.0
    ticks = _nice_ticks(lo, hi)
    lo, hi = min(lo, ticks[0]), max(hi, ticks[-1])

    def y(v):
        return top + ph * (1 - (v - lo) / (hi - lo))

    def f(v):
        return f"{v:.2f}"

    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">']
    for name, s in stats.items():
        outs = " ".join(repr(o) for o in s.outliers)
        out.append(f"<!-- stats group={escape(name).replace('--', '- -')} n={s.n} q1={s.q1!r} "
                   f"median={s.median!r} q3={s.q3!r} whisker_low={s.whisker_low!r} "
                   f"whisker_high={s.whisker_high!r} mean={s.mean!r} outliers=[{outs}] -->")
    out.append('<rect x="0" y="0" width="100%" height="100%" fill="white"/>')
    if title:
        out.append(f'<text x="{width / 2}" y="22" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="15">{escape(title)}</text>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    for t in ticks:
        out.append(f'<line x1="{left - 5}" y1="{f(y(t))}" x2="{left}" y2="{f(y(t))}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{f(y(t) + 4)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{t:g}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    n = max(len(stats), 1)
    slot = pw / n
    bw = min(60.0, slot * 0.5)
    for i, (name, s) in enumerate(stats.items()):
        cx = left + slot * (i + 0.5)
        x0 = cx - bw / 2
        out.append(f'<line x1="{f(cx)}" y1="{f(y(s.whisker_low))}" x2="{f(cx)}" y2="{f(y(s.q1))}" stroke="black"/>')
        out.append(f'<line x1="{f(cx)}" y1="{f(y(s.q3))}" x2="{f(cx)}" y2="{f(y(s.whisker_high))}" stroke="black"/>')
        for w in (s.whisker_low, s.whisker_high):
            out.append(f'<line x1="{f(cx - bw / 4)}" y1="{f(y(w))}" x2="{f(cx + bw / 4)}" y2="{f(y(w))}" stroke="black"/>')
        out.append(f'<rect x="{f(x0)}" y="{f(y(s.q3))}" width="{f(bw)}" height="{f(y(s.q1) - y(s.q3))}" '
                   f'fill="#9ecae1" stroke="black"/>')
        out.append(f'<line x1="{f(x0)}" y1="{f(y(s.median))}" x2="{f(x0 + bw)}" y2="{f(y(s.median))}" '
                   f'stroke="black" stroke-width="2"/>')
        for o in s.outliers:
            out.append(f'<circle cx="{f(cx)}" cy="{f(y(o))}" r="2.5" fill="none" stroke="black"/>')
        out.append(f'<text x="{f(cx)}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
