"""Self-contained SVG rendering of a paired difference curve."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import IoFailure
from .gaze_eval import DifferenceCurve

WIDTH, HEIGHT = 640, 400
MARGIN = (70, 20, 30, 50)  # left, right, top, bottom


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def curve_svg(curve: DifferenceCurve, title: str = "") -> str:
    ps = curve.percentiles
    lo = min(0.0, float(curve.envelope_low.min()), float(curve.median_diff.min()))
    hi = max(0.0, float(curve.envelope_high.max()), float(curve.median_diff.max()))
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x0, x1 = MARGIN[0], WIDTH - MARGIN[1]
    y0, y1 = MARGIN[2], HEIGHT - MARGIN[3]
    pmin, pmax = float(ps.min()), float(ps.max())
    span = pmax - pmin if pmax > pmin else 1.0

    def sx(p):
        return x0 + (np.asarray(p, float) - pmin) / span * (x1 - x0)

    def sy(v):
        return y1 - (np.asarray(v, float) - lo) / (hi - lo) * (y1 - y0)

    def pts(xs, ys):
        return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))

    envelope = pts(np.concatenate([sx(ps), sx(ps[::-1])]),
                   np.concatenate([sy(curve.envelope_high), sy(curve.envelope_low[::-1])]))
    zero_y = _fmt(float(sy(0.0)))
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<polygon class="envelope" points="{envelope}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>',
        f'<polyline class="zero" points="{_fmt(x0)},{zero_y} {_fmt(x1)},{zero_y}" fill="none" '
        f'stroke="black" stroke-dasharray="4 3"/>',
        f'<polyline class="median" points="{pts(sx(ps), sy(curve.median_diff))}" fill="none" '
        f'stroke="#08519c" stroke-width="2"/>',
        f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for p in np.linspace(pmin, pmax, 5):
        lines.append(f'<text x="{_fmt(float(sx(p)))}" y="{y1 + 16}" font-size="11" '
                     f'text-anchor="middle">{_fmt(p)}</text>')
    for v in np.linspace(lo, hi, 5):
        lines.append(f'<text x="{x0 - 6}" y="{_fmt(float(sy(v)) + 4)}" font-size="11" '
                     f'text-anchor="end">{_fmt(v)}</text>')
    lines += [
        f'<text x="{(x0 + x1) / 2:g}" y="{HEIGHT - 10}" font-size="12" text-anchor="middle">'
        'error percentile (%)</text>',
        f'<text x="16" y="{(y0 + y1) / 2:g}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:g})">PET - intensity error (deg)</text>',
    ]
    if title:
        lines.append(f'<text x="{(x0 + x1) / 2:g}" y="18" font-size="13" text-anchor="middle">{title}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_plot(curve: DifferenceCurve, path, title: str = ""):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(curve_svg(curve, title))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
