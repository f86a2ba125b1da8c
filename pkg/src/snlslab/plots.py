"""Deterministic SVG line plots for run reports.

Hand-rolled emitter instead of a plotting package so that identical data
produce byte-identical files: coordinates are formatted with %.6g, there are
no timestamps, no random element ids, and series colors come from a fixed
cycle.  Output is a single self-contained <svg> element.
"""

import math

import numpy as np

WIDTH = 640
HEIGHT = 420
MARGIN_L = 64
MARGIN_R = 16
MARGIN_T = 28
MARGIN_B = 44
COLORS = ("#1965b0", "#dc050c", "#4eb265", "#f7a91e", "#882e72", "#777777")


def _fmt(x):
    return "%.6g" % float(x)


def _ticks(lo, hi, n=5):
    """Round tick locations covering [lo, hi]; plain linear spacing."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0]
    if hi <= lo:
        return [lo]
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / n))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if span / (step * mult) <= n + 1:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * span:
        out.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return out or [lo]


class _Axis:
    def __init__(self, lo, hi, pix_lo, pix_hi, log=False):
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi <= lo:
            hi = lo + 1.0
        pad = 0.04 * (hi - lo)
        self.lo, self.hi = lo - pad, hi + pad
        self.pix_lo, self.pix_hi = pix_lo, pix_hi
        self.log = log

    def __call__(self, x):
        x = math.log10(x) if self.log else x
        frac = (x - self.lo) / (self.hi - self.lo)
        return self.pix_lo + frac * (self.pix_hi - self.pix_lo)

    def tick_values(self):
        vals = _ticks(self.lo, self.hi)
        if self.log:
            return [10.0 ** v for v in vals]
        return vals

    def tick_label(self, v):
        return _fmt(v)


def _finite_pairs(x, y, logy):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y)
    if logy:
        keep &= y > 0
    return x[keep], y[keep]


def line_plot_svg(series, title="", xlabel="", ylabel="", logy=False):
    """Render [(label, x, y), ...] to an SVG string.

    Series with no plottable points are dropped; an all-empty plot still
    renders axes so report generation never fails on degenerate data.
    """
    cleaned = []
    for label, x, y in series:
        xs, ys = _finite_pairs(x, y, logy)
        if len(xs):
            cleaned.append((str(label), xs, ys))
    if cleaned:
        xlo = min(float(xs.min()) for _, xs, _ in cleaned)
        xhi = max(float(xs.max()) for _, xs, _ in cleaned)
        ylo = min(float(ys.min()) for _, _, ys in cleaned)
        yhi = max(float(ys.max()) for _, _, ys in cleaned)
    else:
        xlo, xhi, ylo, yhi = 0.0, 1.0, (1e-1 if logy else 0.0), 1.0
    ax = _Axis(xlo, xhi, MARGIN_L, WIDTH - MARGIN_R)
    ay = _Axis(ylo, yhi, HEIGHT - MARGIN_B, MARGIN_T, log=logy)

    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
        'viewBox="0 0 %d %d">' % (WIDTH, HEIGHT, WIDTH, HEIGHT),
        '<rect width="%d" height="%d" fill="white"/>' % (WIDTH, HEIGHT),
        '<g font-family="Helvetica,Arial,sans-serif" font-size="12" '
        'fill="#222">',
    ]
    if title:
        parts.append('<text x="%d" y="18" text-anchor="middle" '
                     'font-size="14">%s</text>' % (WIDTH // 2, _esc(title)))
    # frame
    parts.append('<rect x="%d" y="%d" width="%d" height="%d" fill="none" '
                 'stroke="#222" stroke-width="1"/>'
                 % (MARGIN_L, MARGIN_T, WIDTH - MARGIN_L - MARGIN_R,
                    HEIGHT - MARGIN_T - MARGIN_B))
    for v in ax.tick_values():
        px = ax(v)
        if not (MARGIN_L - 0.5 <= px <= WIDTH - MARGIN_R + 0.5):
            continue
        parts.append('<line x1="%s" y1="%d" x2="%s" y2="%d" stroke="#222"/>'
                     % (_fmt(px), HEIGHT - MARGIN_B,
                        _fmt(px), HEIGHT - MARGIN_B + 5))
        parts.append('<text x="%s" y="%d" text-anchor="middle">%s</text>'
                     % (_fmt(px), HEIGHT - MARGIN_B + 18, ax.tick_label(v)))
    for v in ay.tick_values():
        py = ay(v)
        if not (MARGIN_T - 0.5 <= py <= HEIGHT - MARGIN_B + 0.5):
            continue
        parts.append('<line x1="%d" y1="%s" x2="%d" y2="%s" stroke="#222"/>'
                     % (MARGIN_L - 5, _fmt(py), MARGIN_L, _fmt(py)))
        parts.append('<text x="%d" y="%s" text-anchor="end" dy="4">%s</text>'
                     % (MARGIN_L - 8, _fmt(py), ay.tick_label(v)))
    if xlabel:
        parts.append('<text x="%d" y="%d" text-anchor="middle">%s</text>'
                     % ((MARGIN_L + WIDTH - MARGIN_R) // 2, HEIGHT - 8,
                        _esc(xlabel)))
    if ylabel:
        cy = (MARGIN_T + HEIGHT - MARGIN_B) // 2
        parts.append('<text x="16" y="%d" text-anchor="middle" '
                     'transform="rotate(-90 16 %d)">%s</text>'
                     % (cy, cy, _esc(ylabel)))
    for i, (label, xs, ys) in enumerate(cleaned):
        color = COLORS[i % len(COLORS)]
        pts = " ".join("%s,%s" % (_fmt(ax(x)), _fmt(ay(y)))
                       for x, y in zip(xs, ys))
        parts.append('<polyline points="%s" fill="none" stroke="%s" '
                     'stroke-width="1.5"/>' % (pts, color))
        ly = MARGIN_T + 16 + 16 * i
        parts.append('<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="%s" '
                     'stroke-width="3"/>' % (MARGIN_L + 10, ly - 4,
                                             MARGIN_L + 34, ly - 4, color))
        parts.append('<text x="%d" y="%d">%s</text>'
                     % (MARGIN_L + 40, ly, _esc(label)))
    parts.append("</g></svg>")
    return "\n".join(parts) + "\n"


def _esc(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def write_line_plot(path, series, **kwargs):
    svg = line_plot_svg(series, **kwargs)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return path
