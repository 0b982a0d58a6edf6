"""Minimal static SVG charts for the report stage."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

W, H = 480, 360
PAD = 48
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def _doc(body, width=W, height=H, title=""):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}" '
            f'font-family="sans-serif" font-size="11">\n')
    t = (f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" '
         f'font-size="13">{escape(title)}</text>\n') if title else ""
    return head + t + body + "</svg>\n"


def _scale(lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (np.asarray(v, float) - lo) / span * (b - a)


def _axes(x0, y0, x1, y1, xlabel, ylabel, xt, yt):
    out = [f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" '
           'fill="none" stroke="#333"/>']
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{y0 + 32}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="12" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 12 {(y0 + y1) / 2:.1f})">{escape(ylabel)}</text>')
    for pos, lab in xt:
        out.append(f'<text x="{pos:.1f}" y="{y0 + 14}" text-anchor="middle">{lab}</text>')
    for pos, lab in yt:
        out.append(f'<text x="{x0 - 4}" y="{pos + 4:.1f}" text-anchor="end">{lab}</text>')
    return "\n".join(out) + "\n"


def _ticks(lo, hi, f, n=5, fmt="{:.3g}"):
    vals = np.linspace(lo, hi, n)
    return [(float(f(v)), fmt.format(v)) for v in vals]


def scatter(x, y, xlabel="", ylabel="", title="", log=True):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if log:
        keep = (x > 0) & (y > 0)
        x, y = np.log10(x[keep]), np.log10(y[keep])
    lo = float(min(x.min(), y.min())) if x.size else 0.0
    hi = float(max(x.max(), y.max())) if x.size else 1.0
    fx = _scale(lo, hi, PAD, W - 16)
    fy = _scale(lo, hi, H - PAD, 28)
    fmt = "1e{:.1f}" if log else "{:.3g}"
    body = _axes(PAD, H - PAD, W - 16, 28, xlabel, ylabel,
                 _ticks(lo, hi, fx, fmt=fmt), _ticks(lo, hi, fy, fmt=fmt))
    body += (f'<line x1="{fx(lo):.1f}" y1="{fy(lo):.1f}" x2="{fx(hi):.1f}" '
             f'y2="{fy(hi):.1f}" stroke="#999" stroke-dasharray="4 3"/>\n')
    body += "".join(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="1.8" fill="{PALETTE[0]}" '
                    'fill-opacity="0.5"/>\n' for a, b in zip(fx(x), fy(y)))
    return _doc(body, title=title)


def bars(labels, values, title="", ylabel="", ref=None):
    values = np.asarray(values, float)
    hi = float(max(values.max(), ref or 0.0)) * 1.1 if values.size else 1.0
    n = max(len(values), 1)
    width = max(W, 18 * n + 2 * PAD)
    fy = _scale(0.0, hi, H - PAD, 28)
    bw = (width - PAD - 16) / n
    body = _axes(PAD, H - PAD, width - 16, 28, "", ylabel, [],
                 _ticks(0.0, hi, fy))
    for i, (lab, v) in enumerate(zip(labels, values)):
        x = PAD + i * bw
        body += (f'<rect x="{x + 1:.1f}" y="{fy(v):.1f}" width="{bw - 2:.1f}" '
                 f'height="{(H - PAD) - fy(v):.1f}" fill="{PALETTE[0]}"/>\n')
        body += (f'<text x="{x + bw / 2:.1f}" y="{H - PAD + 12}" font-size="8" '
                 f'text-anchor="end" transform="rotate(-60 {x + bw / 2:.1f} '
                 f'{H - PAD + 12})">{escape(str(lab))}</text>\n')
    if ref is not None:
        body += (f'<line x1="{PAD}" x2="{width - 16}" y1="{fy(ref):.1f}" '
                 f'y2="{fy(ref):.1f}" stroke="#d62728" stroke-dasharray="4 3"/>\n')
    return _doc(body, width=width, title=title)


def line_panels(panels, xlabel="", title="", cols=4):
    """Small multiples; ``panels`` is a list of (name, x, [(label, y), ...])."""
    pw, ph = 220, 150
    rows = max(1, int(np.ceil(len(panels) / cols)))
    width, height = cols * pw, rows * ph + 30
    body = ""
    for k, (name, x, series) in enumerate(panels):
        r, c = divmod(k, cols)
        x0, y1 = c * pw + 30, 30 + r * ph + 18
        x1, y0 = x0 + pw - 40, y1 + ph - 40
        x = np.asarray(x, float)
        ymax = max([float(np.max(y)) for _, y in series] + [1e-12])
        fx = _scale(float(x.min()), float(x.max()), x0, x1)
        fy = _scale(0.0, ymax * 1.05, y0, y1)
        body += (f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" '
                 'fill="none" stroke="#333"/>\n')
        body += (f'<text x="{(x0 + x1) / 2:.1f}" y="{y1 - 4}" '
                 f'text-anchor="middle">{escape(str(name))}</text>\n')
        body += (f'<text x="{x0}" y="{y0 + 12}">{x.min():.2f}</text>'
                 f'<text x="{x1}" y="{y0 + 12}" text-anchor="end">{x.max():.2f}</text>\n')
        for s, (lab, y) in enumerate(series):
            pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(fx(x), fy(y)))
            body += (f'<polyline points="{pts}" fill="none" '
                     f'stroke="{PALETTE[s % len(PALETTE)]}" stroke-width="1.5">'
                     f'<title>{escape(lab)}</title></polyline>\n')
    return _doc(body, width=width, height=height, title=title)


def heatmap(matrix, row_labels, col_labels, title=""):
    M = np.asarray(matrix, float)
    n, m = M.shape
    cell = 18
    x0, y0 = 90, 40
    width, height = x0 + m * cell + 20, y0 + n * cell + 90
    finite = M[np.isfinite(M)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 1.0
    body = ""
    for i in range(n):
        body += (f'<text x="{x0 - 4}" y="{y0 + i * cell + 13}" text-anchor="end" '
                 f'font-size="9">{escape(str(row_labels[i]))}</text>\n')
        for j in range(m):
            v = M[i, j]
            t = 0.0 if not np.isfinite(v) or hi == lo else (v - lo) / (hi - lo)
            shade = int(round(255 * (1 - t)))
            body += (f'<rect x="{x0 + j * cell}" y="{y0 + i * cell}" width="{cell}" '
                     f'height="{cell}" fill="rgb({shade},{shade},255)"/>\n')
    for j in range(m):
        x = x0 + j * cell + 12
        body += (f'<text x="{x}" y="{y0 + n * cell + 6}" font-size="9" '
                 f'text-anchor="end" transform="rotate(-60 {x} {y0 + n * cell + 6})">'
                 f'{escape(str(col_labels[j]))}</text>\n')
    return _doc(body, width=width, height=height, title=title)
