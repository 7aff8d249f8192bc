"""Deterministic SVG chart generation (no plotting dependency).

Pure text builders: a learning-curve line plot, grouped box plots with the
mean drawn as a red square, and paired bars. Identical input produces
byte-identical SVG.
"""

from __future__ import annotations

import numpy as np

W, H = 640, 400
MARGIN = 56


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _frame(title: str, body: list[str]) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W/2:.0f}" y="20" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{title}</text>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{W-2*MARGIN}" '
        f'height="{H-2*MARGIN}" fill="none" stroke="black"/>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _scale(vals: list[float]) -> tuple[float, float]:
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi <= lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def line_plot(title: str, xs: list[float], ys: list[float],
              x_label: str = "", y_label: str = "") -> str:
    body: list[str] = []
    if xs:
        x0, x1 = _scale(xs)
        y0, y1 = _scale(ys)
        px = lambda x: MARGIN + (x - x0) / (x1 - x0) * (W - 2 * MARGIN)
        py = lambda y: H - MARGIN - (y - y0) / (y1 - y0) * (H - 2 * MARGIN)
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        body.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" '
                    f'stroke-width="1.5"/>')
        for frac in (0.0, 0.5, 1.0):
            xv = x0 + frac * (x1 - x0)
            yv = y0 + frac * (y1 - y0)
            body.append(f'<text x="{px(xv):.1f}" y="{H-MARGIN+16}" font-size="10" '
                        f'text-anchor="middle" font-family="sans-serif">{_fmt(xv)}</text>')
            body.append(f'<text x="{MARGIN-6}" y="{py(yv):.1f}" font-size="10" '
                        f'text-anchor="end" font-family="sans-serif">{_fmt(yv)}</text>')
    body.append(f'<text x="{W/2:.0f}" y="{H-10}" text-anchor="middle" '
                f'font-size="11" font-family="sans-serif">{x_label}</text>')
    body.append(f'<text x="14" y="{H/2:.0f}" text-anchor="middle" font-size="11" '
                f'font-family="sans-serif" transform="rotate(-90 14 {H/2:.0f})">'
                f'{y_label}</text>')
    return _frame(title, body)


def box_plot(title: str, groups: dict[str, list[float]], y_label: str = "") -> str:
    """One box per group; whiskers at min/max, red square at the mean."""
    body: list[str] = []
    labels = list(groups)
    all_vals = [v for vals in groups.values() for v in vals]
    if labels and all_vals:
        y0, y1 = _scale(all_vals)
        py = lambda y: H - MARGIN - (y - y0) / (y1 - y0) * (H - 2 * MARGIN)
        slot = (W - 2 * MARGIN) / len(labels)
        for i, label in enumerate(labels):
            vals = groups[label]
            cx = MARGIN + (i + 0.5) * slot
            body.append(f'<text x="{cx:.1f}" y="{H-MARGIN+16}" text-anchor="middle" '
                        f'font-size="10" font-family="sans-serif">{label}</text>')
            if not vals:
                continue
            arr = np.asarray(vals)
            q1, med, q3 = np.percentile(arr, [25, 50, 75])
            lo, hi = arr.min(), arr.max()
            mean = arr.mean()
            bw = min(40.0, slot * 0.5)
            body.append(f'<line x1="{cx:.1f}" y1="{py(lo):.1f}" x2="{cx:.1f}" '
                        f'y2="{py(hi):.1f}" stroke="black"/>')
            body.append(f'<rect x="{cx-bw/2:.1f}" y="{py(q3):.1f}" width="{bw:.1f}" '
                        f'height="{py(q1)-py(q3):.1f}" fill="lightsteelblue" '
                        f'stroke="black"/>')
            body.append(f'<line x1="{cx-bw/2:.1f}" y1="{py(med):.1f}" '
                        f'x2="{cx+bw/2:.1f}" y2="{py(med):.1f}" stroke="black"/>')
            body.append(f'<rect x="{cx-4:.1f}" y="{py(mean)-4:.1f}" width="8" '
                        f'height="8" fill="red"/>')
        for frac in (0.0, 0.5, 1.0):
            yv = y0 + frac * (y1 - y0)
            body.append(f'<text x="{MARGIN-6}" y="{py(yv):.1f}" font-size="10" '
                        f'text-anchor="end" font-family="sans-serif">{_fmt(yv)}</text>')
    body.append(f'<text x="14" y="{H/2:.0f}" text-anchor="middle" font-size="11" '
                f'font-family="sans-serif" transform="rotate(-90 14 {H/2:.0f})">'
                f'{y_label}</text>')
    return _frame(title, body)


def paired_bars(title: str, pairs: dict[str, tuple[float, float]],
                labels: tuple[str, str], y_label: str = "") -> str:
    body: list[str] = []
    if pairs:
        vals = [v for ab in pairs.values() for v in ab]
        y0, y1 = _scale([0.0] + vals)
        py = lambda y: H - MARGIN - (y - y0) / (y1 - y0) * (H - 2 * MARGIN)
        slot = (W - 2 * MARGIN) / len(pairs)
        for i, (label, (a, b)) in enumerate(pairs.items()):
            cx = MARGIN + (i + 0.5) * slot
            bw = min(24.0, slot * 0.3)
            for k, (val, color) in enumerate(((a, "steelblue"), (b, "darkorange"))):
                x = cx - bw + k * bw
                body.append(f'<rect x="{x:.1f}" y="{py(max(val,0.0)):.1f}" '
                            f'width="{bw:.1f}" '
                            f'height="{abs(py(0.0)-py(val)):.1f}" fill="{color}"/>')
            body.append(f'<text x="{cx:.1f}" y="{H-MARGIN+16}" text-anchor="middle" '
                        f'font-size="10" font-family="sans-serif">{label}</text>')
        body.append(f'<rect x="{W-180}" y="{MARGIN+6}" width="10" height="10" '
                    f'fill="steelblue"/>')
        body.append(f'<text x="{W-164}" y="{MARGIN+15}" font-size="10" '
                    f'font-family="sans-serif">{labels[0]}</text>')
        body.append(f'<rect x="{W-180}" y="{MARGIN+22}" width="10" height="10" '
                    f'fill="darkorange"/>')
        body.append(f'<text x="{W-164}" y="{MARGIN+31}" font-size="10" '
                    f'font-family="sans-serif">{labels[1]}</text>')
    body.append(f'<text x="14" y="{H/2:.0f}" text-anchor="middle" font-size="11" '
                f'font-family="sans-serif" transform="rotate(-90 14 {H/2:.0f})">'
                f'{y_label}</text>')
    return _frame(title, body)
