"""Deterministic SVG rendering of a sample: crop, plan nodes, gt and prediction."""
import numpy as np

from .planner import CROSSING, FUTURE, PAST, STOP_OR_SIGNAL
from .scene import PALETTE, Cls, decode_classes

_HEX = ["#%02x%02x%02x" % tuple(int(round(255 * v)) for v in rgb) for rgb in PALETTE]
_UNKNOWN_FILL = "#404040"   # black cells would hide the plan glyphs


def _f(v):
    return f"{v:.3f}"


def _to_pixels(pts, side, resolution):
    """Ego meters to SVG pixel coords (heading up, ego at the center)."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    col = side / 2 - pts[:, 1] * resolution
    row = side / 2 - pts[:, 0] * resolution
    return np.stack([col, row], axis=1)


def _raster(classes):
    out = []
    for r, row in enumerate(classes):
        start = 0
        for c in range(1, len(row) + 1):
            if c == len(row) or row[c] != row[start]:
                k = int(row[start])
                fill = _UNKNOWN_FILL if k == Cls.UNKNOWN else _HEX[k]
                out.append(f'<rect x="{start}" y="{r}" width="{c - start}" height="1" fill="{fill}"/>')
                start = c
    return out


def _glyph(code, x, y, size):
    s = size
    if code == PAST:
        return f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(s / 2)}" fill="#9e9e9e"/>'
    if code == FUTURE:
        return f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(s / 2)}" fill="#1e88e5"/>'
    if code == STOP_OR_SIGNAL:
        return (f'<rect x="{_f(x - s / 2)}" y="{_f(y - s / 2)}" width="{_f(s)}" '
                f'height="{_f(s)}" fill="#e53935"/>')
    if code == CROSSING:
        pts = f"{_f(x)},{_f(y - s / 2)} {_f(x - s / 2)},{_f(y + s / 2)} {_f(x + s / 2)},{_f(y + s / 2)}"
        return f'<polygon points="{pts}" fill="#fdd835"/>'
    return ""


def _polyline(pts, color, width, dashed):
    coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
    dash = f' stroke-dasharray="{_f(2 * width)},{_f(width)}"' if dashed else ""
    return (f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{_f(width)}"{dash}/>')


def render_svg(sample, prediction=None):
    """SVG text for ``sample``; ``prediction`` is an optional (H, 2) ego-frame path."""
    classes = decode_classes(sample.scene)
    side = classes.shape[0]
    D = sample.resolution
    size = max(1.0, side / 80)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" '
             f'viewBox="0 0 {side} {side}" shape-rendering="crispEdges">',
             '<g id="crop">', *_raster(classes), '</g>', '<g id="plan">']
    plan_px = _to_pixels(sample.plan[:, :2], side, D)
    for (x, y), code in zip(plan_px, sample.plan[:, 2]):
        glyph = _glyph(float(code), x, y, size)
        if glyph:
            parts.append(glyph)
    parts.append('</g>')
    origin = np.zeros((1, 2))
    gt = _to_pixels(np.vstack([origin, sample.gt]), side, D)
    parts.append(_polyline(gt, "#00c853", size / 2, dashed=True))
    if prediction is not None:
        pred = _to_pixels(np.vstack([origin, np.asarray(prediction, dtype=float)]), side, D)
        parts.append(_polyline(pred, "#d500f9", size / 2, dashed=False))
    parts.append('</svg>')
    return "\n".join(parts) + "\n"
