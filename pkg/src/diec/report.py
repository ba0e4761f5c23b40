"""Hand-written SVG charts and PGM image grids; no plotting library involved."""
from __future__ import annotations

from html import escape
from pathlib import Path

import numpy as np

LOW = (33, 102, 172)   # blue
MID = (247, 247, 247)
HIGH = (178, 24, 43)   # red
SERIES_COLORS = ["#b2182b", "#2166ac", "#1b7837", "#762a83", "#e08214", "#4d4d4d"]


def _ramp(v: float) -> str:
    """Two-sided ramp: blue (low) through white to red (high), v in [0, 1]."""
    v = min(1.0, max(0.0, float(v)))
    if v < 0.5:
        a, b, u = LOW, MID, v / 0.5
    else:
        a, b, u = MID, HIGH, (v - 0.5) / 0.5
    r, g, bl = (round(a[i] + (b[i] - a[i]) * u) for i in range(3))
    return f"#{r:02x}{g:02x}{bl:02x}"


def _num(v: float) -> str:
    return f"{v:.4g}"


def heatmap_svg(values, row_labels, col_labels, title: str = "", highlight=None, note: str = "") -> str:
    """Layer x timestep heatmap; ``highlight`` is an optional (row, col) cell to outline."""
    data = np.asarray(values, dtype=np.float64)
    rows, cols = data.shape
    cell_w, cell_h, left, top = 22, 20, 90, 40
    width = left + cols * cell_w + 70
    height = top + rows * cell_h + 60
    lo, hi = float(np.nanmin(data)), float(np.nanmax(data))
    span = hi - lo if hi > lo else 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">']
    if note:
        out.append(f"<!-- {escape(note)} -->")
    out.append(f'<text x="{left}" y="20" font-size="13">{escape(title)}</text>')
    for i in range(rows):
        y = top + i * cell_h
        out.append(f'<text x="{left - 6}" y="{y + 14}" text-anchor="end">{escape(str(row_labels[i]))}</text>')
        for j in range(cols):
            x = left + j * cell_w
            color = _ramp((data[i, j] - lo) / span)
            out.append(f'<rect x="{x}" y="{y}" width="{cell_w}" height="{cell_h}" fill="{color}">'
                       f'<title>{escape(str(row_labels[i]))}, t={col_labels[j]}: {_num(data[i, j])}</title></rect>')
    if highlight is not None:
        i, j = highlight
        # j=None outlines the whole row
        x0, w = (left, cols * cell_w) if j is None else (left + j * cell_w, cell_w)
        out.append(f'<rect x="{x0}" y="{top + i * cell_h}" width="{w}" height="{cell_h}" '
                   f'fill="none" stroke="black" stroke-width="2"/>')
    step = max(1, cols // 10)
    for j in range(0, cols, step):
        x = left + j * cell_w + cell_w / 2
        out.append(f'<text x="{x}" y="{top + rows * cell_h + 14}" text-anchor="middle">{escape(str(col_labels[j]))}</text>')
    out.append(f'<text x="{left + cols * cell_w / 2}" y="{top + rows * cell_h + 32}" text-anchor="middle">timestep t</text>')
    bar_x = left + cols * cell_w + 15
    for k in range(rows * 2):
        v = 1.0 - k / max(1, rows * 2 - 1)
        out.append(f'<rect x="{bar_x}" y="{top + k * cell_h / 2}" width="12" height="{cell_h / 2 + 0.5}" fill="{_ramp(v)}"/>')
    out.append(f'<text x="{bar_x + 16}" y="{top + 8}">{_num(hi)}</text>')
    out.append(f'<text x="{bar_x + 16}" y="{top + rows * cell_h}">{_num(lo)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_chart_svg(x, series: dict, title: str = "", xlabel: str = "", ylabel: str = "", normalize: bool = False,
                   markers: dict | None = None, note: str = "") -> str:
    """Line chart of one or more series over a shared x axis.

    With ``normalize`` each series is min-max scaled to [0, 1] so curves with
    different units (Scott Score and ACC) can share one axis.
    """
    x = np.asarray(x, dtype=np.float64)
    width, height, left, right, top, bottom = 560, 320, 60, 150, 30, 45
    pw, ph = width - left - right, height - top - bottom
    prepared = {}
    for name, ys in series.items():
        ys = np.asarray(ys, dtype=np.float64)
        if normalize:
            lo, hi = np.nanmin(ys), np.nanmax(ys)
            ys = (ys - lo) / (hi - lo) if hi > lo else np.zeros_like(ys)
        prepared[name] = ys
    allv = np.concatenate([v[np.isfinite(v)] for v in prepared.values()]) if prepared else np.zeros(1)
    ylo, yhi = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    if yhi <= ylo:
        yhi = ylo + 1.0
    xlo, xhi = float(x.min()), float(x.max())
    if xhi <= xlo:
        xhi = xlo + 1.0

    def px(v):
        return left + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return top + ph - (v - ylo) / (yhi - ylo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">',
           f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>']
    if note:
        out.insert(1, f"<!-- {escape(note)} -->")
    for k in range(5):
        yv = ylo + (yhi - ylo) * k / 4
        out.append(f'<text x="{left - 4}" y="{py(yv) + 3:.1f}" text-anchor="end">{_num(yv)}</text>')
        xv = xlo + (xhi - xlo) * k / 4
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 14}" text-anchor="middle">{_num(xv)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{top + ph / 2}" transform="rotate(-90 14 {top + ph / 2})" text-anchor="middle">{escape(ylabel)}</text>')
    for n, (name, ys) in enumerate(prepared.items()):
        color = SERIES_COLORS[n % len(SERIES_COLORS)]
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, ys) if np.isfinite(b))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        ly = top + 12 + 16 * n
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 32}" y="{ly + 3}">{escape(name)}</text>')
    for label, xv in (markers or {}).items():
        out.append(f'<line x1="{px(xv):.1f}" y1="{top}" x2="{px(xv):.1f}" y2="{top + ph}" stroke="black" stroke-dasharray="3,3"/>')
        out.append(f'<text x="{px(xv) + 3:.1f}" y="{top + 10}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def image_grid(images, ncols: int = 8, pad: int = 1) -> np.ndarray:
    """Tile (N, C, H, W) images in [-1, 1] into one uint8 canvas (H', W') or (H', W', 3)."""
    imgs = np.asarray(images, dtype=np.float64)
    n, c, h, w = imgs.shape
    ncols = max(1, min(ncols, n))
    nrows = (n + ncols - 1) // ncols
    canvas = np.zeros((nrows * (h + pad) + pad, ncols * (w + pad) + pad, c))
    for k in range(n):
        r, q = divmod(k, ncols)
        y, x = pad + r * (h + pad), pad + q * (w + pad)
        canvas[y:y + h, x:x + w] = np.transpose((imgs[k] + 1.0) * 0.5, (1, 2, 0))
    canvas = np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8)
    return canvas[..., 0] if c == 1 else canvas


def write_pnm(path, canvas: np.ndarray, comment: str | None = None) -> None:
    """Binary PGM (2-D) or PPM (H x W x 3)."""
    canvas = np.asarray(canvas, dtype=np.uint8)
    if canvas.ndim == 2:
        magic = "P5"
    elif canvas.ndim == 3 and canvas.shape[2] == 3:
        magic = "P6"
    else:
        raise ValueError("canvas must be H x W or H x W x 3")
    note = f"# {comment}\n" if comment else ""
    header = f"{magic}\n{note}{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + canvas.tobytes())


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#":
            if data[pos:pos + 1] == b"#":
                pos = data.index(b"\n", pos)
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    payload = data[pos + 1:]  # exactly one whitespace byte follows maxval
    magic, w, h = fields[0], int(fields[1]), int(fields[2])
    if magic == b"P5":
        return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    if magic == b"P6":
        return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    raise ValueError(f"unsupported PNM magic {magic!r}")
