"""Deterministic CSV, JSON and SVG writers.

Floats are printed with 17 significant digits so that reruns with the same
configuration produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def read_csv(path) -> tuple[list, dict]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        cols = {h: [] for h in header}
        for row in r:
            for h, v in zip(header, row):
                cols[h].append(v)
    out = {}
    for h, vals in cols.items():
        try:
            out[h] = np.array([float(v) for v in vals])
        except ValueError:
            out[h] = vals
    return header, out


def _json_value(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return "null" if not math.isfinite(x) else format(x, ".17g")
    if isinstance(obj, str):
        return _json_str(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json_str(str(k))}: {_json_value(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_json_value(v, indent, level + 1) for v in seq) + "]"
        items = [pad + _json_value(v, indent, level + 1) for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _json_str(s: str) -> str:
    import json

    return json.dumps(s, ensure_ascii=False)


def json_text(obj, indent: int = 2) -> str:
    return _json_value(obj, indent, 0) + "\n"


# ---------------------------------------------------------------------------
# SVG line plots

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 640, 400
ML, MR, MT, MB = 70, 20, 36, 44


def _ticks(lo, hi, n=5):
    if not math.isfinite(lo) or not math.isfinite(hi):
        return []
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _segments(x, y):
    seg = []
    for xi, yi in zip(x, y):
        if math.isfinite(xi) and math.isfinite(yi):
            seg.append((xi, yi))
        elif seg:
            yield seg
            seg = []
    if seg:
        yield seg


def line_plot(x, series, title: str, xlabel: str = "tau", ylabel: str = "",
              band=None, logy: bool = False) -> str:
    """``series`` is a list of (label, y); ``band`` an optional (label, lower, upper)."""
    x = np.asarray(x, float)

    def tr(y):
        y = np.asarray(y, float)
        if logy:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(y > 0, np.log10(np.where(y > 0, y, 1.0)), np.nan)
        return y

    ys = [(lab, tr(y)) for lab, y in series]
    bnd = None if band is None else (band[0], tr(band[1]), tr(band[2]))
    pool = [y[np.isfinite(y)] for _, y in ys]
    if bnd is not None:
        pool += [bnd[1][np.isfinite(bnd[1])], bnd[2][np.isfinite(bnd[2])]]
    pool = np.concatenate(pool) if pool else np.array([])
    ylo, yhi = (float(pool.min()), float(pool.max())) if pool.size else (0.0, 1.0)
    if yhi == ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    xlo, xhi = float(np.nanmin(x)), float(np.nanmax(x))
    if xhi == xlo:
        xhi = xlo + 1.0

    def px(v):
        return ML + (v - xlo) / (xhi - xlo) * (W - ML - MR)

    def py(v):
        return H - MB - (v - ylo) / (yhi - ylo) * (H - MT - MB)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" '
           f'font-size="14">{_esc(title)}</text>',
           f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}" stroke="black"/>',
           f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}" stroke="black"/>']
    for t in _ticks(xlo, xhi):
        out.append(f'<text x="{px(t):.2f}" y="{H - MB + 16}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{t:.3g}</text>')
    for t in _ticks(ylo, yhi):
        lab = f"1e{t:.2f}" if logy else f"{t:.4g}"
        out.append(f'<text x="{ML - 6}" y="{py(t) + 3:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{lab}</text>')
    out.append(f'<text x="{W / 2:.1f}" y="{H - 8}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">{_esc(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{H / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="12" transform="rotate(-90 14 {H / 2:.1f})">{_esc(ylabel)}</text>')
    if bnd is not None:
        lab, lo, hi = bnd
        ok = np.isfinite(lo) & np.isfinite(hi)
        if ok.any():
            pts = [(px(a), py(b)) for a, b in zip(x[ok], hi[ok])]
            pts += [(px(a), py(b)) for a, b in zip(x[ok][::-1], lo[ok][::-1])]
            out.append('<polygon fill="#cccccc" fill-opacity="0.6" stroke="none" points="'
                       + " ".join(f"{a:.2f},{b:.2f}" for a, b in pts) + '"/>')
    for idx, (lab, y) in enumerate(ys):
        color = PALETTE[idx % len(PALETTE)]
        for seg in _segments(x, y):
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="'
                       + " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in seg) + '"/>')
        out.append(f'<text x="{W - MR - 4}" y="{MT + 14 * (idx + 1)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11" fill="{color}">{_esc(lab)}</text>')
    if bnd is not None:
        out.append(f'<text x="{W - MR - 4}" y="{MT + 14 * (len(ys) + 1)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11" fill="#777777">{_esc(bnd[0])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def trace_plots(prefix: str, trace) -> dict:
    """E, log E, N and dN/dτ with the sandwich band."""
    t = trace.times
    return {
        f"{prefix}E.svg": line_plot(t, [("E", trace.E)], f"{prefix}E", ylabel="E"),
        f"{prefix}logE.svg": line_plot(t, [("E", trace.E)], f"{prefix}log E", ylabel="log10 E",
                                       logy=True),
        f"{prefix}N.svg": line_plot(t, [("N", trace.N)], f"{prefix}N", ylabel="N"),
        f"{prefix}dN_sandwich.svg": line_plot(
            t, [("dN/dtau (numeric)", trace.dN_dt_numeric)], f"{prefix}dN/dtau",
            ylabel="dN/dtau",
            band=("sandwich", trace.sandwich_lower - trace.tol, trace.sandwich_upper + trace.tol)),
    }


class RunWriter:
    """Single writer for one run directory."""

    def __init__(self, root, formats):
        self.root = Path(root)
        self.formats = set(formats)
        self.written = []

    def _put(self, name: str, text: str):
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        path.write_text(text)
        self.written.append(str(path))

    def table(self, name: str, columns, rows):
        if "csv" in self.formats:
            self._put(name, csv_text(columns, rows))

    def report(self, name: str, obj):
        if "json" in self.formats:
            self._put(name, json_text(obj))

    def svg(self, name: str, text: str):
        if "svg" in self.formats:
            self._put(name, text)
