"""Result tables, CSV emission with provenance, and hand-rolled SVG plots.

Everything here is byte-deterministic: the same table always serializes
to the same file, floats are written with 17 significant digits so they
round-trip exactly, and plots are plain SVG with no external assets.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .version import __version__

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def fmt17(x) -> str:
    """Round-trip-safe decimal rendering of a float."""
    return f"{float(x):.17g}"


def _cell(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return fmt17(x)


def config_fingerprint(config: dict) -> str:
    """Short stable hash of a resolved configuration mapping.

    Keys are sorted and values rendered the same way the CSV writer
    renders them, so the fingerprint in a provenance block can be
    recomputed from the block itself.
    """
    lines = []
    for key in sorted(config):
        val = config[key]
        if isinstance(val, (list, tuple, np.ndarray)):
            rendered = ",".join(_cell(v) for v in np.asarray(val).ravel())
        else:
            rendered = _cell(val)
        lines.append(f"{key}={rendered}")
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    return digest[:16]


@dataclass
class ResultTable:
    """Named columns, typed rows, and a provenance mapping echoed on output."""

    columns: Sequence[str]
    rows: list
    provenance: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise KeyError(f"no column {name!r}; have {list(self.columns)}")
        idx = list(self.columns).index(name)
        return np.array([row[idx] for row in self.rows], dtype=np.float64)


def to_csv_text(table: ResultTable) -> str:
    lines = []
    prov = dict(table.provenance)
    prov.setdefault("artifact_version", __version__)
    prov.setdefault("fingerprint", config_fingerprint(prov))
    for key in prov:
        lines.append(f"# {key} = {_cell(prov[key])}")
    lines.append(",".join(table.columns))
    for row in table.rows:
        if len(row) != len(table.columns):
            raise ValueError(f"row width {len(row)} != {len(table.columns)} columns")
        lines.append(",".join(_cell(x) for x in row))
    return "\n".join(lines) + "\n"


def emit_csv(table: ResultTable, path) -> None:
    text = to_csv_text(table)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def _ticks_linear(lo: float, hi: float, count: int = 5):
    if hi == lo:
        return [lo]
    raw = np.linspace(lo, hi, count)
    return list(raw)


def _ticks_log(lo: float, hi: float):
    # decade ticks; thin them out if there are too many
    first = math.ceil(lo - 1e-9)
    last = math.floor(hi + 1e-9)
    decades = list(range(first, last + 1))
    if not decades:
        return [lo, hi]
    stride = max(1, len(decades) // 8)
    return [float(d) for d in decades[::stride]]


def _fmt_tick(value: float, log: bool) -> str:
    if log:
        if value == int(value):
            return f"1e{int(value)}"
        return f"{10.0 ** value:.3g}"
    return f"{value:.4g}"


def emit_svg_plot(
    table: ResultTable,
    x_col: str,
    y_cols: Sequence[str],
    path,
    logx: bool = False,
    logy: bool = False,
    title: str = "",
) -> None:
    """Self-contained SVG line plot: one polyline per y column plus a legend.

    Log axes reject nonpositive values, naming the offending row, since
    silently dropping points would misrepresent the series.
    """
    xs = table.column(x_col)
    if len(xs) == 0:
        raise ValueError("cannot plot an empty table")
    series = []
    for col in y_cols:
        ys = table.column(col)
        series.append((col, ys))
    for col, vals in [(x_col, xs)] + series:
        wants_log = logx if col == x_col else logy
        if wants_log:
            bad = np.nonzero(vals <= 0)[0]
            if len(bad):
                raise ValueError(
                    f"nonpositive value {vals[bad[0]]} in column {col!r} row {bad[0]} "
                    "cannot go on a log axis"
                )

    tx_vals = np.log10(xs) if logx else xs
    ty_all = [np.log10(v) if logy else v for _, v in series]
    xmin, xmax = float(np.min(tx_vals)), float(np.max(tx_vals))
    ymin = min(float(np.min(v)) for v in ty_all)
    ymax = max(float(np.max(v)) for v in ty_all)
    if xmax == xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    if ymax == ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5

    width, height = 720, 480
    ml, mr, mt, mb = 70, 170, 34, 50
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - xmin) / (xmax - xmin) * pw

    def py(y):
        return mt + ph - (y - ymin) / (ymax - ymin) * ph

    out = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    out.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    if title:
        out.append(
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>'
        )

    xticks = _ticks_log(xmin, xmax) if logx else _ticks_linear(xmin, xmax)
    yticks = _ticks_log(ymin, ymax) if logy else _ticks_linear(ymin, ymax)
    for t in xticks:
        x = px(t)
        out.append(
            f'<line x1="{x:.2f}" y1="{mt}" x2="{x:.2f}" y2="{mt + ph}" '
            'stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{x:.2f}" y="{mt + ph + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{_fmt_tick(t, logx)}</text>'
        )
    for t in yticks:
        y = py(t)
        out.append(
            f'<line x1="{ml}" y1="{y:.2f}" x2="{ml + pw}" y2="{y:.2f}" '
            'stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{ml - 6}" y="{y + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_fmt_tick(t, logy)}</text>'
        )
    out.append(
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
        'stroke="#333333" stroke-width="1"/>'
    )
    out.append(
        f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_col}</text>'
    )

    for si, (col, vals) in enumerate(series):
        color = _PALETTE[si % len(_PALETTE)]
        ty = ty_all[si]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(tx_vals, ty))
        if len(xs) > 1:
            out.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
        if len(xs) <= 64:
            for a, b in zip(tx_vals, ty):
                out.append(
                    f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" fill="{color}"/>'
                )
        ly = mt + 16 + 18 * si
        out.append(
            f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 34}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{ml + pw + 40}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">{col}</text>'
        )
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write SVG to {path}: {exc}") from exc
