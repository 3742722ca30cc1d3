"""Self-contained SVG line/bar charts and PGM heatmaps with byte-deterministic output."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import InvalidArgumentError, ParseError

WIDTH, HEIGHT = 640, 420
MARGIN = (70, 20, 30, 50)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#17becf", "#bcbd22")


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray


def _num(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5):
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def _span(values):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        pad = abs(lo) * 0.05 or 1.0
        return lo - pad, hi + pad
    return lo, hi


def line_svg(series: Sequence[Series], xlabel: str, ylabel: str, title: str = "", log_y: bool = False) -> str:
    """One polyline per series; a series with a single point is drawn as one circle marker."""
    series = [s for s in series if len(s.x)]
    if not series:
        raise InvalidArgumentError("nothing to plot: no data points")
    ys = [np.log10(np.maximum(s.y, 1e-300)) if log_y else np.asarray(s.y, dtype=float) for s in series]
    x0, x1 = _span(np.concatenate([s.x for s in series]))
    y0, y1 = _span(np.concatenate(ys))
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for t in _ticks(x0, x1):
        out.append(f'<text x="{_num(px(t))}" y="{top + ph + 16}" text-anchor="middle" font-size="11">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        label = f"1e{t:.2g}" if log_y else f"{t:.4g}"
        out.append(f'<text x="{left - 6}" y="{_num(py(t) + 4)}" text-anchor="end" font-size="11">{label}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {top + ph / 2:.2f})">{escape(ylabel)}</text>'
    )
    for k, (s, y) in enumerate(zip(series, ys)):
        color = PALETTE[k % len(PALETTE)]
        if len(s.x) == 1:
            out.append(f'<circle cx="{_num(px(s.x[0]))}" cy="{_num(py(y[0]))}" r="3" fill="{color}"/>')
        else:
            pts = " ".join(f"{_num(px(a))},{_num(py(b))}" for a, b in zip(s.x, y))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 + 14 * k
        out.append(f'<text x="{left + pw - 6}" y="{ly}" text-anchor="end" font-size="11" fill="{color}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_svg(labels: Sequence[str], values: Sequence[float], ylabel: str, title: str = "") -> str:
    if not len(labels):
        raise InvalidArgumentError("nothing to plot: no bars")
    values = np.asarray(values, dtype=float)
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    vmax = float(values.max()) or 1.0
    slot = pw / len(labels)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for k, (name, v) in enumerate(zip(labels, values)):
        h = v / vmax * ph
        x = left + k * slot + 0.15 * slot
        out.append(
            f'<rect x="{_num(x)}" y="{_num(top + ph - h)}" width="{_num(0.7 * slot)}" height="{_num(h)}" '
            f'fill="{PALETTE[k % len(PALETTE)]}"/>'
        )
        out.append(f'<text x="{_num(x + 0.35 * slot)}" y="{top + ph + 16}" text-anchor="middle" font-size="11">{escape(name)}</text>')
        out.append(f'<text x="{_num(x + 0.35 * slot)}" y="{_num(top + ph - h - 4)}" text-anchor="middle" font-size="10">{v:.4g}</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {top + ph / 2:.2f})">{escape(ylabel)}</text>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap_pgm(values) -> tuple[bytes, str]:
    """8-bit binary PGM of a 2D array and the text describing its linear scaling.

    Row r of the image is row r of the array.  Values map linearly from
    [min, max] to [0, 255]; a constant map is rendered as mid-gray (128).
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.size == 0:
        raise InvalidArgumentError(f"heatmap needs a non-empty 2D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("heatmap values must be finite")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        pixels = np.full(v.shape, 128, dtype=np.uint8)
        note = f"constant map: every pixel {lo!r} rendered as gray level 128\n"
    else:
        pixels = np.rint((v - lo) / (hi - lo) * 255).astype(np.uint8)
        note = f"linear scale: gray 0 = {lo!r}, gray 255 = {hi!r}\n"
    rows, cols = v.shape
    header = f"P5\n{cols} {rows}\n255\n".encode()
    return header + pixels.tobytes(), note


# ---------------------------------------------------------------- CSV inputs


def read_numeric_csv(path) -> tuple[list[str], np.ndarray]:
    """Header plus float rows; any malformed row raises ParseError with its line number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ParseError(f"{path}: empty file", line=1)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", line=line_no)
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                raise ParseError(f"{path}: non-numeric value in {row}", line=line_no) from None
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def spectrum_series(path) -> list[Series]:
    """Series from a records.csv (one per material/thickness) or a spectrum CSV (one per column)."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header and header[0] == "material":
        from .dataset import read_records

        try:
            recs = read_records(path)
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: {exc}") from None
        groups: dict = {}
        for r in recs:
            if np.isfinite(r.absorbed_power):
                groups.setdefault((r.material, r.thickness), []).append((r.wavelength, r.absorbed_power))
        out = []
        for (m, t), pts in sorted(groups.items()):
            pts.sort()
            out.append(Series(f"{m} {t:g} nm", np.array([p[0] for p in pts]), np.array([p[1] for p in pts])))
        return out
    header, data = read_numeric_csv(path)
    if header[0] != "wavelength_nm":
        raise ParseError(f"{path}: first column must be wavelength_nm", line=1)
    return [Series(name, data[:, 0], data[:, k]) for k, name in enumerate(header[1:], start=1)]


def write_spectrum_plot(input_path, out_path, ylabel="Absorbed power (fraction)"):
    svg = line_svg(spectrum_series(input_path), "Wavelength (nm)", ylabel)
    Path(out_path).write_text(svg)


def write_map_plot(input_path, out_path):
    values = np.atleast_2d(np.loadtxt(input_path, delimiter=",", ndmin=2)) if Path(input_path).stat().st_size else None
    if values is None or values.size == 0:
        raise InvalidArgumentError(f"{input_path}: empty map")
    # arrays are stored with the propagation axis first; draw it left to right
    data, note = heatmap_pgm(values.T)
    Path(out_path).write_bytes(data)
    Path(str(out_path) + ".txt").write_text(note + "horizontal axis: propagation (x), vertical axis: lateral (y)\n")


def write_loss_plot(input_path, out_path):
    header, data = read_numeric_csv(input_path)
    if header[:3] != ["epoch", "train_loss", "val_loss"]:
        raise ParseError(f"{input_path}: expected an epoch,train_loss,val_loss,lr report", line=1)
    if data.shape[0] == 0:
        raise InvalidArgumentError(f"{input_path}: no epochs")
    series = [Series("train", data[:, 0], data[:, 1]), Series("validation", data[:, 0], data[:, 2])]
    Path(out_path).write_text(line_svg(series, "Epoch", "MSE (scaled units)", log_y=True))


def write_shap_plot(input_path, out_path):
    from .attribution import read_summary_csv

    try:
        rows = read_summary_csv(input_path)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{input_path}: {exc}") from None
    if not rows:
        raise InvalidArgumentError(f"{input_path}: no groups")
    Path(out_path).write_text(bar_svg([r[0] for r in rows], [r[1] for r in rows], "mean |phi|"))
