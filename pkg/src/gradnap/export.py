"""Plain-text outputs: CSV matrices, JSON sidecars, minimal SVG plots, file digests."""

from __future__ import annotations

import csv
import hashlib
import json
import re
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import FormatError
from .profiles import GradNAP

PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"]


def fmt(v) -> str:
    """Shortest repr that round-trips a float64 exactly."""
    return repr(float(v))


def write_matrix_csv(path, m: np.ndarray) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in m:
            w.writerow(fmt(v) for v in row)


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        m = np.array([[float(v) for v in r] for r in rows])
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None
    if m.ndim != 2:
        raise FormatError(f"{path}: ragged matrix")
    return m


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def safe_name(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(s))


def gradnap_stem(group: str, layer: int) -> str:
    return f"{safe_name(group)}_L{layer}"


def save_gradnap(directory, nap: GradNAP, skipped: int = 0) -> Path:
    directory = Path(directory)
    stem = gradnap_stem(nap.group, nap.layer)
    write_matrix_csv(directory / f"{stem}.csv", nap.values)
    write_json(directory / f"{stem}.json", {
        "group": nap.group, "layer": nap.layer, "count": nap.count,
        "W": nap.width, "skipped": skipped, "degenerate": nap.degenerate,
    })
    return directory / f"{stem}.csv"


def load_gradnap(csv_path) -> GradNAP:
    csv_path = Path(csv_path)
    values = read_matrix_csv(csv_path)
    side = csv_path.with_suffix(".json")
    if side.is_file():
        meta = json.loads(side.read_text())
        if meta.get("W") != values.shape[1]:
            raise FormatError(f"{csv_path}: width {values.shape[1]} but sidecar says {meta.get('W')}")
        return GradNAP(meta["group"], meta["layer"], values, meta["count"], degenerate=meta["degenerate"])
    return GradNAP(csv_path.stem, -1, values, 0)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_tree(root, exclude=("manifest.json",)) -> dict:
    root = Path(root)
    return {
        str(p.relative_to(root)): sha256_file(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name not in exclude
    }


# -- SVG -----------------------------------------------------------------------

def _svg(width, height, body, title=""):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    t = f"<title>{escape(title)}</title>" if title else ""
    return "\n".join([head, t, *body, "</svg>", ""])


def _color(v, vmax):
    # diverging blue-white-red
    u = 0.0 if vmax == 0 else max(-1.0, min(1.0, v / vmax))
    if u >= 0:
        r, g, b = 255, int(255 * (1 - u)), int(255 * (1 - u))
    else:
        r, g, b = int(255 * (1 + u)), int(255 * (1 + u)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def svg_heatmap(path, m: np.ndarray, title: str = "", cell: int = 8) -> None:
    """Rows drawn bottom-up so row 0 (lowest frequency bin) sits at the bottom."""
    m = np.asarray(m, dtype=np.float64)
    rows, cols = m.shape
    vmax = float(np.abs(m).max())
    body = []
    for i in range(rows):
        y = (rows - 1 - i) * cell
        for j in range(cols):
            body.append(f'<rect x="{j * cell}" y="{y}" width="{cell}" height="{cell}" '
                        f'fill="{_color(m[i, j], vmax)}"/>')
    Path(path).write_text(_svg(cols * cell, rows * cell, body, title))


def svg_lines(path, x, series, highlight=(), title: str = "", width=480, height=240) -> None:
    """One polyline per row of ``series``; highlighted rows drawn last in colour."""
    x = np.asarray(x, dtype=np.float64)
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    pad = 20
    x0, x1 = float(x.min()), float(x.max())
    finite = series[np.isfinite(series)]
    y0, y1 = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1

    def pts(row):
        px = pad + (x - x0) / (x1 - x0) * (width - 2 * pad)
        py = height - pad - (row - y0) / (y1 - y0) * (height - 2 * pad)
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))

    hl = [int(h) for h in highlight]
    body = []
    zero = height - pad - (0 - y0) / (y1 - y0) * (height - 2 * pad)
    if y0 <= 0 <= y1:
        body.append(f'<line x1="{pad}" y1="{zero:.2f}" x2="{width - pad}" y2="{zero:.2f}" stroke="#bbbbbb"/>')
    for i in [i for i in range(len(series)) if i not in hl] + hl:
        style = (f'stroke="{PALETTE[hl.index(i) % len(PALETTE)]}" stroke-width="2"' if i in hl
                 else 'stroke="#999999" stroke-width="1"')
        body.append(f'<polyline data-series="{i}" fill="none" {style} points="{pts(series[i])}"/>')
    Path(path).write_text(_svg(width, height, body, title))
