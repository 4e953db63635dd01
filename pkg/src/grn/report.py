"""Static SVG figures from result CSVs.

Pure file transformation: curves and confusion matrices are read back from
the CSVs written by training, nothing is recomputed.
"""
from __future__ import annotations

import csv
import re
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import DataFormatError

W, H = 480, 320
LEFT, RIGHT, TOP, BOTTOM = 60, 20, 30, 50
COLORS = {"train_loss": "#1f77b4", "val_loss": "#d62728", "train_acc": "#1f77b4", "val_acc": "#d62728"}
_FOLD_RE = re.compile(r"fold_(\d+)_(curves|confusion)\.csv$")


def read_curves(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataFormatError(f"{path}: no epochs")
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


def read_confusion(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    try:
        return [[int(v) for v in r[1:]] for r in rows]
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def curves_svg(epochs, series: dict, ylabel: str, title: str) -> str:
    ys = [v for vals in series.values() for v in vals]
    ylo, yhi = min(ys), max(ys)
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    xlo, xhi = min(epochs), max(max(epochs), min(epochs) + 1)
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM

    def px(x):
        return LEFT + pw * (x - xlo) / (xhi - xlo)

    def py(y):
        return TOP + ph * (1 - (y - ylo) / (yhi - ylo))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<line class="axis" x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for t in _ticks(ylo, yhi):
        out.append(f'<text class="tick" x="{LEFT - 6}" y="{py(t) + 4:.1f}" font-size="10" text-anchor="end">{t:.3g}</text>')
    for t in _ticks(xlo, xhi):
        out.append(f'<text class="tick" x="{px(t):.1f}" y="{TOP + ph + 14}" font-size="10" text-anchor="middle">{t:.0f}</text>')
    out.append(f'<text class="axis-label" x="{LEFT + pw / 2:.1f}" y="{H - 12}" font-size="12" text-anchor="middle">epoch</text>')
    out.append(
        f'<text class="axis-label" x="16" y="{TOP + ph / 2:.1f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {TOP + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    out.append(f'<text class="title" x="{W / 2}" y="18" font-size="13" text-anchor="middle">{escape(title)}</text>')
    for i, (name, vals) in enumerate(series.items()):
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(epochs, vals))
        color = COLORS.get(name, "black")
        out.append(f'<polyline class="series" data-series="{name}" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        lx = LEFT + pw - 90
        ly = TOP + 12 + 14 * i
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 16}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text class="legend" x="{lx + 20}" y="{ly + 4}" font-size="10">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def confusion_svg(cm, title: str) -> str:
    n_rows, n_cols = len(cm), len(cm[0]) if cm else 0
    cell = 60
    x0, y0 = 70, 50
    w, h = x0 + cell * n_cols + 20, y0 + cell * n_rows + 30
    peak = max((v for r in cm for v in r), default=0) or 1
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<title>{escape(title)}</title>',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<text class="title" x="{w / 2}" y="18" font-size="13" text-anchor="middle">{escape(title)}</text>',
        f'<text class="axis-label" x="{x0 + cell * n_cols / 2}" y="38" font-size="12" text-anchor="middle">predicted</text>',
        f'<text class="axis-label" x="14" y="{y0 + cell * n_rows / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {y0 + cell * n_rows / 2})">true</text>',
    ]
    for i, row in enumerate(cm):
        for j, v in enumerate(row):
            shade = int(round(255 * (1 - v / peak)))
            x, y = x0 + j * cell, y0 + i * cell
            ink = "white" if v / peak > 0.6 else "black"
            out.append(f'<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#888"/>')
            out.append(
                f'<text class="count" data-row="{i}" data-col="{j}" x="{x + cell / 2}" y="{y + cell / 2 + 5}" '
                f'font-size="14" text-anchor="middle" fill="{ink}">{v}</text>'
            )
        out.append(f'<text class="tick" x="{x0 - 8}" y="{y0 + i * cell + cell / 2 + 4}" font-size="11" text-anchor="end">{i}</text>')
    for j in range(n_cols):
        out.append(f'<text class="tick" x="{x0 + j * cell + cell / 2}" y="{y0 + cell * n_rows + 16}" font-size="11" text-anchor="middle">{j}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def expected_inputs(results_dir: Path) -> list:
    """Fold CSVs the report needs, as names relative to ``results_dir``."""
    ids = set()
    for p in results_dir.glob("fold_*_*.csv"):
        m = _FOLD_RE.search(p.name)
        if m:
            ids.add(int(m.group(1)))
    return [name for k in sorted(ids) for name in (f"fold_{k}_curves.csv", f"fold_{k}_confusion.csv")]


def render_report(results_dir, out_dir) -> list:
    """Write loss, accuracy and confusion SVGs for every fold; return their paths.

    All inputs are validated and all figures rendered before anything is
    written, so a failure leaves ``out_dir`` untouched.
    """
    results_dir, out_dir = Path(results_dir), Path(out_dir)
    if not results_dir.is_dir():
        raise DataFormatError(f"results directory {results_dir} does not exist")
    needed = expected_inputs(results_dir)
    if not needed:
        raise DataFormatError(
            f"no result CSVs in {results_dir}: missing fold_<k>_curves.csv and fold_<k>_confusion.csv"
        )
    missing = [n for n in needed if not (results_dir / n).is_file()]
    if missing:
        raise DataFormatError(f"missing result CSVs in {results_dir}: {', '.join(missing)}")

    figures = {}
    for name in needed:
        k = int(_FOLD_RE.search(name).group(1))
        path = results_dir / name
        if name.endswith("_curves.csv"):
            cols = read_curves(path)
            ep = cols["epoch"]
            figures[f"fold_{k}_loss.svg"] = curves_svg(
                ep, {"train_loss": cols["train_loss"], "val_loss": cols["val_loss"]}, "loss", f"fold {k}: loss"
            )
            figures[f"fold_{k}_accuracy.svg"] = curves_svg(
                ep, {"train_acc": cols["train_acc"], "val_acc": cols["val_acc"]}, "accuracy", f"fold {k}: accuracy"
            )
        else:
            figures[f"fold_{k}_confusion.svg"] = confusion_svg(read_confusion(path), f"fold {k}: confusion")

    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in figures.items():
        p = out_dir / name
        p.write_text(text, encoding="utf-8")
        written.append(p)
    return written
