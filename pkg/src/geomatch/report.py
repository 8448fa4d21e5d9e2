"""Turn evaluation CSVs into SVG line plots, a trend table and a markdown summary."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from geomatch.errors import MalformedCSVError, MissingInputError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


@dataclass
class EvalTable:
    path: Path
    kind: str
    header: list[str]
    rows: list[dict] = field(default_factory=list)


_NUMERIC = {
    "precision": ("offset", "pairs", "precision", "mean_matches"),
    "tracks": ("tracks", "mean_track_length"),
}


def _kind(header: Sequence[str]) -> str:
    h = list(header)
    if h[:3] == ["method", "variable", "offset"] and "precision" in h:
        return "precision"
    if h[:3] == ["method", "pairs", "failures"] and any(c.startswith("auc_") for c in h):
        return "auc"
    if h[:3] == ["method", "tracks", "mean_track_length"]:
        return "tracks"
    return ""


def _number(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan")
    return v


def read_eval_csv(path) -> EvalTable:
    p = Path(path)
    if not p.exists():
        raise MissingInputError(f"missing file: {p}")
    lines = p.read_text().splitlines()
    header, table = None, None
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        fields = next(csv.reader([raw]))
        if header is None:
            header = fields
            kind = _kind(header)
            if not kind:
                raise MalformedCSVError(p, lineno, "unrecognised report header")
            table = EvalTable(p, kind, header)
            numeric = _NUMERIC.get(kind) or tuple(c for c in header if c != "method")
            continue
        if len(fields) != len(header):
            raise MalformedCSVError(p, lineno, f"expected {len(header)} fields, found {len(fields)}")
        row = dict(zip(header, fields))
        for col in numeric:
            try:
                row[col] = _number(row[col])
            except ValueError:
                raise MalformedCSVError(p, lineno, f"column {col!r}: non-numeric value {row[col]!r}") from None
        table.rows.append(row)
    if table is None:
        raise MalformedCSVError(p, max(1, len(lines)), "no header row")
    return table


def _n(x: float) -> str:
    return f"{x:.2f}"


def line_plot_svg(title: str, xlabel: str, ylabel: str, series: dict[str, list[tuple[float, float]]]) -> str:
    """One polyline per series; axes, ticks and a legend. Output depends only on the input."""
    w, h = 640, 400
    left, right, top, bottom = 70, 170, 40, 60
    pw, ph = w - left - right, h - top - bottom
    xs = [x for pts in series.values() for x, _ in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    y0, y1 = 0.0, 1.0
    ys = [y for pts in series.values() for _, y in pts]
    if ys and (min(ys) < 0 or max(ys) > 1):
        y0, y1 = min(0.0, min(ys)), max(ys) * 1.05 or 1.0

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2 - right / 2:.0f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for k in range(6):
        yv = y0 + (y1 - y0) * k / 5
        out.append(f'<line x1="{left - 4}" y1="{_n(sy(yv))}" x2="{left}" y2="{_n(sy(yv))}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_n(sy(yv) + 4)}" text-anchor="end" font-size="11">{yv:.2f}</text>')
    for xv in sorted(set(xs)):
        out.append(f'<line x1="{_n(sx(xv))}" y1="{top + ph}" x2="{_n(sx(xv))}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{_n(sx(xv))}" y="{top + ph + 18}" text-anchor="middle" font-size="11">{xv:g}</text>')
    out.append(f'<text x="{left + pw / 2:.0f}" y="{h - 16}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>')
    out.append(
        f'<text x="18" y="{top + ph / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {top + ph / 2:.0f})">{escape(ylabel)}</text>'
    )
    for k, (name, pts) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{_n(sx(x))},{_n(sy(y))}" for x, y in sorted(pts))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = top + 10 + 20 * k
        lx = left + pw + 15
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}" font-size="12">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


_XLABEL = {"distance": "distance offset (scene units)", "alpha": "alpha offset (degrees)", "beta": "beta offset (degrees)"}


def _precision_series(tables: Sequence[EvalTable]) -> dict[str, dict[str, list[tuple[float, float]]]]:
    by_var: dict[str, dict[str, list]] = {}
    for t in tables:
        for r in t.rows:
            by_var.setdefault(r["variable"], {}).setdefault(r["method"], []).append((r["offset"], r["precision"]))
    return by_var


def trend_csv(by_var) -> str:
    lines = [
        "# geomatch precision trend",
        "# columns: variable, method, first and last offset with their precision, last minus first,",
        "# drops = 1 if precision at the last offset is below the first, monotone = 1 if precision never increases between steps",
        "variable,method,first_offset,first_precision,last_offset,last_precision,delta,drops,monotone",
    ]
    for var, methods in by_var.items():
        for method, pts in methods.items():
            pts = sorted(pts)
            (fo, fp), (lo, lp) = pts[0], pts[-1]
            mono = all(b[1] <= a[1] for a, b in zip(pts, pts[1:]))
            lines.append(f"{var},{method},{fo:g},{fp:.6f},{lo:g},{lp:.6f},{lp - fp:.6f},{int(lp < fp)},{int(mono)}")
    return "\n".join(lines) + "\n"


def summary_markdown(tables: Sequence[EvalTable], by_var) -> str:
    out = ["# Evaluation summary", ""]
    for var, methods in by_var.items():
        out += [f"## Matching precision, {var} sweep", "", "| method | mean precision | first step | last step |", "|---|---|---|---|"]
        for method, pts in methods.items():
            pts = sorted(pts)
            mean = sum(p for _, p in pts) / len(pts)
            out.append(f"| {method} | {mean:.4f} | {pts[0][1]:.4f} | {pts[-1][1]:.4f} |")
        out.append("")
    for t in tables:
        if t.kind == "auc":
            cols = [c for c in t.header if c.startswith("auc_")]
            title = "Pose AUC" if "pose" in t.path.name else "AUC"
            out += [f"## {title} ({t.path.name})", "", "| method | pairs | " + " | ".join(cols) + " |", "|---" * (len(cols) + 2) + "|"]
            for r in t.rows:
                out.append(f"| {r['method']} | {r['pairs']:g} | " + " | ".join(f"{r[c]:.4f}" for c in cols) + " |")
            out.append("")
        elif t.kind == "tracks":
            out += [f"## Track length ({t.path.name})", "", "| method | tracks | mean track length |", "|---|---|---|"]
            for r in t.rows:
                out.append(f"| {r['method']} | {r['tracks']:g} | {r['mean_track_length']:.4f} |")
            out.append("")
    return "\n".join(out).rstrip() + "\n"


def build_report(csv_paths: Sequence, out_dir) -> list[Path]:
    if not csv_paths:
        raise MissingInputError("report needs at least one CSV")
    tables = [read_eval_csv(p) for p in csv_paths]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    by_var = _precision_series([t for t in tables if t.kind == "precision"])
    for var, series in by_var.items():
        p = out / f"precision_{var}.svg"
        p.write_text(line_plot_svg(f"Matching precision vs {var} offset", _XLABEL.get(var, var), "precision", series))
        written.append(p)
    if by_var:
        p = out / "trend.csv"
        p.write_text(trend_csv(by_var))
        written.append(p)
    p = out / "summary.md"
    p.write_text(summary_markdown(tables, by_var))
    written.append(p)
    return written
