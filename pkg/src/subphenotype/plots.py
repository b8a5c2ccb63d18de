"""Small self-rendered SVG charts built from the CSV files of a run bundle.

Only three primitives are needed: scatter panels, line charts and heatmaps.
Every chart reads the same CSV a reader would, so external tools can redraw
them from the bundle alone.
"""
from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
FONT = 'font-family="Helvetica, Arial, sans-serif"'

PLOT_FILES = ("silhouette.svg", "tsne.svg", "agreement.svg", "importance_ranks.svg")


def _num(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _text(x, y, s, size=11, anchor="middle", rotate=None, weight="normal") -> str:
    rot = f' transform="rotate({rotate} {_num(x)} {_num(y)})"' if rotate is not None else ""
    return (f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" text-anchor="{anchor}" '
            f'font-weight="{weight}" {FONT}{rot}>{escape(str(s))}</text>')


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(width)}" height="{_num(height)}" '
            f'viewBox="0 0 {_num(width)} {_num(height)}">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n')
    return head + "\n".join(body) + "\n</svg>\n"


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    return np.arange(np.ceil(lo / step) * step, hi + step * 1e-9, step)


def _blend(t: float, hi: str = "#08306b", lo: str = "#f7fbff") -> str:
    t = float(np.clip(t, 0.0, 1.0))
    a = np.array([int(lo[i:i + 2], 16) for i in (1, 3, 5)])
    b = np.array([int(hi[i:i + 2], 16) for i in (1, 3, 5)])
    c = np.rint(a + (b - a) * t).astype(int)
    return "#" + "".join(f"{v:02x}" for v in c)


# ---------------------------------------------------------------------------
# primitives


def line_chart(series: dict[str, tuple], title: str, xlabel: str, ylabel: str,
               marks: dict[str, float] | None = None, width: int = 560, height: int = 380) -> str:
    """Lines with point markers; ``marks`` draws a dashed vertical rule per named x."""
    left, right, top, bottom = 70, 150, 40, 55
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.array([0.0, 1.0])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(min(ys.min(), 0.0)), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1
    pad = 0.05 * (y1 - y0 or 1.0)
    y0, y1 = y0 - (pad if y0 < 0 else 0), y1 + pad

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (1 - (v - y0) / (y1 - y0)) * ph

    body = [_text(width / 2, 22, title, 14, weight="bold"),
            f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in _ticks(x0, x1, min(10, int(x1 - x0) or 1)):
        body.append(f'<line x1="{_num(sx(t))}" y1="{top + ph}" x2="{_num(sx(t))}" y2="{top + ph + 4}" stroke="#444"/>')
        body.append(_text(sx(t), top + ph + 17, _num(t), 10))
    for t in _ticks(y0, y1):
        body.append(f'<line x1="{left - 4}" y1="{_num(sy(t))}" x2="{left}" y2="{_num(sy(t))}" stroke="#444"/>')
        body.append(f'<line x1="{left}" y1="{_num(sy(t))}" x2="{left + pw}" y2="{_num(sy(t))}" stroke="#eee"/>')
        body.append(_text(left - 7, sy(t) + 3, f"{t:.3g}", 10, anchor="end"))
    body.append(_text(left + pw / 2, height - 15, xlabel, 11))
    body.append(_text(18, top + ph / 2, ylabel, 11, rotate=-90))
    for name, xv in (marks or {}).items():
        body.append(f'<line x1="{_num(sx(xv))}" y1="{top}" x2="{_num(sx(xv))}" y2="{top + ph}" '
                    f'stroke="#888" stroke-dasharray="4 3"/>')
        body.append(_text(sx(xv) + 4, top + 12, name, 10, anchor="start"))
    for i, (name, (x, y)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_num(sx(a))},{_num(sy(b))}" for a, b in zip(x, y))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        body += [f'<circle cx="{_num(sx(a))}" cy="{_num(sy(b))}" r="3" fill="{color}"/>' for a, b in zip(x, y)]
        ly = top + 10 + 18 * i
        body.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(_text(left + pw + 37, ly + 4, name, 10, anchor="start"))
    return _svg(width, height, body)


def scatter_grid(panels: list[tuple[str, np.ndarray, np.ndarray]], title: str, ncols: int = 2,
                 panel_size: int = 340) -> str:
    """One scatter per panel, points coloured by integer label."""
    nrows = max(1, -(-len(panels) // ncols))
    head, gap = 40, 30
    width = ncols * panel_size + (ncols + 1) * gap
    height = head + nrows * (panel_size + gap) + 30
    body = [_text(width / 2, 24, title, 14, weight="bold")]
    labels_seen: set[int] = set()
    for p, (name, xy, labels) in enumerate(panels):
        r, c = divmod(p, ncols)
        ox = gap + c * (panel_size + gap)
        oy = head + r * (panel_size + gap) + 16
        inner = panel_size - 20
        body.append(_text(ox + panel_size / 2, oy - 4, name, 12))
        body.append(f'<rect x="{ox}" y="{oy}" width="{panel_size}" height="{panel_size - 16}" fill="none" stroke="#444"/>')
        xy = np.asarray(xy, float)
        if xy.size == 0:
            continue
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        pos = (xy - lo) / span
        for (u, v), lab in zip(pos, np.asarray(labels, int)):
            labels_seen.add(int(lab))
            cx = ox + 10 + u * inner
            cy = oy + 8 + (1 - v) * (inner - 16)
            body.append(f'<circle cx="{_num(cx)}" cy="{_num(cy)}" r="1.8" fill="{PALETTE[lab % len(PALETTE)]}" '
                        f'fill-opacity="0.75"/>')
    ly = height - 14
    for i, lab in enumerate(sorted(labels_seen)):
        lx = gap + 110 * i
        body.append(f'<circle cx="{lx}" cy="{ly - 4}" r="5" fill="{PALETTE[lab % len(PALETTE)]}"/>')
        body.append(_text(lx + 9, ly, f"subgroup {lab}", 11, anchor="start"))
    return _svg(width, height, body)


def heatmap(values: np.ndarray, row_labels: list[str], col_labels: list[str], title: str,
            fmt: str = "{:.2f}", reverse: bool = False, vmin: float | None = None, vmax: float | None = None,
            xlabel: str = "", ylabel: str = "", cell: int = 44) -> str:
    """Annotated matrix; darker means larger, or smaller when ``reverse``."""
    values = np.asarray(values, float)
    n_r, n_c = values.shape
    left = 20 + 7 * max((len(s) for s in row_labels), default=4)
    top, right, bottom = 60, 20, 70
    width = left + n_c * cell + right
    height = top + n_r * cell + bottom
    finite = values[np.isfinite(values)]
    lo = float(finite.min()) if vmin is None and finite.size else (vmin or 0.0)
    hi = float(finite.max()) if vmax is None and finite.size else (vmax if vmax is not None else 1.0)
    body = [_text(width / 2, 24, title, 14, weight="bold")]
    for i in range(n_r):
        y = top + i * cell
        body.append(_text(left - 6, y + cell / 2 + 4, row_labels[i], 10, anchor="end"))
        for j in range(n_c):
            x = left + j * cell
            v = values[i, j]
            if np.isfinite(v):
                t = (v - lo) / (hi - lo) if hi > lo else 0.5
                t = 1 - t if reverse else t
                fill, label = _blend(t), fmt.format(v)
                ink = "white" if t > 0.55 else "black"
            else:
                fill, label, ink = "#dddddd", "", "black"
            body.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/>')
            if label:
                body.append(f'<text x="{_num(x + cell / 2)}" y="{_num(y + cell / 2 + 4)}" font-size="10" '
                            f'text-anchor="middle" fill="{ink}" {FONT}>{escape(label)}</text>')
    for j, name in enumerate(col_labels):
        x = left + j * cell + cell / 2
        body.append(_text(x, top - 8, name, 10, anchor="start", rotate=-35))
    if xlabel:
        body.append(_text(left + n_c * cell / 2, height - 30, xlabel, 11))
    if ylabel:
        body.append(_text(12, top + n_r * cell / 2, ylabel, 11, rotate=-90))
    return _svg(width, height, body)


# ---------------------------------------------------------------------------
# bundle figures


def silhouette_figure(bundle_dir: Path) -> str:
    df = pd.read_csv(bundle_dir / "silhouette.csv")
    series = {}
    for (method, metric), g in df.groupby(["method", "metric"], sort=True):
        g = g.sort_values("k")
        series[f"{method} / {metric}"] = (g["k"].to_numpy(), g["mean_width"].to_numpy())
    chosen = df.loc[df["selected"] == 1, "k"]
    marks = {f"k = {int(chosen.iloc[0])}": float(chosen.iloc[0])} if len(chosen) else None
    return line_chart(series, "Mean silhouette width by number of clusters", "k", "mean silhouette width", marks)


def tsne_figure(bundle_dir: Path) -> str:
    df = pd.read_csv(bundle_dir / "embedding.csv")
    panels = []
    for metric, g in df.groupby("metric", sort=True):
        xy = g[["x", "y"]].to_numpy()
        panels.append((f"{metric}: k-means", xy, g["kmeans_label"].to_numpy()))
        panels.append((f"{metric}: hierarchical", xy, g["hierarchical_label"].to_numpy()))
    return scatter_grid(panels, "t-SNE projections of delirium cases")


def agreement_figure(bundle_dir: Path, metric: str | None = None) -> str:
    df = pd.read_csv(bundle_dir / "agreement.csv")
    if metric is None:
        kappa_path = bundle_dir / "kappa.json"
        metric = json.loads(kappa_path.read_text())["primary_metric"] if kappa_path.exists() else df["metric"].iloc[0]
    g = df[df["metric"] == metric]
    k = int(g["kmeans_label"].max()) + 1 if len(g) else 0
    M = np.zeros((k, k))
    M[g["kmeans_label"].to_numpy(int), g["hierarchical_label"].to_numpy(int)] = 100.0 * g["row_fraction"].to_numpy()
    labels = [str(i) for i in range(k)]
    return heatmap(M, labels, labels, f"k-means vs hierarchical agreement ({metric}), row %", fmt="{:.1f}",
                   vmin=0.0, vmax=100.0, xlabel="hierarchical cluster (aligned)", ylabel="k-means cluster")


def importance_figure(bundle_dir: Path, top: int = 10) -> str:
    df = pd.read_csv(bundle_dir / "importance_ranks.csv")
    scopes = list(dict.fromkeys(df["scope"]))
    pivot = df.pivot(index="feature", columns="scope", values="mean_rank")[scopes]
    keep = []
    for s in scopes:
        for feat in pivot[s].sort_values(kind="stable").index[:top]:
            if feat not in keep:
                keep.append(feat)
    pivot = pivot.loc[keep]
    return heatmap(pivot.to_numpy(), list(pivot.index), scopes,
                   f"Ensemble mean importance rank (top {top} per scope)", fmt="{:.0f}", reverse=True,
                   vmin=1.0, vmax=float(np.nanmax(df["mean_rank"])) if len(df) else 1.0, cell=40)


def render_bundle_plots(bundle_dir: str | Path) -> dict[str, Path]:
    """Write the four SVG figures next to the CSVs they are drawn from."""
    bundle_dir = Path(bundle_dir)
    makers = {
        "silhouette.svg": silhouette_figure,
        "tsne.svg": tsne_figure,
        "agreement.svg": agreement_figure,
        "importance_ranks.svg": importance_figure,
    }
    out = {}
    for name, make in makers.items():
        path = bundle_dir / name
        path.write_text(make(bundle_dir), encoding="utf-8")
        out[name] = path
    return out
