"""Report figures: per-metric SVG line charts and matplotlib PNG panels."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRIC_LABELS = {
    "si_sdr": "SI-SDR (dB)",
    "stoi": "STOI",
    "mel_mse": "Mel-spectrogram MSE",
}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=70, right=150, top=40, bottom=55)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def svg_line_chart(series: dict[str, tuple[list[float], list[float]]], title: str, ylabel: str) -> str:
    """Line chart with a log-scaled x axis; one ``<polyline>`` per series.

    Points with x <= 0 cannot sit on a log axis and are skipped.
    """
    pts = {k: [(x, y) for x, y in zip(xs, ys) if x > 0 and np.isfinite(y)] for k, (xs, ys) in series.items()}
    xs = [x for p in pts.values() for x, _ in p] or [1e-3, 1.0]
    ys = [y for p in pts.values() for _, y in p] or [0.0, 1.0]
    lx0, lx1 = math.log10(min(xs)), math.log10(max(xs))
    if lx1 - lx0 < 1e-9:
        lx0, lx1 = lx0 - 0.5, lx1 + 0.5
    y0, y1 = min(ys), max(ys)
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (math.log10(x) - lx0) / (lx1 - lx0) * pw

    def sy(y):
        return MARGIN["top"] + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2 - MARGIN["right"] / 2:.0f}" y="22" text-anchor="middle" '
           f'font-size="15">{escape(title)}</text>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="black"/>']
    for e in range(math.floor(lx0), math.ceil(lx1) + 1):
        for m in (1, 2, 5):
            x = m * 10.0**e
            if 10**lx0 * (1 - 1e-9) <= x <= 10**lx1 * (1 + 1e-9):
                px = sx(x)
                out.append(f'<line x1="{_fmt(px)}" y1="{MARGIN["top"] + ph}" x2="{_fmt(px)}" '
                           f'y2="{MARGIN["top"] + ph + 5}" stroke="black"/>')
                out.append(f'<text x="{_fmt(px)}" y="{MARGIN["top"] + ph + 18}" '
                           f'text-anchor="middle">{x:g}</text>')
    for y in _nice_ticks(y0, y1):
        py = sy(y)
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{_fmt(py)}" x2="{MARGIN["left"]}" '
                   f'y2="{_fmt(py)}" stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{_fmt(py + 4)}" text-anchor="end">{y:g}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.0f}" y="{HEIGHT - 12}" '
               f'text-anchor="middle">bit-flip probability (log scale)</text>')
    out.append(f'<text transform="translate(18 {MARGIN["top"] + ph / 2:.0f}) rotate(-90)" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    for i, (name, p) in enumerate(pts.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in p)
        out.append(f'<polyline id="series-{escape(name)}" fill="none" stroke="{color}" '
                   f'stroke-width="2" points="{coords}"/>')
        ly = MARGIN["top"] + 16 + 20 * i
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def sweep_figure(series_by_metric: dict[str, dict[str, tuple[list[float], list[float]]]], path) -> Path:
    """Robustness panels, one per metric, x = bit-flip probability on a log axis."""
    metrics = list(series_by_metric)
    fig, axes = plt.subplots(1, len(metrics), figsize=(4.2 * len(metrics), 3.4), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        for i, (codec, (xs, ys)) in enumerate(series_by_metric[metric].items()):
            keep = [j for j, x in enumerate(xs) if x > 0]
            ax.plot([xs[j] for j in keep], [ys[j] for j in keep], marker="o", ms=3,
                    color=PALETTE[i % len(PALETTE)], label=codec)
        ax.set_xscale("log")
        ax.set_xlabel("bit-flip probability")
        ax.set_ylabel(METRIC_LABELS.get(metric, metric))
        ax.grid(True, which="major", alpha=0.3)
    axes[0][0].legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def confusion_figure(matrices, path, title_prefix: str = "Q") -> Path:
    """Heatmaps of per-implicit-codebook level confusion (rows: encoder A)."""
    n = len(matrices)
    cols = min(4, n)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.5 * rows), squeeze=False)
    for ax in axes.ravel()[n:]:
        ax.axis("off")
    for ax, cm in zip(axes.ravel(), matrices):
        counts = np.asarray(cm.counts, dtype=float)
        norm = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
        ax.imshow(norm, cmap="Blues", vmin=0, vmax=1)
        ax.set_title(f"{title_prefix}{cm.dim}")
        ax.set_xlabel("encoder B level")
        ax.set_ylabel("encoder A level")
        ticks = range(counts.shape[0])
        ax.set_xticks(ticks)
        ax.set_yticks(ticks)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path
