"""Metric rows, CSV output, rank correlation and selection composition."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._io import atomic_text
from .data import ExampleSet

METRICS_HEADER = ["step", "test_accuracy", "corrupted_frac", "whitenoise_frac", "mean_score"]


@dataclass(frozen=True)
class MetricsRow:
    step: int
    test_accuracy: float
    corrupted_frac: float
    whitenoise_frac: float
    mean_score: float = math.nan
    max_score: float = math.nan


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_metrics_csv(path, rows) -> None:
    with atomic_text(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r.step, _fmt(r.test_accuracy), _fmt(r.corrupted_frac), _fmt(r.whitenoise_frac), _fmt(r.mean_score)])


def read_metrics_csv(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [
            {k: (float(v) if v != "" else math.nan) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


# ------------------------------------------------------------- spearman


def spearman_rho(a, b) -> float:
    """Spearman correlation with average ranks for ties; nan if either side is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("inputs must be equal-length vectors")
    if a.size < 2:
        raise ValueError("need at least two points for a rank correlation")
    ra = _kernels.average_ranks(a) - (a.size + 1) / 2.0
    rb = _kernels.average_ranks(b) - (b.size + 1) / 2.0
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0.0:
        return math.nan
    return float(np.clip((ra @ rb) / den, -1.0, 1.0))


def spearman_by_step(dump_a, dump_b) -> list[tuple[int, float]]:
    """Per-step rho over the (step, id) keys present in both score dumps."""
    out = []
    for step in sorted(set(dump_a) & set(dump_b)):
        shared = sorted(set(dump_a[step]) & set(dump_b[step]))
        if len(shared) < 2:
            raise ValueError(f"step {step}: fewer than two shared points")
        out.append((step, spearman_rho([dump_a[step][i] for i in shared], [dump_b[step][i] for i in shared])))
    if not out:
        raise ValueError("score dumps share no steps")
    return out


def write_rho_csv(path, rows) -> None:
    with atomic_text(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "rho"])
        for step, rho in rows:
            w.writerow([step, _fmt(rho)])


# ---------------------------------------------------------- composition


@dataclass
class Composition:
    steps: np.ndarray
    corrupted: np.ndarray
    white_noise: np.ndarray
    window: int = 100

    def windowed(self, values) -> np.ndarray:
        """Trailing mean over up to ``window`` steps."""
        c = np.cumsum(np.r_[0.0, values])
        idx = np.arange(1, values.size + 1)
        lo = np.maximum(idx - self.window, 0)
        return (c[idx] - c[lo]) / (idx - lo)


def selection_composition(batches, train: ExampleSet, window=100) -> Composition:
    """Corrupted and white-noise share of every selected batch."""
    rows = [np.asarray(b, dtype=np.int64) for b in batches]
    corrupted = np.array([train.corrupted[train.positions(b)].mean() if b.size else 0.0 for b in rows])
    white = np.array([train.white_noise[train.positions(b)].mean() if b.size else 0.0 for b in rows])
    return Composition(np.arange(1, len(rows) + 1), corrupted, white, window)


def write_composition_csv(path, comp: Composition) -> None:
    cw, ww = comp.windowed(comp.corrupted), comp.windowed(comp.white_noise)
    with atomic_text(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "corrupted_frac", "whitenoise_frac", f"corrupted_frac_w{comp.window}", f"whitenoise_frac_w{comp.window}"])
        for i, step in enumerate(comp.steps.tolist()):
            w.writerow([step, _fmt(comp.corrupted[i]), _fmt(comp.white_noise[i]), _fmt(cw[i]), _fmt(ww[i])])


# ---------------------------------------------------------------- charts


def svg_line_chart(xs, series: dict, title="", width=640, height=360) -> str:
    """Minimal SVG polyline chart; ``series`` maps a label to y-values aligned with ``xs``."""
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    pad = 48
    xs = np.asarray(xs, dtype=np.float64)
    ys_all = np.concatenate([np.asarray(v, dtype=np.float64) for v in series.values()]) if series else np.zeros(1)
    ys_all = ys_all[np.isfinite(ys_all)]
    y_lo, y_hi = (float(ys_all.min()), float(ys_all.max())) if ys_all.size else (0.0, 1.0)
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    x_lo, x_hi = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    def px(x):
        return pad + (x - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - pad + 16}" text-anchor="middle">{x_lo:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="middle">{x_hi:g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end">{y_lo:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end">{y_hi:.3g}</text>',
    ]
    for i, (label, ys) in enumerate(series.items()):
        colour = palette[i % len(palette)]
        ys = np.asarray(ys, dtype=np.float64)
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys) if np.isfinite(y))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * i}" fill="{colour}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
