from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader

from .estimators import MethodGroup
from .rate_functions import RatePoint, Regime, asymptote

BASE_DIR = Path(__file__).resolve().parent
templates = Environment(
    loader=FileSystemLoader(str(BASE_DIR / "templates")),
    autoescape=True,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)

METHOD_COLORS = {
    MethodGroup.GLASS: "#1f77b4",
    MethodGroup.RSTAR: "#d62728",
    MethodGroup.STEAC: "#2ca02c",
}
METHOD_LABELS = {
    MethodGroup.GLASS: "ML/GLASS/MT",
    MethodGroup.RSTAR: "R*/STAR/MDC",
    MethodGroup.STEAC: "STEAC/SC",
}


@dataclass(frozen=True)
class Series:
    label: str
    xs: tuple[float, ...]
    ys: tuple[float, ...]
    color: str
    dotted: bool = False


@dataclass(frozen=True)
class _Box:
    left: float
    right: float
    top: float
    bottom: float


@dataclass(frozen=True)
class _Tick:
    pos: str
    label: str
    label_pos: str


def _coord(value: float) -> str:
    return f"{value:.2f}"


def _finite(series: Series) -> list[tuple[float, float]]:
    return [(x, y) for x, y in zip(series.xs, series.ys) if math.isfinite(x) and math.isfinite(y)]


def _ticks(lo: float, hi: float, count: int, to_pixel) -> list[_Tick]:
    ticks = []
    for v in np.linspace(lo, hi, count):
        pixel = to_pixel(float(v))
        ticks.append(_Tick(_coord(pixel), f"{v:.3g}", _coord(pixel + 4.0)))
    return ticks


def line_chart_svg(
    series: Sequence[Series],
    *,
    title: str,
    x_label: str,
    y_label: str,
    width: int = 720,
    height: int = 440,
) -> str:
    """Render series as a self-contained SVG line chart."""
    points = [p for s in series for p in _finite(s)]
    if not points:
        raise ValueError("Nothing to plot: no finite points")
    x_lo, x_hi = min(p[0] for p in points), max(p[0] for p in points)
    y_lo, y_hi = min(0.0, min(p[1] for p in points)), max(p[1] for p in points)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    box = _Box(left=70.0, right=width - 20.0, top=40.0, bottom=height - 50.0)

    def px(x: float) -> float:
        return box.left + (x - x_lo) / (x_hi - x_lo) * (box.right - box.left)

    def py(y: float) -> float:
        return box.bottom - (y - y_lo) / (y_hi - y_lo) * (box.bottom - box.top)

    rendered = [
        {
            "label": s.label,
            "color": s.color,
            "dotted": s.dotted,
            "width": 1.5 if s.dotted else 2,
            "points": " ".join(f"{_coord(px(x))},{_coord(py(y))}" for x, y in _finite(s)),
        }
        for s in series
    ]
    return templates.get_template("rate_chart.svg.j2").render(
        width=width,
        height=height,
        title=title,
        x_label=x_label,
        y_label=y_label,
        plot=box,
        x_ticks=_ticks(x_lo, x_hi, 6, px),
        y_ticks=_ticks(y_lo, y_hi, 6, py),
        series=rendered,
    )


def rate_series(points: Sequence[RatePoint], regime: Optional[Regime] = None) -> list[Series]:
    """One curve per method group, plus dotted asymptotes when a regime is given."""
    ts = tuple(p.t for p in points)
    values = {
        MethodGroup.GLASS: tuple(p.alpha_glass for p in points),
        MethodGroup.RSTAR: tuple(p.alpha_rstar for p in points),
        MethodGroup.STEAC: tuple(p.alpha_steac for p in points),
    }
    out = [Series(METHOD_LABELS[g], ts, values[g], METHOD_COLORS[g]) for g in MethodGroup]
    if regime is not None:
        for group in (MethodGroup.RSTAR, MethodGroup.STEAC):
            ys = tuple(asymptote(group, t, regime) for t in ts)
            label = f"{METHOD_LABELS[group]} ({regime.value}-t)"
            out.append(Series(label, ts, ys, METHOD_COLORS[group], dotted=True))
    return out


def write_svg(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
