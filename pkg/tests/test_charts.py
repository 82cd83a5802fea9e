import xml.etree.ElementTree as ET

import pytest

from coalrates.charts import Series, line_chart_svg, rate_series
from coalrates.rate_functions import Regime, rate_curve

SVG = "{http://www.w3.org/2000/svg}"


def _render(series) -> ET.Element:
    text = line_chart_svg(series, title="t", x_label="x", y_label="y")
    return ET.fromstring(text.encode("utf-8"))


def test_tick_labels_sit_below_their_grid_lines() -> None:
    root = _render([Series("line", (0.0, 1.0, 2.0), (0.0, 1.0, 4.0), "#000000")])
    labels = [t for t in root.iter(f"{SVG}text") if "text-anchor:end" in t.get("style", "")]
    assert len(labels) == 6
    grid = [
        float(line.get("y1"))
        for line in root.iter(f"{SVG}line")
        if "#e4e4e4" in line.get("style", "")
    ]
    assert [float(t.get("y")) for t in labels] == pytest.approx([y + 4.0 for y in grid], abs=0.011)


def test_rate_series_renders_with_asymptotes() -> None:
    points = rate_curve(0.01, 0.5, 10)
    root = _render(rate_series(points, Regime.SMALL))
    polylines = root.findall(f"{SVG}polyline")
    assert len(polylines) == 5
    assert all(len(p.get("points").split()) == 10 for p in polylines)
