import xml.etree.ElementTree as ET

import pytest

from darkfigure.plots import histogram_svg, scatter_svg


def test_scatter_svg_valid():
    rows = [
        {"neg_bic": -10.0, "total_estimate": 100.0, "diverged": False, "best_bic": False},
        {"neg_bic": -5.0, "total_estimate": 150.0, "diverged": True, "best_bic": True},
    ]
    root = ET.fromstring(scatter_svg(rows))
    ns = "{http://www.w3.org/2000/svg}"
    assert len(root.findall(f"{ns}circle")) == 2
    assert any(l.get("stroke-dasharray") for l in root.findall(f"{ns}line"))


def test_histogram_svg_valid():
    bins = [{"lower": i, "upper": i + 1, "count": c} for i, c in enumerate([1, 4, 2])]
    root = ET.fromstring(histogram_svg(bins))
    assert len(root.findall("{http://www.w3.org/2000/svg}rect")) == 4


def test_empty_inputs():
    with pytest.raises(ValueError):
        scatter_svg([])
    with pytest.raises(ValueError):
        histogram_svg([])
