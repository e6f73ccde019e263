import re

import numpy as np
import pytest

from wsbart.boxplot import box_stats, render_svg


def test_quartiles_linear():
    s = box_stats([1, 2, 3, 4])
    assert (s.q1, s.median, s.q3) == (1.75, 2.5, 3.25)


def test_outliers_and_whiskers():
    s = box_stats([1, 2, 3, 4, 5, 100])
    assert s.outliers == (100.0,)
    assert s.whisker_high == 5.0 and s.whisker_low == 1.0


def test_empty():
    with pytest.raises(ValueError):
        box_stats([np.nan])


def test_svg_embeds_stats():
    svg = render_svg({"A": [1.0, 2.0, 3.0], "B": [2.0, 2.5, 9.0, 2.2, 2.1]}, title="t")
    assert svg.count("<rect") == 3
    m = re.search(r"group=B n=5 q1=(\S+) median=(\S+) q3=(\S+)", svg)
    np.testing.assert_allclose([float(v) for v in m.groups()], np.quantile([2.0, 2.5, 9.0, 2.2, 2.1], [0.25, 0.5, 0.75]))
    assert "<circle" in svg


def test_single_value_group():
    svg = render_svg({"A": [1.0]})
    assert svg.rstrip().endswith("</svg>")
