from corridor_rl.plots import box_plot, line_plot, paired_bars


def test_empty_metrics_yield_empty_axes():
    svg = line_plot("t", [], [], "x", "y")
    assert svg.startswith("<svg")
    assert "<rect" in svg  # the axis frame
    assert "polyline" not in svg


def test_identical_input_byte_identical():
    xs, ys = [0.0, 1.0, 2.0], [3.0, 1.0, 2.0]
    assert line_plot("t", xs, ys) == line_plot("t", xs, ys)
    groups = {"m1": [1.0, 2.0, 3.0], "m2": [2.0, 4.0]}
    assert box_plot("b", groups) == box_plot("b", groups)


def test_box_plot_mean_is_red_square():
    svg = box_plot("b", {"m": [1.0, 2.0, 3.0, 10.0]})
    assert 'fill="red"' in svg
    assert 'width="8" height="8"' in svg


def test_paired_bars_two_series_legend():
    svg = paired_bars("p", {"EB_TH": (10.0, 8.0)}, ("off", "on"))
    assert "off" in svg and "on" in svg
    assert svg.count('fill="steelblue"') >= 2  # bar + legend swatch
