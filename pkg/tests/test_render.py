import xml.etree.ElementTree as ET

import pytest

from tolerancekit.integrate import integrate
from tolerancekit.render import Portrait, animation_frames, empty_svg, isocline_paths, render_map, render_svg
from tolerancekit.scan import Cell, Grid, ToleranceMap, summarize

NS = {"s": "http://www.w3.org/2000/svg"}
LEVELS = [-4.0, 0.0, 5.0, 12.0, 25.0, 50.0]


def _tiny_map():
    outcomes = ["Tolerance", "NoTolerance", "Inconclusive", "Tolerance"]
    g = Grid(4, 8, 0, 20, 2, 2)
    cells = [Cell(i, j, x, y, outcome=o, prediction="Guaranteed" if k == 0 else "Possible")
             for k, ((i, j, x, y), o) in enumerate(zip(g.centers(), outcomes))]
    return ToleranceMap("ex2", (4.0, 0.0), g, cells, summarize(cells))


def test_map_has_one_rect_per_cell():
    svg = render_map(_tiny_map())
    root = ET.fromstring(svg)
    cells = root.findall(".//s:rect[@class='cell']", NS)
    assert len(cells) == 4
    assert len({c.get("fill") for c in cells}) == 3
    assert len(root.findall(".//s:g[@class='axes']", NS)) == 1


def test_map_is_deterministic():
    assert render_map(_tiny_map()) == render_map(_tiny_map())


def test_isocline_groups_match_levels(ex2):
    p = Portrait((0.0, 8.0, 0.0, 25.0), ex2, LEVELS)
    svg = render_svg(p)
    groups = ET.fromstring(svg).findall(".//s:g[@class='isocline']", NS)
    assert len(groups) == len(LEVELS)
    assert [float(g.get("data-level")) for g in groups] == LEVELS
    assert svg == render_svg(Portrait((0.0, 8.0, 0.0, 25.0), ex2, LEVELS))


def test_isocline_points_lie_on_level_sets(ex2):
    # level C of ex2 is the curve y = (x^2 - x - C) / (x + C)
    paths = isocline_paths(ex2, (0.5, 8.0, 0.0, 25.0), [0.0, 5.0, 12.0], resolution=300)
    for C, lines in zip([0.0, 5.0, 12.0], paths):
        assert lines
        for ln in lines:
            for x, y in ln[:: max(1, len(ln) // 20)]:
                y_exact = (x * x - x - C) / (x + C)
                assert y == pytest.approx(y_exact, abs=0.05)


def test_portrait_with_trajectory_and_regions(ex2):
    from tolerancekit.geometry import build_region_T, classify_excitable

    t = integrate(ex2, (4, 0))
    T = build_region_T(classify_excitable(ex2, (4, 0)))
    p = Portrait((0.0, 8.0, 0.0, 25.0), ex2, [0.0], [("phi", list(t.x), list(t.y))], [T], [("r0", (4, 0))], "ex2")
    root = ET.fromstring(render_svg(p))
    assert len(root.findall(".//s:g[@class='trajectory']", NS)) == 1
    assert len(root.findall(".//s:polygon[@class='region']", NS)) == 1
    assert len(root.findall(".//s:circle[@class='marker']", NS)) == 1


def test_empty_inputs_give_diagnostic_svg():
    for svg in (render_svg(None), render_svg(Portrait((0, 1, 0, 1))), empty_svg("x < y & z")):
        root = ET.fromstring(svg)
        assert root.find("s:text[@class='diagnostic']", NS) is not None
    empty = ToleranceMap("ex2", (4.0, 0.0), Grid(0, 1, 0, 1, 2, 2), [], {})
    assert "diagnostic" in render_map(empty)


def test_animation_frames_reveal_progressively(ex2):
    t = integrate(ex2, (4, 0))
    p = Portrait((0.0, 8.0, 0.0, 25.0), ex2, (), [("phi", list(t.x), list(t.y))])
    frames = animation_frames(p, 3)
    assert len(frames) == 3
    sizes = [len(f) for f in frames]
    assert sizes[0] < sizes[1] < sizes[2]
    for f in frames:
        ET.fromstring(f)
    with pytest.raises(ValueError):
        animation_frames(p, 0)


def test_render_rejects_unknown_data():
    with pytest.raises(TypeError):
        render_svg(42)
