import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikelab.geometry import DomainGeometry, GeometryError, ellipse_perimeter

DOMAINS = {
    "disk": DomainGeometry.disk(),
    "ellipse": DomainGeometry.ellipse((0, 0), 2.0, 1.0),
    "rect": DomainGeometry.smoothed_rect((0, 0), 2.0, 1.0, 0.2),
    "spline": DomainGeometry.spline(np.array([[1.0, 0.0], [0.6, 0.7], [-0.4, 0.9], [-1.1, 0.1],
                                              [-0.5, -0.8], [0.5, -0.7]])),
}


def test_disk_distance():
    dom = DOMAINS["disk"]
    pr = dom.dist_to_boundary([0.5, 0.0])
    assert pr.distance == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(pr.nearest.position, [1.0, 0.0], atol=1e-12)
    assert pr.unique


def test_disk_center_is_not_unique():
    pr = DOMAINS["disk"].dist_to_boundary([0.0, 0.0])
    assert pr.distance == pytest.approx(1.0, abs=1e-12)
    assert not pr.unique


def test_ellipse_distance_brute_force():
    dom = DOMAINS["ellipse"]
    y = np.array([0.0, 0.4])
    th = np.linspace(0, 2 * np.pi, 10**6, endpoint=False)
    brute = np.min(np.hypot(2 * np.cos(th) - y[0], np.sin(th) - y[1]))
    assert dom.dist_to_boundary(y).distance == pytest.approx(brute, abs=1e-8)


@pytest.mark.parametrize("y, ystar", [([0.9, 0.0], [1.1, 0.0]), ([0.0, 0.8], [0.0, 1.2])])
def test_disk_reflection(y, ystar):
    assert np.allclose(DOMAINS["disk"].reflect_across_boundary(y), ystar, atol=1e-12)


def test_rect_reflection_near_flat_edge():
    dom = DOMAINS["rect"]
    y = np.array([0.1, 0.45])
    ys = dom.reflect_across_boundary(y)
    assert np.linalg.norm(ys - y) == pytest.approx(0.1, abs=1e-10)
    assert np.linalg.norm(ys - y) == pytest.approx(2 * dom.dist_to_boundary(y).distance, abs=1e-12)


def test_reflection_outside_tube_raises():
    with pytest.raises(GeometryError, match="tubular"):
        DOMAINS["disk"].reflect_across_boundary([0.0, 0.1])


@pytest.mark.parametrize("name", sorted(DOMAINS))
@settings(max_examples=25, deadline=None)
@given(s=st.floats(0.0, 1.0, exclude_max=True), frac=st.floats(0.05, 0.95))
def test_reflection_identity(name, s, frac):
    dom = DOMAINS[name]
    depth = frac * dom.tubular_radius
    y = dom.point(s) - depth * dom.normal(s)
    pr = dom.dist_to_boundary(y)
    ys = dom.reflect_across_boundary(y)
    assert abs(np.linalg.norm(y - ys) - 2 * pr.distance) < 1e-10


@pytest.mark.parametrize("name", sorted(DOMAINS))
def test_winding_number_of_interior_points(name):
    dom = DOMAINS[name]
    s = np.linspace(0, 1, 13, endpoint=False)
    ys = dom.point(s) - 0.5 * dom.tubular_radius * dom.normal(s)
    for y in ys:
        assert dom.winding_number(y) == 1
    assert dom.winding_number(dom.bbox[1] + 1.0) == 0


@pytest.mark.parametrize("name", sorted(DOMAINS))
@settings(max_examples=30, deadline=None)
@given(s=st.floats(0.0, 1.0, exclude_max=True))
def test_frame(name, s):
    dom = DOMAINS[name]
    nu, tau = dom.normal(s), dom.tangent(s)
    assert np.linalg.norm(nu) == pytest.approx(1.0, abs=1e-12)
    assert abs(nu @ tau) < 1e-12
    # outward: nu is the clockwise rotation of the counterclockwise tangent
    assert nu[0] * tau[1] - nu[1] * tau[0] == pytest.approx(1.0, abs=1e-12)
    h = 1e-6
    fd = (dom.normal(s + h) - dom.normal(s - h)) / (2 * h)
    assert np.allclose(dom.normal_derivative(s), fd, atol=1e-5 * max(1.0, np.abs(fd).max()))


def test_disk_curvature_and_normal():
    dom = DomainGeometry.disk((1.0, -2.0), 0.5)
    s = np.linspace(0, 1, 9, endpoint=False)
    assert np.allclose(dom.curvature(s), 2.0)
    assert np.allclose(dom.normal(s), (dom.point(s) - [1.0, -2.0]) / 0.5)


def test_chord_data_matches_direct_formula():
    dom = DOMAINS["ellipse"]
    s0 = 0.3
    s = s0 + np.array([-0.2, -1e-3, 1e-4, 0.05])
    dnu, d2 = dom.chord_data(s, s0)
    diff = dom.point(s) - dom.point(s0)
    assert np.allclose(dnu, np.sum(diff * dom.normal(s), axis=1), rtol=1e-6, atol=1e-14)
    assert np.allclose(d2, np.sum(diff * diff, axis=1), rtol=1e-6)


def test_chord_flux_bounded_near_source():
    # (x - y) . nu / |x - y|^2 -> curvature / 2 on the boundary
    dom = DOMAINS["ellipse"]
    s0 = 0.1
    s = s0 + np.geomspace(1e-9, 1e-2, 30)
    dnu, d2 = dom.chord_data(s, s0)
    ratio = dnu / d2
    assert np.all(np.isfinite(ratio))
    assert np.allclose(ratio[:5], 0.5 * dom.curvature(s0), rtol=1e-3)


def test_ellipse_perimeter():
    dom = DOMAINS["ellipse"]
    assert dom.perimeter() == pytest.approx(ellipse_perimeter(2.0, 1.0), rel=1e-7)
    assert ellipse_perimeter(1.0, 1.0) == pytest.approx(2 * np.pi)


def test_area_and_contains():
    dom = DOMAINS["ellipse"]
    assert dom.area() == pytest.approx(2 * np.pi, rel=1e-7)
    inside = dom.contains(np.array([[0.0, 0.0], [1.9, 0.0], [0.0, 1.1], [2.1, 0.0]]))
    assert inside.tolist() == [True, True, False, False]


def test_translation():
    dom = DOMAINS["disk"].translated([2.0, 0.0])
    assert np.allclose(dom.point(0.0), [3.0, 0.0])
    assert dom.in_positive_quadrant() is False
    assert DomainGeometry.disk((2.0, 2.0)).in_positive_quadrant()


def test_self_intersecting_spline_rejected():
    bow = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    with pytest.raises(GeometryError):
        DomainGeometry.spline(bow)


def test_clockwise_curve_rejected():
    pts = DOMAINS["disk"].point(np.linspace(0, 1, 12, endpoint=False))[::-1]
    with pytest.raises(GeometryError, match="counterclockwise"):
        DomainGeometry.spline(pts)
