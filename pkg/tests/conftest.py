import numpy as np
import pytest

from hgp.geometry import GeometrySet, Point, Polygon


def circle_polygon(cx, cy, r, k=256):
    theta = 2 * np.pi * np.arange(k) / k
    return Polygon(np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)]))


def unit_square(x0=0.0, y0=0.0, side=1.0):
    return Polygon(
        [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)]
    )


def star_polygon(rng, n_vertices=None, center=None, radius=1.0):
    """Random simple (star-shaped) polygon: sorted angles, varying radii."""
    k = n_vertices or rng.integers(3, 11)
    angles = np.sort(rng.uniform(0, 2 * np.pi, k))
    while np.min(np.diff(angles, append=angles[0] + 2 * np.pi)) < 1e-3:
        angles = np.sort(rng.uniform(0, 2 * np.pi, k))
    radii = rng.uniform(0.2, 1.0, k) * radius
    cx, cy = center if center is not None else rng.uniform(-3, 3, 2)
    return Polygon(np.column_stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)]))


@pytest.fixture(scope="session")
def tangent_circles():
    """Two filled circles touching at a single boundary point.

    In float64 the touch point lands within the closed-set boundary
    tolerance: the big circle's rightmost vertex is exactly (2, 0) and the
    small circle's leftmost vertex is (3.2 + 1.2 cos pi, 1.2 sin pi),
    i.e. (2.0, ~1.5e-16).
    """
    a = circle_polygon(0.0, 0.0, 2.0)
    b = circle_polygon(3.2, 0.0, 1.2)
    assert any(v[0] == 2.0 and abs(v[1]) < 1e-14 for v in a.exterior)
    assert any(v[0] == 2.0 and abs(v[1]) < 1e-14 for v in b.exterior)
    return a, b


@pytest.fixture(scope="session")
def overlapping_circles():
    return circle_polygon(0.0, 0.0, 2.0), circle_polygon(2.3, 0.0, 1.2)


@pytest.fixture(scope="session")
def circle_with_interior_point():
    return circle_polygon(0.0, 0.0, 2.0), Point(0.55, 0.24)


@pytest.fixture
def random_points_gs():
    rng = np.random.default_rng(1234)
    xy = rng.uniform(0, 50, size=(200, 2))
    return GeometrySet([(f"p{i}", Point(*xy[i])) for i in range(200)])
