import numpy as np
import pytest

from edge_market.utils.projection import project_capped_simplex, project_simplex


@pytest.fixture
def points():
    """Random 5 x 4 matrix with mixed signs"""
    return np.random.default_rng(3).normal(size=(5, 4))


def test_project_simplex_columns(points):
    """Every column lands on the simplex of the given radius"""
    projected = project_simplex(points, 2.0, axis=0)

    assert (projected >= 0).all()
    assert projected.sum(axis=0) == pytest.approx(np.full(4, 2.0))


def test_project_simplex_rows_with_radii(points):
    """Rows can use one radius each"""
    radii = np.array([1.0, 2.0, 3.0, 4.0, 5.0])

    projected = project_simplex(points, radii, axis=1)

    assert projected.sum(axis=1) == pytest.approx(radii)


def test_project_simplex_keeps_points_on_simplex():
    """Points already on the simplex are not moved"""
    inside = np.array([[0.2, 0.5], [0.8, 0.5]])

    assert project_simplex(inside, 1.0, axis=0) == pytest.approx(inside)


def test_project_simplex_is_closest_point():
    """The projection of (1, 0) and (0.5, 0.5) columns follow the closed form"""
    values = np.array([[2.0, 0.7], [0.0, 0.1]])

    projected = project_simplex(values, 1.0, axis=0)

    assert projected[:, 0] == pytest.approx([1.0, 0.0])
    assert projected[:, 1] == pytest.approx([0.8, 0.2])


def test_project_capped_simplex():
    """Columns under the cap are only clipped, columns over it are projected"""
    values = np.array([[0.2, 2.0], [-0.5, 1.0]])

    projected = project_capped_simplex(values, 1.0, axis=0)

    assert projected[:, 0] == pytest.approx([0.2, 0.0])
    assert projected[:, 1] == pytest.approx([1.0, 0.0])
    assert (projected.sum(axis=0) <= 1.0 + 1e-12).all()


def test_project_simplex_huge_entries():
    """Columns far above the radius still sum to it"""
    values = np.array([[3e16, 1e16], [2e16, 5.0]])

    projected = project_simplex(values, 1.0, axis=0)

    assert (projected >= 0).all()
    assert (projected.sum(axis=0) <= 1.0 + 1e-12).all()
    assert projected.sum(axis=0) == pytest.approx([1.0, 1.0], abs=1e-12)
    assert projected[:, 1] == pytest.approx([1.0, 0.0])


def test_project_capped_simplex_large_step():
    """A long gradient step keeps capped columns within the cap"""
    caps = np.array([0.2, 0.5, 0.9])
    values = np.array([[0.2, 0.5, 0.9]]) + 1e12 * np.array([[1.0, 0.4, 0.22]])

    projected = project_capped_simplex(values, caps, axis=0)

    assert (projected.sum(axis=0) <= caps * (1 + 1e-12)).all()
    assert projected[0] == pytest.approx(caps)
