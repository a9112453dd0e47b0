import numpy as np

from lcgames.geometry import (
    angle_between,
    circular_mean,
    cumulative_arclength,
    project_onto_polyline,
    wrap_angle,
)


def test_cumulative_arclength_straight():
    pts = np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]])
    assert np.allclose(cumulative_arclength(pts), [0.0, 3.0, 7.0])


def test_projection_onto_segment_interior():
    pts = np.array([[0.0, 0.0], [10.0, 0.0]])
    dist, arc, tangent = project_onto_polyline(pts, np.array([[4.0, 2.0]]))
    assert np.isclose(dist[0], 2.0)
    assert np.isclose(arc[0], 4.0)
    assert np.allclose(tangent[0], [1.0, 0.0])


def test_projection_clamps_to_endpoints():
    pts = np.array([[0.0, 0.0], [10.0, 0.0]])
    dist, arc, _ = project_onto_polyline(pts, np.array([[-3.0, 4.0], [13.0, 4.0]]))
    assert np.allclose(dist, [5.0, 5.0])
    assert np.allclose(arc, [0.0, 10.0])


def test_projection_matches_bruteforce_dense_sampling():
    rng = np.random.default_rng(3)
    pts = np.cumsum(rng.normal(size=(15, 2)), axis=0)
    samples = rng.normal(scale=3.0, size=(40, 2)) + pts.mean(axis=0)
    dist, _, _ = project_onto_polyline(pts, samples)
    # brute force: dense points along every segment
    dense = []
    for a, b in zip(pts[:-1], pts[1:]):
        ts = np.linspace(0.0, 1.0, 2001)[:, None]
        dense.append(a + ts * (b - a))
    dense = np.vstack(dense)
    for i, s in enumerate(samples):
        brute = np.min(np.hypot(*(dense - s).T))
        # exact projection can only beat the discretized search
        assert dist[i] <= brute + 1e-12
        assert brute - dist[i] < 1e-4


def test_wrap_angle_range():
    assert np.isclose(wrap_angle(np.pi + 0.1), -np.pi + 0.1)
    assert np.isclose(wrap_angle(-np.pi - 0.1), np.pi - 0.1)
    assert wrap_angle(0.3) == 0.3


def test_circular_mean_handles_wrap():
    angles = np.array([np.pi - 0.05, -np.pi + 0.05])
    assert abs(abs(circular_mean(angles)) - np.pi) < 1e-9


def test_angle_between_basics():
    assert np.isclose(angle_between(np.array([1.0, 0.0]), np.array([1.0, 1.0])),
                      np.pi / 4)
    assert angle_between(np.array([1.0, 0.0]), np.array([2.0, 0.0])) == 0.0
