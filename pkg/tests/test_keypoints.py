import numpy as np
import pytest

from clickview import keypoints as K


def test_chebyshev_zero_at_keypoint():
    m = K.chebyshev_map(3, 4, 9)
    assert m[4, 3] == 0.0


def test_chebyshev_corner_extreme():
    m = K.chebyshev_map(0, 0, 5)
    assert m[4, 4] == 1.0


def test_chebyshev_center_corners_half():
    m = K.chebyshev_map(2, 2, 5)
    for r, c in ((0, 0), (0, 4), (4, 0), (4, 4)):
        assert m[r, c] == 0.5


def test_chebyshev_direct_formula():
    s, x, y = 7, 2, 5
    m = K.chebyshev_map(x, y, s)
    for row in range(s):
        for col in range(s):
            assert m[row, col] == max(abs(col - x), abs(row - y)) / (s - 1)


def test_euclidean_extreme_and_zero():
    m = K.euclidean_map(0, 0, 5)
    assert m[0, 0] == 0.0
    assert abs(m[4, 4] - 1.0) < 1e-15


def test_manhattan_half_at_axis_end():
    m = K.manhattan_map(0, 0, 5)
    # (x=4, y=0): |4-0| + |0-0| = 4, normalizer 2*(s-1) = 8
    assert m[0, 4] == 0.5
    assert m[0, 0] == 0.0


def test_gaussian_peak_is_one_and_sigma_value():
    s = 50
    sigma = round(0.1 * s)
    m = K.gaussian_map(20, 20, s)
    assert m[20, 20] == 1.0
    assert abs(m[20, 20 + sigma] - np.exp(-0.5)) < 1e-12
    assert abs(m[20 + sigma, 20] - np.exp(-0.5)) < 1e-12


def test_gaussian_monotone_along_axis_rays():
    s = 33
    m = K.gaussian_map(16, 10, s)
    for ray in (m[10, 16:], m[10, 16::-1], m[10:, 16], m[10::-1, 16]):
        assert np.all(np.diff(ray) <= 1e-15)


@pytest.mark.parametrize("kind", K.MAP_KINDS)
@pytest.mark.parametrize("x,y,s", [(0, 0, 8), (7, 3, 8), (3, 3, 7), (4, 6, 13)])
def test_map_range_and_anchor(kind, x, y, s):
    m = K.keypoint_map(kind, x, y, s)
    assert m.shape == (s, s)
    assert np.all(m >= 0.0) and np.all(m <= 1.0)
    if kind == "gaussian":
        assert m[y, x] == 1.0 and m.max() == 1.0
    else:
        assert m[y, x] == 0.0 and m.min() == 0.0


@pytest.mark.parametrize("kind", ["chebyshev", "euclidean", "manhattan"])
def test_distance_map_mirror_symmetry(kind):
    s = 11
    for x, y in ((2, 5), (0, 3), (9, 9)):
        m = K.keypoint_map(kind, x, y, s)
        mirrored = K.keypoint_map(kind, s - 1 - x, y, s)
        np.testing.assert_allclose(m[:, ::-1], mirrored, atol=1e-15)


def test_unnormalized_ordering_manhattan_ge_euclidean_ge_chebyshev():
    s, x, y = 9, 2, 6
    cheb = K.chebyshev_map(x, y, s) * (s - 1)
    eucl = K.euclidean_map(x, y, s) * (np.sqrt(2) * (s - 1))
    manh = K.manhattan_map(x, y, s) * (2 * (s - 1))
    assert np.all(manh >= eucl - 1e-12)
    assert np.all(eucl >= cheb - 1e-12)


def test_map_rejects_outside_keypoint():
    with pytest.raises(ValueError):
        K.chebyshev_map(8, 0, 8)
    with pytest.raises(ValueError):
        K.gaussian_map(0, -1, 8)


def test_one_hot():
    np.testing.assert_array_equal(K.one_hot_class(0, 4), [1, 0, 0, 0])
    np.testing.assert_array_equal(K.one_hot_class(3, 4), [0, 0, 0, 1])
    for c in range(4):
        assert K.one_hot_class(c, 4).sum() == 1.0
    with pytest.raises(ValueError):
        K.one_hot_class(4, 4)


def test_perturb_zero_sigma_identity():
    rng = np.random.default_rng(0)
    assert K.perturb_keypoint(5, 9, 0.0, rng, 16) == (5, 9)


def test_perturb_sample_mean_matches_keypoint():
    rng = np.random.default_rng(1)
    s, x, y, sigma = 101, 50, 50, 5.0
    pts = np.array([K.perturb_keypoint(x, y, sigma, rng, s) for _ in range(100_000)])
    assert abs(pts[:, 0].mean() - x) < 0.05 * sigma
    assert abs(pts[:, 1].mean() - y) < 0.05 * sigma


def test_perturb_always_inside_bounds():
    rng = np.random.default_rng(2)
    s = 10
    for sigma in (1.0, 5.0, 50.0):
        for _ in range(500):
            nx, ny = K.perturb_keypoint(1, 8, sigma, rng, s)
            assert 0 <= nx < s and 0 <= ny < s


def test_perturb_rejects_negative_sigma():
    with pytest.raises(ValueError):
        K.perturb_keypoint(0, 0, -1.0, np.random.default_rng(0), 8)
