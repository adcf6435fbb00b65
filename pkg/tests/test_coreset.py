import numpy as np
import pytest

from eclvad import coreset


def brute_radius(points, centers):
    """Independent covering-radius oracle: plain double loop."""
    worst = 0.0
    for p in points:
        best = min(float(np.linalg.norm(np.asarray(p, float) - np.asarray(c, float)))
                   for c in centers)
        worst = max(worst, best)
    return worst


def test_two_points():
    cs = coreset.farthest_first([[0.0], [10.0]], k=2, seed_index=0)
    assert list(cs.indices) == [0, 1]
    assert np.allclose(cs.radii, [10.0, 0.0])


def test_line_of_ten():
    pts = [[float(i)] for i in range(10)]
    cs = coreset.farthest_first(pts, k=2, seed_index=0)
    assert list(cs.indices) == [0, 9]
    assert np.allclose(cs.radii, [9.0, 4.0])
    # oracle agreement on the final radius
    assert np.isclose(cs.radii[-1], brute_radius(pts, [pts[i] for i in cs.indices]))


def test_full_k_covers_everything():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(17, 3))
    cs = coreset.farthest_first(pts, k=17, seed_index=4)
    assert cs.radii[-1] == 0.0
    assert sorted(cs.indices) == list(range(17))


def test_argument_errors():
    pts = np.zeros((3, 2))
    with pytest.raises(ValueError):
        coreset.farthest_first(pts, k=4, seed_index=0)
    with pytest.raises(ValueError):
        coreset.farthest_first(np.zeros((0, 2)), k=1, seed_index=0)
    with pytest.raises(ValueError):
        coreset.farthest_first(pts, k=1, seed_index=3)


def test_truncate_identity_and_seed():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(30, 4))
    cs = coreset.farthest_first(pts, k=12, seed_index=3)
    assert np.array_equal(coreset.truncate(cs, 12).indices, cs.indices)
    assert list(coreset.truncate(cs, 1).indices) == [3]
    with pytest.raises(ValueError):
        coreset.truncate(cs, 0)
    with pytest.raises(ValueError):
        coreset.truncate(cs, 13)


def test_prefix_equality_random():
    rng = np.random.default_rng(42)
    for _ in range(25):
        n = int(rng.integers(5, 80))
        d = int(rng.integers(1, 8))
        pts = rng.normal(size=(n, d)).astype(np.float32)
        k = int(rng.integers(2, n + 1))
        seed = int(rng.integers(0, n))
        full = coreset.farthest_first(pts, k, seed)
        for k_new in (1, max(1, k // 2), k - 1):
            again = coreset.farthest_first(pts, k_new, seed)
            cut = coreset.truncate(full, k_new)
            assert np.array_equal(cut.indices, again.indices)
            assert np.array_equal(cut.radii, again.radii)


def test_radii_non_increasing():
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(60, 5))
    cs = coreset.farthest_first(pts, k=30, seed_index=0)
    assert np.all(np.diff(cs.radii.astype(np.float64)) <= 1e-12)


def test_tie_break_lowest_index():
    # three copies of the same far point: the lowest-index copy is chosen
    pts = np.array([[0.0], [5.0], [5.0], [5.0]])
    cs = coreset.farthest_first(pts, k=2, seed_index=0)
    assert list(cs.indices) == [0, 1]


def test_bruteforce_examples():
    radius, subset = coreset.kcenter_bruteforce([[0.0], [1.0], [2.0]], k=1)
    assert radius == pytest.approx(1.0)
    assert subset == (1,)
    radius, _ = coreset.kcenter_bruteforce(np.random.default_rng(0).normal(size=(5, 2)), k=5)
    assert radius == 0.0
    with pytest.raises(ValueError):
        coreset.kcenter_bruteforce(np.zeros((15, 2)), k=2)
    with pytest.raises(ValueError):
        coreset.kcenter_bruteforce(np.zeros((10, 2)), k=6)


def test_two_approximation_against_bruteforce():
    rng = np.random.default_rng(123)
    for _ in range(10):
        n = int(rng.integers(6, 11))
        pts = rng.normal(size=(n, 2))
        k = int(rng.integers(1, 4))
        optimum, _ = coreset.kcenter_bruteforce(pts, k)
        greedy = coreset.farthest_first(pts, k, seed_index=0)
        assert greedy.radii[k - 1] <= 2.0 * optimum + 1e-9


def test_radii_match_brute_oracle():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(40, 3))
    cs = coreset.farthest_first(pts, k=8, seed_index=2)
    for j in range(8):
        centers = [pts[i] for i in cs.indices[:j + 1]]
        assert cs.radii[j] == pytest.approx(brute_radius(pts, centers), rel=1e-6)
