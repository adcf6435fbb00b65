import numpy as np
import pytest

from eclvad import padim, padim_cl
from eclvad.patchcore import PatchGrid


def grid_of(descriptors, h=1, w=None):
    descriptors = np.asarray(descriptors, dtype=np.float32)
    p, d = descriptors.shape
    if w is None:
        w = p // h
    return PatchGrid(h, w, d, descriptors, "g")


def task_grids(rng, n, p=4, d=3, shift=0.0):
    return [grid_of(rng.normal(size=(p, d)) + shift) for _ in range(n)]


def joint_population_oracle(all_grids, mode, epsilon=0.01):
    """Pool every raw sample and compute divide-by-N statistics plus ridge."""
    samples = np.stack([g.descriptors.astype(np.float64) for g in all_grids])
    n, p, d = samples.shape
    mean = samples.mean(axis=0)
    centered = samples - mean
    if mode == padim.MODE_FULL:
        cov = np.einsum("npi,npj->pij", centered, centered) / n
        return mean, cov + epsilon * np.eye(d)
    return mean, np.square(centered).sum(axis=0) / n + epsilon


def sequential_fuse(tasks, mode):
    state = None
    for grids in tasks:
        fld = padim.fit(grids, mode=mode)
        if state is None:
            state = padim_cl.start_exact(fld)
        else:
            state = padim_cl.fuse_exact(state, fld)
    return state


@pytest.mark.parametrize("mode", [padim.MODE_FULL, padim.MODE_DIAG])
def test_fuse_exact_matches_joint_oracle(mode):
    rng = np.random.default_rng(0)
    tasks = [task_grids(rng, n, shift=s) for n, s in [(3, 0.0), (7, 2.0), (4, -1.0)]]
    state = sequential_fuse(tasks, mode)
    mean, second = joint_population_oracle([g for t in tasks for g in t], mode)
    assert np.allclose(state.field.mean, mean, atol=1e-12)
    if mode == padim.MODE_FULL:
        assert np.allclose(state.field.cov, second, rtol=1e-9, atol=1e-12)
    else:
        assert np.allclose(state.field.var, second, rtol=1e-9, atol=1e-12)
    assert state.cumulative_n == 14


def test_fuse_exact_hand_example_d1():
    # task A = {0, 2}, task B = {10, 12}: joint mean 6, population var 26
    a = [grid_of([[0.0]]), grid_of([[2.0]])]
    b = [grid_of([[10.0]]), grid_of([[12.0]])]
    state = sequential_fuse([a, b], padim.MODE_FULL)
    assert state.field.mean[0, 0] == pytest.approx(6.0)
    assert state.field.cov[0, 0, 0] == pytest.approx(26.01, abs=1e-9)
    mean, cov = joint_population_oracle(a + b, padim.MODE_FULL)
    assert state.field.cov[0, 0, 0] == pytest.approx(cov[0, 0, 0], abs=1e-12)


def test_fuse_self_is_fixed_point():
    rng = np.random.default_rng(1)
    grids = task_grids(rng, 5)
    fld = padim.fit(grids, mode=padim.MODE_FULL)
    state = padim_cl.start_exact(fld)
    fused = padim_cl.fuse_exact(state, fld)
    assert np.allclose(fused.field.mean, state.field.mean, atol=1e-12)
    assert np.allclose(fused.field.cov, state.field.cov, atol=1e-12)
    assert fused.cumulative_n == 10


@pytest.mark.parametrize("mode", [padim.MODE_FULL, padim.MODE_DIAG])
def test_fuse_exact_order_independent(mode):
    rng = np.random.default_rng(2)
    tasks = [task_grids(rng, n, shift=s) for n, s in [(4, 0.0), (6, 3.0), (3, -2.0)]]
    import itertools
    results = []
    for perm in itertools.permutations(range(3)):
        state = sequential_fuse([tasks[i] for i in perm], mode)
        second = state.field.cov if mode == padim.MODE_FULL else state.field.var
        results.append((state.field.mean.copy(), second.copy()))
    ref_mean, ref_second = results[0]
    for mean, second in results[1:]:
        assert np.allclose(mean, ref_mean, rtol=1e-9, atol=1e-12)
        assert np.allclose(second, ref_second, rtol=1e-9, atol=1e-12)


def test_fuse_exact_rejects_small_or_mismatched():
    rng = np.random.default_rng(3)
    fld = padim.fit(task_grids(rng, 3), mode=padim.MODE_FULL)
    state = padim_cl.start_exact(fld)
    with pytest.raises(ValueError):
        padim_cl.fuse_exact(state, fld, n_new=1)
    other = padim.fit(task_grids(rng, 3, p=5), mode=padim.MODE_FULL)
    with pytest.raises(ValueError):
        padim_cl.fuse_exact(state, other)
    lite = padim.fit(task_grids(rng, 3), mode=padim.MODE_DIAG)
    with pytest.raises(ValueError):
        padim_cl.fuse_exact(state, lite)


def test_legacy_identical_fields_fixed_point():
    rng = np.random.default_rng(4)
    fld = padim.fit(task_grids(rng, 4), mode=padim.MODE_FULL)
    state = padim_cl.start_legacy(fld)
    fused = padim_cl.fuse_legacy(state, fld, T=2)
    assert np.allclose(fused.field.mean, fld.mean, atol=1e-12)
    assert np.allclose(fused.field.cov, fld.cov, rtol=1e-9)


def test_legacy_bias_on_unequal_sample_counts():
    # 100 samples with exact mean 0 vs a single sample at 10 (d = 1)
    rng = np.random.default_rng(5)
    half = rng.normal(size=50)
    samples_a = np.concatenate([half, -half])  # mean exactly 0
    grids_a = [grid_of([[float(x)]]) for x in samples_a]
    field_a = padim.fit(grids_a, mode=padim.MODE_FULL)
    assert field_a.mean[0, 0] == pytest.approx(0.0, abs=1e-12)
    # the single-sample task is built directly; fitting needs N >= 2
    field_b = padim.GaussianField((1, 1), 1, padim.MODE_FULL,
                                  np.array([[10.0]]), cov=np.array([[[0.01]]]),
                                  n_samples=1)
    fused = padim_cl.fuse_legacy(padim_cl.start_legacy(field_a, 100), field_b, T=2)
    assert fused.field.mean[0, 0] == pytest.approx(5.0, abs=1e-6)
    joint_mean = (samples_a.sum() + 10.0) / 101.0
    assert joint_mean == pytest.approx(10.0 / 101.0, abs=1e-12)
    assert abs(fused.field.mean[0, 0] - joint_mean) > 4.0


def test_legacy_precision_average():
    mean = np.zeros((1, 1))
    f1 = padim.GaussianField((1, 1), 1, padim.MODE_FULL, mean,
                             cov=np.array([[[1.0]]]), n_samples=2)
    f3 = padim.GaussianField((1, 1), 1, padim.MODE_FULL, mean,
                             cov=np.array([[[1.0 / 3.0]]]), n_samples=2)
    fused = padim_cl.fuse_legacy(padim_cl.start_legacy(f1), f3, T=2)
    # precisions 1 and 3 average to 2
    assert 1.0 / fused.field.cov[0, 0, 0] == pytest.approx(2.0, rel=1e-12)
    lite1 = padim.GaussianField((1, 1), 1, padim.MODE_DIAG, mean,
                                var=np.array([[1.0]]), n_samples=2)
    lite3 = padim.GaussianField((1, 1), 1, padim.MODE_DIAG, mean,
                                var=np.array([[1.0 / 3.0]]), n_samples=2)
    fused = padim_cl.fuse_legacy(padim_cl.start_legacy(lite1), lite3, T=2)
    assert 1.0 / fused.field.var[0, 0] == pytest.approx(2.0, rel=1e-12)


def test_multimodal_single_field_equals_plain_score():
    rng = np.random.default_rng(6)
    grids = task_grids(rng, 4)
    fld = padim.fit(grids, mode=padim.MODE_FULL)
    probe = grid_of(rng.normal(size=(4, 3)))
    scores, winner = padim_cl.score_multimodal(probe, [fld])
    assert np.allclose(scores, padim.score(probe, fld), atol=1e-7)
    assert (winner == 0).all()


def test_multimodal_picks_generating_task():
    rng = np.random.default_rng(7)
    tasks = [task_grids(rng, 6, shift=0.0), task_grids(rng, 6, shift=30.0)]
    fields = [padim.fit(t, mode=padim.MODE_DIAG) for t in tasks]
    probe = grid_of(rng.normal(size=(4, 3)) + 30.0)
    scores, winner = padim_cl.score_multimodal(probe, fields)
    assert (winner == 1).all()


def test_multimodal_superset_never_increases():
    rng = np.random.default_rng(8)
    fields = [padim.fit(task_grids(rng, 4, shift=s), mode=padim.MODE_DIAG)
              for s in (0.0, 5.0, -5.0)]
    probe = grid_of(rng.normal(size=(4, 3)))
    two, _ = padim_cl.score_multimodal(probe, fields[:2])
    three, _ = padim_cl.score_multimodal(probe, fields)
    assert np.all(three <= two + 1e-9)
    with pytest.raises(ValueError):
        padim_cl.score_multimodal(probe, [])


def test_multimodal_tie_goes_to_lowest_task():
    rng = np.random.default_rng(9)
    fld = padim.fit(task_grids(rng, 4), mode=padim.MODE_DIAG)
    probe = grid_of(rng.normal(size=(4, 3)))
    _, winner = padim_cl.score_multimodal(probe, [fld, fld])
    assert (winner == 0).all()


def test_memory_report_formulas():
    # the crossover case: 15 tasks, d = 120
    multi_lite = padim_cl.memory_report(15, 120, 1, 1, padim.MODE_DIAG, "multi")
    uni_full = padim_cl.memory_report(15, 120, 1, 1, padim.MODE_FULL, "uni")
    assert multi_lite == 15 * 8 * 120 == 14_400
    assert uni_full == 4 * 120 + 4 * 120 * 120 == 58_080
    assert multi_lite < uni_full
    # T = 1 collapses multi to uni
    for mode in (padim.MODE_FULL, padim.MODE_DIAG):
        assert (padim_cl.memory_report(1, 7, 3, 4, mode, "multi")
                == padim_cl.memory_report(1, 7, 3, 4, mode, "uni"))
    # doubling d quadruples the uni-full dominant term
    small = padim_cl.memory_report(1, 100, 1, 1, padim.MODE_FULL, "uni")
    big = padim_cl.memory_report(1, 200, 1, 1, padim.MODE_FULL, "uni")
    assert big - 4 * 200 == 4 * (small - 4 * 100)
    # diag vs full ratio per position
    d = 32
    assert (padim_cl.memory_report(1, d, 1, 1, padim.MODE_FULL, "uni")
            / padim_cl.memory_report(1, d, 1, 1, padim.MODE_DIAG, "uni")
            == (4 * d + 4 * d * d) / (8 * d))


def test_field_list_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    fields = padim_cl.FieldList(
        [padim.fit(task_grids(rng, 3, shift=s), mode=padim.MODE_DIAG) for s in (0, 1)],
        ["a", "b"],
    )
    padim_cl.save_field_list(fields, tmp_path / "fl")
    back = padim_cl.load_field_list(tmp_path / "fl")
    assert back.task_names == ["a", "b"]
    assert len(back) == 2
    assert np.allclose(back.fields[1].mean, fields.fields[1].mean, atol=1e-6)
