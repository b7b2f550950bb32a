import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from aiocollapse.core import BranchDistribution, CollapseMode, EnergySpectrum
from aiocollapse.ensemble import (EnsembleStats, RunConfig, TestReport,
                                  born_statistics_test, branch_pairs,
                                  decay_fit_test, estimate_half_decay,
                                  fixed_k_half_decay, half_decay_ratio,
                                  martingale_test, plan_chunks, run_chunk,
                                  run_ensemble, run_trajectory,
                                  scale_invariance_test, trajectory_rng,
                                  zscores)
from aiocollapse.error import (BudgetError, DimensionError, DomainError,
                               NotCollapsedError)


def _config(initial=(0.5, 0.5), k=0.1, steps=50, trajectories=200, **kw):
    return RunConfig(initial=BranchDistribution(list(initial)),
                     spectrum=kw.pop('spectrum', None),
                     mode=kw.pop('mode', CollapseMode.fixed(k)),
                     steps=steps, trajectories=trajectories, **kw)


def _exact_stats(initial, k, steps, count=1000, rel_se=1e-3):
    """Statistics whose cross moments follow (1 − k²)ⁿ exactly."""
    p0 = np.asarray(initial, dtype=float)
    pairs = branch_pairs(p0.size)
    cross0 = np.array([p0[i] * p0[j] for i, j in pairs])
    n = np.arange(steps + 1)
    x = (1.0 - k * k) ** n[:, None] * cross0
    sum_x = count * (x - cross0)
    sum_x2 = sum_x ** 2 / count + (count - 1) * (rel_se * x) ** 2 * count
    zeros = np.zeros((n.size, p0.size))
    return EnsembleStats(steps=n, initial=p0, count=count, sum_p=zeros,
                         sum_p2=zeros.copy(), sum_x=sum_x, sum_x2=sum_x2,
                         absorbed=np.zeros(p0.size, dtype=int))


def test_trajectory_rng_is_keyed():
    a = trajectory_rng(7, 3).random(5)
    assert np.array_equal(a, trajectory_rng(7, 3).random(5))
    assert not np.array_equal(a, trajectory_rng(7, 4).random(5))
    assert not np.array_equal(a, trajectory_rng(8, 3).random(5))


def test_run_trajectory_reproducible():
    config = _config(steps=100)
    one = run_trajectory(config, 5)
    two = run_trajectory(config, 5)
    assert np.array_equal(one.snapshots, two.snapshots)
    assert one.steps.tolist() == list(range(101))
    assert not np.array_equal(one.snapshots,
                              run_trajectory(config, 6).snapshots)


def test_run_trajectory_stays_on_simplex():
    config = _config(initial=(0.2, 0.3, 0.5), k=0.3, steps=300)
    traj = run_trajectory(config, 0)
    assert traj.snapshots.min() >= 0.0
    np.testing.assert_allclose(traj.snapshots.sum(axis=1), 1.0, atol=1e-12)
    assert traj.distribution(0).probs.tolist() == [0.2, 0.3, 0.5]


def test_full_strength_absorbs_in_one_step():
    traj = run_trajectory(_config(k=1.0, steps=5), 0)
    assert traj.absorption_step == 1
    assert traj.absorbed_branch in (0, 1)
    assert traj.snapshots[-1].tolist() == traj.snapshots[1].tolist()


def test_zero_strength_never_moves():
    traj = run_trajectory(_config(k=0.0, steps=20), 0)
    assert traj.absorbed_branch is None
    assert np.all(traj.snapshots == 0.5)


def test_record_stride():
    config = _config(steps=10, record_stride=3)
    assert config.recorded_steps().tolist() == [0, 3, 6, 9]
    assert run_trajectory(config, 0).snapshots.shape == (4, 2)


def test_run_config_validation():
    with pytest.raises(DomainError):
        _config(steps=0)
    with pytest.raises(DomainError):
        _config(trajectories=0)
    with pytest.raises(DomainError):
        _config(mode=CollapseMode.model())
    with pytest.raises(DimensionError):
        _config(mode=CollapseMode.model(),
                spectrum=EnergySpectrum([0.0, 0.1, 0.2]))
    with pytest.raises(DomainError):
        _config(groups=((0,), (0, 1)))
    with pytest.raises(DomainError):
        _config(base_seed=-1)
    with pytest.raises(DomainError):
        _config(absorption_threshold=1.0)


def test_budget():
    config = _config(steps=10, trajectories=10, budget=50)
    with pytest.raises(BudgetError):
        run_ensemble(config)
    with pytest.raises(BudgetError):
        run_trajectory(_config(steps=60, budget=50), 0)


def test_plan_chunks():
    config = _config(trajectories=2500, chunk_size=1000)
    assert plan_chunks(config) == [(0, 1000), (1000, 2000), (2000, 2500)]


def test_results_do_not_depend_on_worker_count():
    config = _config(initial=(0.2, 0.3, 0.5), steps=40, trajectories=1000,
                     chunk_size=128, base_seed=99)
    serial = run_ensemble(config)
    for workers in (2, 4, 8):
        with ThreadPoolExecutor(max_workers=workers) as executor:
            threaded = run_ensemble(config, executor)
        for name in ('sum_p', 'sum_p2', 'sum_x', 'sum_x2', 'absorbed'):
            assert np.array_equal(getattr(serial, name),
                                  getattr(threaded, name))


def test_chunking_only_changes_summation_order():
    small = run_ensemble(_config(trajectories=300, chunk_size=7))
    large = run_ensemble(_config(trajectories=300, chunk_size=300))
    np.testing.assert_allclose(small.mean_p, large.mean_p, rtol=0,
                               atol=1e-12)
    np.testing.assert_allclose(small.mean_x, large.mean_x, rtol=0,
                               atol=1e-12)
    assert small.absorbed.tolist() == large.absorbed.tolist()


def test_single_trajectory_ensemble_matches_trajectory():
    config = _config(steps=30, trajectories=1)
    stats = run_ensemble(config)
    traj = run_trajectory(config, 0)
    np.testing.assert_allclose(stats.mean_p, traj.snapshots, atol=1e-15)
    assert np.all(np.isnan(stats.se_p))


def test_chunk_sums_match_trajectories():
    config = _config(initial=(0.2, 0.3, 0.5), k=0.5, steps=400,
                     trajectories=40, record_stride=3,
                     groups=((0, 1), (2,)))
    part = run_chunk(config, (0, 40))
    trajs = [run_trajectory(config, i) for i in range(40)]
    records = np.stack([t.snapshots for t in trajs], axis=1)
    assert all(t.absorbed_branch is not None for t in trajs)

    dp = records - part.initial
    dx = np.stack([records[..., i] * records[..., j]
                   for i, j in branch_pairs(3)], axis=-1) - \
        part.initial_cross
    np.testing.assert_allclose(part.sum_p, dp.sum(axis=1), atol=1e-12)
    np.testing.assert_allclose(part.sum_p2, (dp * dp).sum(axis=1),
                               atol=1e-12)
    np.testing.assert_allclose(part.sum_x, dx.sum(axis=1), atol=1e-12)
    np.testing.assert_allclose(part.sum_x2, (dx * dx).sum(axis=1),
                               atol=1e-12)
    branches = [t.absorbed_branch for t in trajs]
    assert part.absorbed.tolist() == [branches.count(n) for n in range(3)]
    assert part.grouped.absorbed.tolist() == [
        branches.count(0) + branches.count(1), branches.count(2)]
    grouped = np.stack([records[..., :2].sum(axis=-1), records[..., 2]],
                       axis=-1)
    np.testing.assert_allclose(part.grouped.mean_p,
                               grouped.mean(axis=1), atol=1e-12)


def test_initial_step_has_zero_error():
    stats = run_ensemble(_config(trajectories=50))
    assert np.all(stats.se_p[0] == 0.0)
    assert np.all(stats.mean_p[0] == stats.initial)


def test_merge_rejects_mismatched_parts():
    a = run_chunk(_config(steps=5), (0, 10))
    b = run_chunk(_config(steps=6), (10, 20))
    with pytest.raises(DimensionError):
        EnsembleStats.merge([a, b])
    with pytest.raises(DimensionError):
        EnsembleStats.merge([])


def test_cross_pair_lookup():
    stats = run_ensemble(_config(initial=(0.2, 0.3, 0.5), trajectories=20))
    mean, _ = stats.cross(2, 0)
    assert mean[0] == pytest.approx(0.1)
    with pytest.raises(DomainError):
        stats.cross(1, 1)
    with pytest.raises(DimensionError):
        stats.cross(0, 3)


def test_zscores():
    z = zscores(np.array([0.0, 1e-13, 0.1, 0.2]),
                np.array([0.0, 0.0, 0.0, 0.1]))
    assert z.tolist() == [0.0, 0.0, math.inf, pytest.approx(2.0)]


def test_fixed_k_half_decay():
    assert fixed_k_half_decay(0.0) == math.inf
    assert fixed_k_half_decay(1.0) == 1.0
    assert fixed_k_half_decay(0.1) == pytest.approx(68.97, abs=0.01)


def test_half_decay_on_exact_moments():
    stats = _exact_stats([0.5, 0.5], 0.1, 200)
    assert estimate_half_decay(stats, 0, 1) == pytest.approx(
        fixed_k_half_decay(0.1), rel=1e-9)
    assert half_decay_ratio(stats, 1, 0, 0.1) == pytest.approx(1.0,
                                                               rel=1e-9)


def test_half_decay_not_reached():
    with pytest.raises(NotCollapsedError):
        estimate_half_decay(_exact_stats([0.5, 0.5], 0.1, 20), 0, 1)


def test_decay_fit_on_exact_moments():
    stats = _exact_stats([0.3, 0.7], 0.2, 100)
    good = decay_fit_test(stats, 0, 1, 0.2)
    assert good.passed
    assert good.details['fitted_rate'] == pytest.approx(math.log(0.96))
    assert not decay_fit_test(stats, 0, 1, 0.25).passed


def test_decay_fit_insufficient():
    stats = _exact_stats([0.3, 0.7], 0.2, 100, count=1)
    report = decay_fit_test(stats, 0, 1, 0.2)
    assert report.insufficient and not report.passed


def test_martingale_fixed_k():
    stats = run_ensemble(_config(initial=(0.2, 0.3, 0.5), k=0.1, steps=100,
                                 trajectories=2000))
    report = martingale_test(stats)
    assert report.passed, report.details
    assert report.max_abs_z < 5.0


def test_martingale_model_k():
    spectrum = EnergySpectrum([0.0, 0.02, 0.04])
    stats = run_ensemble(_config(initial=(0.3, 0.3, 0.4), steps=100,
                                 trajectories=2000, spectrum=spectrum,
                                 mode=CollapseMode.model()))
    assert martingale_test(stats).passed


def test_martingale_single_trajectory_is_insufficient():
    report = martingale_test(run_ensemble(_config(trajectories=1)))
    assert report.insufficient and not report.passed


def test_born_statistics():
    stats = run_ensemble(_config(initial=(0.3, 0.7), k=1.0, steps=2,
                                 trajectories=20000))
    assert stats.unabsorbed == 0
    report = born_statistics_test(stats, z_threshold=4.0)
    assert report.passed, report.details
    frac = report.details['fractions']
    assert frac[0] == pytest.approx(0.3, abs=0.02)


def test_scale_invariance():
    fine = run_ensemble(_config(initial=(0.1, 0.2, 0.3, 0.4), steps=60,
                                trajectories=3000, groups=((0, 1), (2, 3)),
                                base_seed=1))
    coarse = run_ensemble(_config(initial=(0.3, 0.7), steps=60,
                                  trajectories=3000, base_seed=2))
    assert fine.grouped.branches == 2
    np.testing.assert_allclose(fine.grouped.initial, [0.3, 0.7])
    report = scale_invariance_test(fine, coarse)
    assert report.passed, report.max_abs_z


def test_scale_invariance_needs_groups():
    stats = run_ensemble(_config(trajectories=10))
    with pytest.raises(DomainError):
        scale_invariance_test(stats, stats)


def test_report_record():
    record = TestReport('martingale', passed=False, max_abs_z=6.1,
                        details={'trajectories': 10}).to_record()
    assert record == {'test': 'martingale', 'verdict': 'FAIL',
                      'max_abs_z': 6.1, 'insufficient': False,
                      'trajectories': 10}


@pytest.mark.slow
def test_decay_rate_from_simulation():
    stats = run_ensemble(_config(k=0.1, steps=200, trajectories=100000,
                                 chunk_size=10000))
    report = decay_fit_test(stats, 0, 1, 0.1, tolerance=0.02)
    assert report.passed, report.details
