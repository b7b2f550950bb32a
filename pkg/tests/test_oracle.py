import numpy as np
import pytest

from aiocollapse.core import BranchDistribution, CollapseMode, EnergySpectrum
from aiocollapse.ensemble import RunConfig, run_ensemble
from aiocollapse.error import BudgetError, DimensionError, DomainError
from aiocollapse.oracle import enumerate_exact, oracle_compare, tree_size
from aiocollapse.output import MomentTable


def test_tree_size():
    assert tree_size(2, 0) == 1
    assert tree_size(2, 3) == 15
    assert tree_size(3, 2) == 13


@pytest.mark.parametrize('initial', [[0.3, 0.7], [0.2, 0.3, 0.5]])
@pytest.mark.parametrize('k', [0.1, 0.3])
def test_fixed_k_closed_form(initial, k):
    moments = enumerate_exact(BranchDistribution(initial), 8,
                              CollapseMode.fixed(k))
    p0 = np.array(initial)
    np.testing.assert_allclose(moments.mean_p, np.tile(p0, (9, 1)),
                               atol=1e-12, rtol=0)
    np.testing.assert_allclose(moments.weights, 1.0, atol=1e-12, rtol=0)
    expect = np.array([[(1 - k * k) ** n * p0[i] * p0[j]
                        for i in range(p0.size)
                        for j in range(i + 1, p0.size)]
                       for n in range(9)])
    np.testing.assert_allclose(moments.mean_x, expect, atol=1e-12, rtol=0)
    assert moments.nodes == tree_size(p0.size, 8)


def test_zero_weight_branches_are_pruned():
    moments = enumerate_exact(BranchDistribution([1.0, 0.0]), 10,
                              CollapseMode.fixed(0.5))
    assert moments.nodes == 11
    assert moments.mean_p[-1].tolist() == [1.0, 0.0]


def test_node_budget():
    with pytest.raises(BudgetError):
        enumerate_exact(BranchDistribution.uniform(3), 20,
                        CollapseMode.fixed(0.1))
    with pytest.raises(BudgetError):
        enumerate_exact(BranchDistribution.uniform(2), 5,
                        CollapseMode.fixed(0.1), node_budget=62)
    enumerate_exact(BranchDistribution.uniform(2), 5,
                    CollapseMode.fixed(0.1), node_budget=63)


def test_node_budget_deep_tree():
    assert tree_size(2, 10 ** 9, limit=100) == 127
    assert tree_size(1, 10 ** 9, limit=100) == 101
    with pytest.raises(BudgetError):
        enumerate_exact(BranchDistribution([0.5, 0.5]), 200000,
                        CollapseMode.fixed(0.1))


def test_model_k_needs_matching_spectrum():
    dist = BranchDistribution([0.5, 0.5])
    with pytest.raises(DomainError):
        enumerate_exact(dist, 3, CollapseMode.model())
    with pytest.raises(DimensionError):
        enumerate_exact(dist, 3, CollapseMode.model(),
                        EnergySpectrum([0.0, 0.1, 0.2]))
    with pytest.raises(DomainError):
        enumerate_exact(dist, -1, CollapseMode.fixed(0.1))


def test_model_k_is_a_martingale():
    dist = BranchDistribution([0.2, 0.3, 0.5])
    moments = enumerate_exact(dist, 6, CollapseMode.model(),
                              EnergySpectrum([0.0, 0.01, 0.03]))
    np.testing.assert_allclose(moments.mean_p, np.tile(dist.probs, (7, 1)),
                               atol=1e-12, rtol=0)


def test_model_k_first_step():
    level = 0.04
    moments = enumerate_exact(BranchDistribution([0.5, 0.5]), 1,
                              CollapseMode.model(),
                              EnergySpectrum([0.0, level]))
    k = 2 * np.pi * 0.25 * level
    assert moments.mean_x[1, 0] == pytest.approx((1 - k * k) * 0.25,
                                                 abs=1e-14)


def test_rows_use_ensemble_layout():
    moments = enumerate_exact(BranchDistribution([0.3, 0.7]), 2,
                              CollapseMode.fixed(0.1))
    table = MomentTable.from_moments(moments)
    rows = moments.to_rows()
    assert len(rows) == 3
    assert all(len(row) == len(table.header()) for row in rows)
    assert rows[0][:3] == ['0', '0.3', '0.0']


def test_compare_with_monte_carlo():
    initial = BranchDistribution([0.5, 0.5])
    exact = enumerate_exact(initial, 10, CollapseMode.fixed(0.1))
    stats = run_ensemble(RunConfig(initial=initial, spectrum=None,
                                   mode=CollapseMode.fixed(0.1), steps=10,
                                   trajectories=20000, base_seed=3))
    report = oracle_compare(exact, stats)
    assert report.passed, report.max_abs_z
    assert [row['step'] for row in report.details['rows']] == list(range(11))
    assert report.details['rows'][0]['max_abs_z'] == 0.0


def test_compare_detects_bias():
    exact = enumerate_exact(BranchDistribution([0.5, 0.5]), 3,
                            CollapseMode.fixed(0.1))
    table = MomentTable(steps=exact.steps, mean_p=exact.mean_p + 0.01,
                        se_p=np.full(exact.mean_p.shape, 0.001),
                        mean_x=exact.mean_x, se_x=exact.se_x)
    report = oracle_compare(exact, table)
    assert not report.passed
    assert report.max_abs_z == pytest.approx(10.0)


def test_compare_zero_error_needs_exact_match():
    exact = enumerate_exact(BranchDistribution([0.5, 0.5]), 2,
                            CollapseMode.fixed(0.1))
    assert oracle_compare(exact, exact).passed
    shifted = MomentTable(steps=exact.steps, mean_p=exact.mean_p + 1e-6,
                          se_p=exact.se_p, mean_x=exact.mean_x,
                          se_x=exact.se_x)
    report = oracle_compare(exact, shifted)
    assert not report.passed
    assert report.max_abs_z == float('inf')


def test_compare_shape_errors():
    two = enumerate_exact(BranchDistribution([0.5, 0.5]), 2,
                          CollapseMode.fixed(0.1))
    three = enumerate_exact(BranchDistribution.uniform(3), 2,
                            CollapseMode.fixed(0.1))
    with pytest.raises(DimensionError):
        oracle_compare(two, three)
    longer = enumerate_exact(BranchDistribution([0.5, 0.5]), 4,
                             CollapseMode.fixed(0.1))
    with pytest.raises(DimensionError):
        oracle_compare(two, longer)
    # the ensemble may record fewer steps than the oracle covers
    assert oracle_compare(longer, two).passed
