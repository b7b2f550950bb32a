"""The property battery behind ``aiocollapse verify``.

Every check runs at desk-scale k with fixed seeds, so a given settings
object always produces the same reports. ``mutation`` swaps the row update
for a deliberately broken one; a correct battery must then fail.
"""
import logging
import math
from concurrent.futures import Executor
from typing import Callable, Dict, List, Optional, Tuple

import attr
import numpy as np

from .core import (BranchDistribution, CollapseMode, EnergySpectrum,
                   RowStep, choose_rows, collapse_rows, renormalize)
from .ensemble import (RunConfig, TestReport, born_statistics_test,
                       decay_fit_test, estimate_half_decay,
                       fixed_k_half_decay, half_decay_ratio,
                       martingale_test, run_ensemble,
                       scale_invariance_test)
from .error import NotCollapsedError
from .oracle import enumerate_exact, oracle_compare
from .tracer import SPAN_KIND_CHECK, Span

logger = logging.getLogger('aiocollapse.verify')


def branch0_only_rows(probs: np.ndarray, k: np.ndarray,
                      chosen: np.ndarray) -> np.ndarray:
    """Broken update: collapses only when branch 0 is drawn."""
    return collapse_rows(probs, np.where(chosen == 0, k, 0.0), chosen)


def wrong_sign_rows(probs: np.ndarray, k: np.ndarray,
                    chosen: np.ndarray) -> np.ndarray:
    """Broken update: the other branches grow by (1 + k) instead of
    shrinking by (1 - k); renormalization then leaves a weaker collapse."""
    out = probs * (1.0 + k)[:, None]
    out[np.arange(probs.shape[0]), chosen] += k
    return out


MUTATIONS: Dict[str, RowStep] = {
    'none': collapse_rows,
    'branch0-only': branch0_only_rows,
    'wrong-sign': wrong_sign_rows,
}


@attr.s(frozen=True, slots=True)
class VerifySettings:
    seed: int = attr.ib(default=0)
    mutation: str = attr.ib(default='none',
                            validator=attr.validators.in_(MUTATIONS))
    chunk_size: int = attr.ib(default=1000)
    fuzz_cases: int = attr.ib(default=100000)
    oracle_steps: int = attr.ib(default=12)
    oracle_trajectories: int = attr.ib(default=100000)
    oracle_compare_steps: int = attr.ib(default=10)
    martingale_trajectories: int = attr.ib(default=10000)
    martingale_steps: int = attr.ib(default=1000)
    decay_trajectories: int = attr.ib(default=100000)
    decay_steps: int = attr.ib(default=200)
    born_trajectories: int = attr.ib(default=10000)
    born_steps: int = attr.ib(default=20000)
    scale_trajectories: int = attr.ib(default=20000)
    scale_steps: int = attr.ib(default=200)
    martingale_z: float = attr.ib(default=5.0)
    decay_rate_tolerance: float = attr.ib(default=0.02)
    binomial_z: float = attr.ib(default=3.0)
    oracle_z: float = attr.ib(default=5.0)
    exact_tolerance: float = attr.ib(default=1e-12)

    @property
    def step(self) -> RowStep:
        return MUTATIONS[self.mutation]


def _run(settings: VerifySettings, executor: Optional[Executor],
         initial, mode: CollapseMode, steps: int, trajectories: int,
         seed_offset: int, spectrum=None, groups=None):
    config = RunConfig(
        initial=BranchDistribution(initial), spectrum=spectrum, mode=mode,
        steps=steps, trajectories=trajectories,
        base_seed=(settings.seed + seed_offset) % 2 ** 64,
        chunk_size=settings.chunk_size, groups=groups, step=settings.step)
    return run_ensemble(config, executor)


def simplex_fuzz(settings: VerifySettings) -> TestReport:
    """Random (distribution, k, branch) triples stay on the simplex."""
    rng = np.random.Generator(np.random.Philox(settings.seed))
    worst = 0.0
    negative = 0
    done = 0
    while done < settings.fuzz_cases:
        b = min(10000, settings.fuzz_cases - done)
        m = int(rng.integers(1, 8))
        probs = renormalize(rng.dirichlet(np.ones(m), size=b))
        k = rng.random(b)
        chosen = choose_rows(probs, rng.random(b))
        out = renormalize(settings.step(probs, k, chosen))
        worst = max(worst, float(np.abs(out.sum(axis=1) - 1.0).max()))
        negative += int(((out < 0.0) | (out > 1.0)).sum())
        done += b
    passed = negative == 0 and worst <= settings.exact_tolerance
    return TestReport('simplex_fuzz', passed=passed,
                      details={'cases': done, 'max_norm_error': worst,
                               'out_of_range': negative})


def _closed_form(initial, k: float, steps: int,
                 tolerance: float) -> Dict:
    moments = enumerate_exact(BranchDistribution(initial), steps,
                              CollapseMode.fixed(k))
    p0 = np.asarray(initial, dtype=float)
    m = p0.size
    expect_x = np.array([[(1.0 - k * k) ** n * p0[i] * p0[j]
                          for i in range(m) for j in range(i + 1, m)]
                         for n in moments.steps]).reshape(
                             moments.mean_x.shape)
    err_p = float(np.abs(moments.mean_p - p0).max())
    err_x = (float(np.abs(moments.mean_x - expect_x).max())
             if expect_x.size else 0.0)
    err_w = float(np.abs(moments.weights - 1.0).max())
    return {'initial': list(initial), 'k': k, 'steps': steps,
            'nodes': moments.nodes, 'max_error_p': err_p,
            'max_error_x': err_x, 'max_error_weights': err_w,
            'ok': max(err_p, err_x, err_w) <= tolerance}


def oracle_closed_form(settings: VerifySettings) -> TestReport:
    """Exact enumeration against the martingale and (1 − k²)ⁿ laws."""
    cases = [_closed_form(initial, k, settings.oracle_steps,
                          settings.exact_tolerance)
             for initial in ([0.3, 0.7], [0.2, 0.3, 0.5])
             for k in (0.1, 0.3)]
    return TestReport('oracle_closed_form',
                      passed=all(c['ok'] for c in cases),
                      details={'cases': cases})


def oracle_monte_carlo(settings: VerifySettings,
                       executor: Optional[Executor]) -> TestReport:
    initial, k = [0.5, 0.5], 0.1
    steps = settings.oracle_compare_steps
    exact = enumerate_exact(BranchDistribution(initial), steps,
                            CollapseMode.fixed(k))
    stats = _run(settings, executor, initial, CollapseMode.fixed(k), steps,
                 settings.oracle_trajectories, seed_offset=1)
    report = oracle_compare(exact, stats, settings.oracle_z)
    return attr.evolve(report, details=dict(
        report.details, trajectories=stats.count, k=k))


def martingale_fixed(settings: VerifySettings,
                     executor: Optional[Executor]) -> TestReport:
    stats = _run(settings, executor, [1 / 3] * 3, CollapseMode.fixed(0.05),
                 settings.martingale_steps,
                 settings.martingale_trajectories, seed_offset=2)
    return attr.evolve(martingale_test(stats, settings.martingale_z),
                       name='martingale_fixed_k')


def martingale_model(settings: VerifySettings,
                     executor: Optional[Executor]) -> TestReport:
    # uniform start over (0, E, 2E) with initial k = 0.05
    level = 0.05 / (2.0 * math.pi) * 9.0 / 4.0
    spectrum = EnergySpectrum.from_planck([0.0, level, 2.0 * level])
    stats = _run(settings, executor, [1 / 3] * 3, CollapseMode.model(),
                 settings.martingale_steps,
                 settings.martingale_trajectories, seed_offset=3,
                 spectrum=spectrum)
    return attr.evolve(martingale_test(stats, settings.martingale_z),
                       name='martingale_model_k')


def decay_and_half_decay(settings: VerifySettings,
                         executor: Optional[Executor]) -> List[TestReport]:
    k = 0.1
    stats = _run(settings, executor, [0.5, 0.5], CollapseMode.fixed(k),
                 settings.decay_steps, settings.decay_trajectories,
                 seed_offset=4)
    fit = decay_fit_test(stats, 0, 1, k, settings.decay_rate_tolerance)
    expected = fixed_k_half_decay(k)
    try:
        measured = estimate_half_decay(stats, 0, 1)
    except NotCollapsedError as exc:
        return [fit, TestReport('half_decay', passed=False,
                                details={'error': str(exc)})]
    error = abs(measured / expected - 1.0)
    half = TestReport(
        'half_decay', passed=error <= settings.decay_rate_tolerance,
        details={'k': k, 'measured_steps': measured,
                 'expected_steps': expected, 'relative_error': error})
    return [fit, half]


def model_half_decay(settings: VerifySettings,
                     executor: Optional[Executor]) -> TestReport:
    """Model-k half-decay against the prediction that freezes k.

    k shrinks as the state polarizes, so the measured time must be the
    longer one, by no more than a factor of two. A run too short to reach
    half decay fails.
    """
    k0 = 0.1
    # ΔE = 0.25·E₁ at (0.5, 0.5) and k = 2π·ΔE
    level = k0 / (2.0 * math.pi) * 4.0
    spectrum = EnergySpectrum.from_planck([0.0, level])
    stats = _run(settings, executor, [0.5, 0.5], CollapseMode.model(),
                 2 * settings.decay_steps,
                 settings.decay_trajectories // 10 or 1, seed_offset=5,
                 spectrum=spectrum)
    details: Dict = {'initial_k': k0,
                     'fixed_k_steps': fixed_k_half_decay(k0)}
    try:
        ratio = half_decay_ratio(stats, 0, 1, k0)
    except NotCollapsedError as exc:
        details['error'] = str(exc)
        return TestReport('half_decay_model_k', passed=False,
                          details=details)
    details['ratio'] = ratio
    return TestReport('half_decay_model_k', passed=1.0 <= ratio <= 2.0,
                      details=details)


def born_statistics(settings: VerifySettings,
                    executor: Optional[Executor]) -> TestReport:
    stats = _run(settings, executor, [0.3, 0.7], CollapseMode.fixed(0.1),
                 settings.born_steps, settings.born_trajectories,
                 seed_offset=6)
    return born_statistics_test(stats, settings.binomial_z)


def scale_invariance(settings: VerifySettings,
                     executor: Optional[Executor]) -> TestReport:
    k = 0.1
    fine = _run(settings, executor, [0.1, 0.2, 0.3, 0.4],
                CollapseMode.fixed(k), settings.scale_steps,
                settings.scale_trajectories, seed_offset=7,
                groups=((0, 1), (2, 3)))
    coarse = _run(settings, executor, [0.3, 0.7], CollapseMode.fixed(k),
                  settings.scale_steps, settings.scale_trajectories,
                  seed_offset=8)
    return scale_invariance_test(fine, coarse, settings.martingale_z)


Check = Callable[[VerifySettings, Optional[Executor]], object]

CHECKS: List[Tuple[str, Check]] = [
    ('simplex_fuzz', lambda s, e: simplex_fuzz(s)),
    ('oracle_closed_form', lambda s, e: oracle_closed_form(s)),
    ('oracle_compare', oracle_monte_carlo),
    ('martingale_fixed_k', martingale_fixed),
    ('martingale_model_k', martingale_model),
    ('decay_fit', decay_and_half_decay),
    ('half_decay_model_k', model_half_decay),
    ('born_statistics', born_statistics),
    ('scale_invariance', scale_invariance),
]


def run_battery(settings: VerifySettings,
                executor: Optional[Executor] = None,
                ctx: Optional[Span] = None,
                on_report: Optional[Callable[[TestReport], None]] = None
                ) -> List[TestReport]:
    """Runs every check in a fixed order and returns their reports.

    With ``ctx`` each check runs inside a child span tagged with its
    verdicts.
    """
    reports: List[TestReport] = []
    for name, check in CHECKS:
        if ctx is not None:
            with ctx.new_child(name, SPAN_KIND_CHECK) as span:
                batch = _as_list(check(settings, executor))
                span.record_check(
                    all(r.passed for r in batch),
                    max(r.max_abs_z for r in batch),
                    any(r.insufficient for r in batch))
        else:
            batch = _as_list(check(settings, executor))
        for report in batch:
            logger.info('%s: %s (max |z| %.3g)', report.name,
                        'PASS' if report.passed else 'FAIL',
                        report.max_abs_z)
            if on_report is not None:
                on_report(report)
        reports.extend(batch)
    return reports


def _as_list(result) -> List[TestReport]:
    return result if isinstance(result, list) else [result]
