"""Monte Carlo ensembles of collapse trajectories.

Trajectories are simulated in fixed chunks of ``RunConfig.chunk_size``. Each
trajectory draws from its own counter-based stream keyed by
``(base_seed, trajectory_index)``, and chunk statistics are merged in chunk
order, so the result does not depend on how many workers ran the chunks.
"""
import logging
import math
from concurrent.futures import Executor
from functools import partial
from typing import (Callable, Dict, Iterable, List, Optional, Sequence,
                    Tuple, Union)

import attr
import numpy as np
from scipy import stats as sps

from .core import (BranchDistribution, CollapseMode, RowStep, Spectrum,
                   check_partition, collapse_rows, evolve_batch, group_rows)
from .error import (BudgetError, DimensionError, DomainError,
                    NotCollapsedError)
from .misc import derive_seed

logger = logging.getLogger('aiocollapse.ensemble')

DEFAULT_ABSORPTION = 1.0 - 1e-9
DEFAULT_BUDGET = 10 ** 10
DRAW_BLOCK = 1024


def trajectory_rng(base_seed: int, index: int) -> np.random.Generator:
    """Philox stream for one trajectory, independent of scheduling order."""
    seq = derive_seed(base_seed, index)
    return np.random.Generator(np.random.Philox(seq))


def _positive_int(instance, attribute, value) -> None:
    if not isinstance(value, (int, np.integer)) or value < 1:
        raise DomainError('%s must be a positive integer, got %r'
                          % (attribute.name, value))


@attr.s(frozen=True, slots=True, eq=False)
class RunConfig:
    initial: BranchDistribution = attr.ib()
    spectrum: Optional[Spectrum] = attr.ib()
    mode: CollapseMode = attr.ib()
    steps: int = attr.ib(validator=_positive_int)
    trajectories: int = attr.ib(validator=_positive_int)
    base_seed: int = attr.ib(default=0)
    record_stride: int = attr.ib(default=1, validator=_positive_int)
    absorption_threshold: float = attr.ib(default=DEFAULT_ABSORPTION)
    chunk_size: int = attr.ib(default=1000, validator=_positive_int)
    budget: int = attr.ib(default=DEFAULT_BUDGET, validator=_positive_int)
    groups: Optional[Tuple[Tuple[int, ...], ...]] = attr.ib(default=None)
    step: RowStep = attr.ib(default=collapse_rows)

    @base_seed.validator
    def _check_seed(self, attribute, value) -> None:
        if not isinstance(value, (int, np.integer)) or not (
                0 <= value < 2 ** 64):
            raise DomainError('base_seed must be a 64-bit unsigned integer')

    @absorption_threshold.validator
    def _check_threshold(self, attribute, value) -> None:
        if not 0.0 < value < 1.0:
            raise DomainError('absorption_threshold must lie in (0, 1)')

    @groups.validator
    def _check_groups(self, attribute, value) -> None:
        if value is not None:
            check_partition(value, len(self.initial))

    def __attrs_post_init__(self) -> None:
        if self.spectrum is None and not self.mode.is_fixed:
            raise DomainError('model-k mode needs a spectrum')
        if self.spectrum is not None and len(self.spectrum) != len(
                self.initial):
            raise DimensionError('initial distribution has %d branches, '
                                 'spectrum has %d'
                                 % (len(self.initial), len(self.spectrum)))

    @property
    def branches(self) -> int:
        return len(self.initial)

    def recorded_steps(self) -> np.ndarray:
        return np.arange(0, self.steps + 1, self.record_stride)

    def check_budget(self, trajectories: Optional[int] = None) -> None:
        work = self.steps * (self.trajectories if trajectories is None
                             else trajectories)
        if work > self.budget:
            raise BudgetError('%d trajectory-steps exceed the budget of %d'
                              % (work, self.budget))


@attr.s(frozen=True, slots=True, eq=False)
class Trajectory:
    steps: np.ndarray = attr.ib()
    snapshots: np.ndarray = attr.ib()
    absorbed_branch: Optional[int] = attr.ib(default=None)
    absorption_step: Optional[int] = attr.ib(default=None)

    def distribution(self, r: int) -> BranchDistribution:
        return BranchDistribution(self.snapshots[r])


Recorder = Callable[[Union[int, slice], np.ndarray], None]


def _simulate_block(config: RunConfig, indices: Sequence[int],
                    record: Recorder) -> Tuple[np.ndarray, np.ndarray]:
    """Absorbed branch (b,) and absorption step (b,); -1 marks trajectories
    that never reached the threshold.

    ``record(r, probs)`` receives the (b, m) states at each recorded row r,
    or at the slice of all remaining rows once every trajectory is absorbed.
    """
    b = len(indices)
    matrix = (config.spectrum.spread_matrix()
              if config.spectrum is not None else None)
    streams = [trajectory_rng(config.base_seed, i) for i in indices]
    probs = np.tile(config.initial.probs, (b, 1))
    absorbed = np.full(b, -1)
    absorbed_at = np.full(b, -1)
    active = np.ones(b, dtype=bool)

    def absorb(rows: np.ndarray, n: int) -> None:
        hit = rows[probs[rows].max(axis=1) >= config.absorption_threshold]
        absorbed[hit] = probs[hit].argmax(axis=1)
        absorbed_at[hit] = n
        active[hit] = False

    absorb(np.arange(b), 0)
    record(0, probs)
    r = 1
    draws = np.empty((b, 0))
    for n in range(1, config.steps + 1):
        if not active.any():
            record(slice(r, None), probs)
            break
        offset = (n - 1) % DRAW_BLOCK
        if offset == 0:
            size = min(DRAW_BLOCK, config.steps - n + 1)
            draws = np.stack([s.random(size) for s in streams])
        rows = np.flatnonzero(active)
        probs[rows] = evolve_batch(probs[rows], matrix, draws[rows, offset],
                                   config.mode, config.step)
        absorb(rows, n)
        if n % config.record_stride == 0:
            record(r, probs)
            r += 1
    return absorbed, absorbed_at


def run_trajectory(config: RunConfig, trajectory_index: int) -> Trajectory:
    config.check_budget(trajectories=1)
    snapshots = np.empty((len(config.recorded_steps()), config.branches))

    def record(r: Union[int, slice], probs: np.ndarray) -> None:
        snapshots[r] = probs[0]

    absorbed, absorbed_at = _simulate_block(config, [trajectory_index],
                                            record)
    branch = int(absorbed[0])
    return Trajectory(
        steps=config.recorded_steps(),
        snapshots=snapshots,
        absorbed_branch=branch if branch >= 0 else None,
        absorption_step=int(absorbed_at[0]) if branch >= 0 else None)


def branch_pairs(m: int) -> List[Tuple[int, int]]:
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


def _cross(values: np.ndarray, pairs: List[Tuple[int, int]]) -> np.ndarray:
    if not pairs:
        return np.zeros(values.shape[:-1] + (0,))
    left = [i for i, _ in pairs]
    right = [j for _, j in pairs]
    return values[..., left] * values[..., right]


def zscores(diff: np.ndarray, se: np.ndarray) -> np.ndarray:
    """diff/se, with exact zero differences counting as z = 0 when se = 0."""
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.abs(diff) / se
    exact = np.abs(diff) <= 1e-12
    z = np.where(se > 0, z, np.where(exact, 0.0, np.inf))
    return np.where(np.isnan(z), 0.0, z)


@attr.s(slots=True, eq=False)
class EnsembleStats:
    """Shifted moment sums over a set of trajectories.

    Sums are kept relative to the initial values (``initial``, ``initial
    cross``) so that steps where every trajectory still sits at the start
    have exactly zero variance.
    """

    steps: np.ndarray = attr.ib()
    initial: np.ndarray = attr.ib()
    count: int = attr.ib()
    sum_p: np.ndarray = attr.ib()
    sum_p2: np.ndarray = attr.ib()
    sum_x: np.ndarray = attr.ib()
    sum_x2: np.ndarray = attr.ib()
    absorbed: np.ndarray = attr.ib()
    grouped: Optional['EnsembleStats'] = attr.ib(default=None)

    @classmethod
    def zeros(cls, steps: np.ndarray, initial: np.ndarray,
              count: int) -> 'EnsembleStats':
        rows, m = steps.size, initial.size
        npairs = m * (m - 1) // 2
        return cls(steps=steps, initial=initial, count=count,
                   sum_p=np.zeros((rows, m)), sum_p2=np.zeros((rows, m)),
                   sum_x=np.zeros((rows, npairs)),
                   sum_x2=np.zeros((rows, npairs)),
                   absorbed=np.zeros(m, dtype=np.int64))

    def record(self, r: Union[int, slice], probs: np.ndarray) -> None:
        """Store the sums over the (count, m) states at recorded row r."""
        pairs = self.pairs
        dp = probs - self.initial
        dx = _cross(probs, pairs) - _cross(self.initial, pairs)
        self.sum_p[r] = dp.sum(axis=0)
        self.sum_p2[r] = (dp * dp).sum(axis=0)
        self.sum_x[r] = dx.sum(axis=0)
        self.sum_x2[r] = (dx * dx).sum(axis=0)

    def count_absorbed(self, absorbed: np.ndarray) -> None:
        self.absorbed = np.bincount(absorbed[absorbed >= 0],
                                    minlength=self.branches)

    @classmethod
    def merge(cls, parts: Iterable['EnsembleStats']) -> 'EnsembleStats':
        parts = list(parts)
        if not parts:
            raise DimensionError('nothing to merge')
        first = parts[0]
        for part in parts[1:]:
            if (part.steps.shape != first.steps.shape
                    or part.initial.shape != first.initial.shape):
                raise DimensionError('cannot merge statistics of different '
                                     'shapes')
        grouped = None
        if first.grouped is not None:
            grouped = cls.merge(p.grouped for p in parts)
        return cls(steps=first.steps, initial=first.initial,
                   count=sum(p.count for p in parts),
                   sum_p=_ordered_sum(p.sum_p for p in parts),
                   sum_p2=_ordered_sum(p.sum_p2 for p in parts),
                   sum_x=_ordered_sum(p.sum_x for p in parts),
                   sum_x2=_ordered_sum(p.sum_x2 for p in parts),
                   absorbed=_ordered_sum(p.absorbed for p in parts),
                   grouped=grouped)

    @property
    def branches(self) -> int:
        return int(self.initial.size)

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        return branch_pairs(self.branches)

    @property
    def initial_cross(self) -> np.ndarray:
        return _cross(self.initial, self.pairs)

    @property
    def unabsorbed(self) -> int:
        return int(self.count - self.absorbed.sum())

    @property
    def mean_p(self) -> np.ndarray:
        return self.initial + self.sum_p / self.count

    @property
    def se_p(self) -> np.ndarray:
        return _stderr(self.sum_p, self.sum_p2, self.count)

    @property
    def mean_x(self) -> np.ndarray:
        return self.initial_cross + self.sum_x / self.count

    @property
    def se_x(self) -> np.ndarray:
        return _stderr(self.sum_x, self.sum_x2, self.count)

    def pair_index(self, i: int, j: int) -> int:
        if i == j:
            raise DomainError('a diagonal element is not a cross moment')
        i, j = min(i, j), max(i, j)
        if not 0 <= i < j < self.branches:
            raise DimensionError('pair (%d, %d) outside %d branches'
                                 % (i, j, self.branches))
        return self.pairs.index((i, j))

    def cross(self, i: int, j: int) -> Tuple[np.ndarray, np.ndarray]:
        n = self.pair_index(i, j)
        return self.mean_x[:, n], self.se_x[:, n]


def _ordered_sum(arrays: Iterable[np.ndarray]) -> np.ndarray:
    arrays = iter(arrays)
    total = np.array(next(arrays), copy=True)
    for arr in arrays:
        total = total + arr
    return total


def _stderr(s1: np.ndarray, s2: np.ndarray, n: int) -> np.ndarray:
    if n < 2:
        return np.full(s1.shape, np.nan)
    var = (s2 - s1 * s1 / n) / (n - 1)
    return np.sqrt(np.maximum(var, 0.0) / n)


def plan_chunks(config: RunConfig) -> List[Tuple[int, int]]:
    size = config.chunk_size
    return [(start, min(start + size, config.trajectories))
            for start in range(0, config.trajectories, size)]


def run_chunk(config: RunConfig, chunk: Tuple[int, int]) -> EnsembleStats:
    """Moment sums of one chunk, accumulated as the steps run; no per-step
    states are kept."""
    start, stop = chunk
    steps = config.recorded_steps()
    initial = config.initial.probs
    part = EnsembleStats.zeros(steps, initial, stop - start)
    groups = [list(g) for g in config.groups or ()]
    grouped: Optional[EnsembleStats] = None
    if groups:
        grouped = EnsembleStats.zeros(steps, group_rows(initial, groups),
                                      stop - start)
        part.grouped = grouped

    def record(r: Union[int, slice], probs: np.ndarray) -> None:
        part.record(r, probs)
        if grouped is not None:
            grouped.record(r, group_rows(probs, groups))

    absorbed, _ = _simulate_block(config, range(start, stop), record)
    part.count_absorbed(absorbed)
    if grouped is not None:
        lookup = np.empty(config.branches, dtype=int)
        for n, group in enumerate(groups):
            lookup[group] = n
        grouped.count_absorbed(np.where(absorbed >= 0,
                                        lookup[np.maximum(absorbed, 0)], -1))
    logger.debug('chunk %d..%d done, %d absorbed', start, stop,
                 int((absorbed >= 0).sum()))
    return part


def run_ensemble(config: RunConfig,
                 executor: Optional[Executor] = None) -> EnsembleStats:
    config.check_budget()
    chunks = plan_chunks(config)
    work = partial(run_chunk, config)
    if executor is None:
        parts = [work(chunk) for chunk in chunks]
    else:
        parts = list(executor.map(work, chunks))
    return EnsembleStats.merge(parts)


def estimate_half_decay(stats: EnsembleStats, i: int, j: int) -> float:
    """Interpolated step at which mean P_i·P_j first reaches half its start.

    Interpolation is geometric between the two bracketing records, linear
    when the later record is exactly zero.
    """
    series, _ = stats.cross(i, j)
    start = series[0]
    if start <= 0.0:
        raise DomainError('initial cross moment (%d, %d) is zero' % (i, j))
    half = start / 2.0
    below = np.flatnonzero(series <= half)
    if below.size == 0:
        raise NotCollapsedError('cross moment (%d, %d) never fell to half '
                                'its initial value in %d steps'
                                % (i, j, int(stats.steps[-1])))
    r = int(below[0])
    x0, x1 = float(series[r - 1]), float(series[r])
    n0, n1 = float(stats.steps[r - 1]), float(stats.steps[r])
    if x1 > 0.0:
        frac = math.log(x0 / half) / math.log(x0 / x1)
    else:
        frac = (x0 - half) / (x0 - x1)
    return n0 + frac * (n1 - n0)


def fixed_k_half_decay(k: float) -> float:
    """ln 2 / ln(1/(1 − k²)): the closed-form half-decay step count."""
    if k <= 0.0:
        return math.inf
    if k >= 1.0:
        return 1.0
    return math.log(2.0) / -math.log1p(-k * k)


def half_decay_ratio(stats: EnsembleStats, i: int, j: int,
                     k: float) -> float:
    """Measured half-decay over the prediction that holds k at its start
    value."""
    return estimate_half_decay(stats, i, j) / fixed_k_half_decay(k)


@attr.s(frozen=True, slots=True)
class TestReport:
    __test__ = False

    name: str = attr.ib()
    passed: bool = attr.ib()
    max_abs_z: float = attr.ib(default=0.0)
    insufficient: bool = attr.ib(default=False)
    details: Dict = attr.ib(factory=dict)

    def to_record(self) -> Dict:
        record = {'test': self.name,
                  'verdict': 'PASS' if self.passed else 'FAIL',
                  'max_abs_z': self.max_abs_z,
                  'insufficient': self.insufficient}
        record.update(self.details)
        return record


def martingale_test(stats: EnsembleStats,
                    z_threshold: float = 5.0) -> TestReport:
    if stats.count < 2:
        return TestReport('martingale', passed=False, insufficient=True,
                          details={'trajectories': stats.count})
    z = zscores(stats.mean_p - stats.initial, stats.se_p)
    worst = float(z.max())
    r, i = np.unravel_index(int(z.argmax()), z.shape)
    return TestReport(
        'martingale', passed=worst < z_threshold, max_abs_z=worst,
        details={'trajectories': stats.count,
                 'worst_step': int(stats.steps[r]), 'worst_branch': int(i),
                 'threshold': z_threshold})


def decay_fit_test(stats: EnsembleStats, i: int, j: int, k: float,
                   tolerance: float = 0.02,
                   z_threshold: float = 5.0) -> TestReport:
    """Fits log E[P_i·P_j] against the step count.

    Passes when the slope is within ``tolerance`` of ln(1 − k²) and the
    intercept within ``z_threshold`` standard errors of log(P_i(0)·P_j(0)).
    """
    series, se = stats.cross(i, j)
    start = stats.initial[i] * stats.initial[j]
    if start <= 0.0:
        raise DomainError('initial cross moment (%d, %d) is zero' % (i, j))
    if stats.count < 2:
        return TestReport('decay_fit', passed=False, insufficient=True,
                          details={'trajectories': stats.count})
    with np.errstate(divide='ignore', invalid='ignore'):
        usable = (series > 0.0) & ~(se > 0.25 * series)
    if usable.sum() < 3:
        return TestReport('decay_fit', passed=False, insufficient=True,
                          details={'usable_points': int(usable.sum())})
    expected = math.log1p(-k * k) if k < 1.0 else -math.inf
    x = stats.steps[usable].astype(float)
    y = np.log(series[usable])
    if np.ptp(y) == 0.0:
        slope, intercept, intercept_se = 0.0, float(y[0]), 0.0
    else:
        fit = sps.linregress(x, y)
        slope, intercept = float(fit.slope), float(fit.intercept)
        intercept_se = float(getattr(fit, 'intercept_stderr', 0.0))
    rate_ok = abs(slope - expected) <= tolerance * abs(expected) + 1e-12
    offset = abs(intercept - math.log(start))
    # steps share trajectories, so the fit error alone understates the spread
    with np.errstate(divide='ignore', invalid='ignore'):
        log_se = float(np.nanmax(se[usable] / series[usable]))
    error = max(intercept_se, log_se)
    intercept_ok = offset <= z_threshold * error + 1e-12
    z = offset / error if error > 0 else 0.0
    return TestReport(
        'decay_fit', passed=bool(rate_ok and intercept_ok), max_abs_z=z,
        details={'pair': [i, j], 'k': k, 'fitted_rate': slope,
                 'expected_rate': expected,
                 'relative_rate_error': (abs(slope / expected - 1.0)
                                         if expected else abs(slope)),
                 'intercept': intercept, 'expected_intercept':
                     math.log(start)})


def born_statistics_test(stats: EnsembleStats,
                         z_threshold: float = 3.0) -> TestReport:
    """Absorbed-branch fractions against the initial probabilities."""
    n = stats.count
    if n < 2:
        return TestReport('born_statistics', passed=False,
                          insufficient=True, details={'trajectories': n})
    frac = stats.absorbed / n
    p0 = stats.initial
    se = np.sqrt(p0 * (1.0 - p0) / n)
    z = zscores(frac - p0, se)
    worst = float(z.max())
    return TestReport(
        'born_statistics', passed=worst < z_threshold, max_abs_z=worst,
        details={'fractions': frac.tolist(), 'initial': p0.tolist(),
                 'unabsorbed': stats.unabsorbed,
                 'threshold': z_threshold})


def scale_invariance_test(fine: EnsembleStats, coarse: EnsembleStats,
                          z_threshold: float = 5.0) -> TestReport:
    """Grouped moments of a fine run against a direct coarse run."""
    grouped = fine.grouped
    if grouped is None:
        raise DomainError('the fine run was not configured with groups')
    if (grouped.steps.shape != coarse.steps.shape
            or np.any(grouped.steps != coarse.steps)
            or grouped.branches != coarse.branches):
        raise DimensionError('grouped and coarse runs record different '
                             'steps or branch counts')
    if min(grouped.count, coarse.count) < 2:
        return TestReport('scale_invariance', passed=False,
                          insufficient=True)
    z_p = zscores(grouped.mean_p - coarse.mean_p,
                   np.hypot(grouped.se_p, coarse.se_p))
    z_x = zscores(grouped.mean_x - coarse.mean_x,
                   np.hypot(grouped.se_x, coarse.se_x))
    worst = float(max(z_p.max(), z_x.max() if z_x.size else 0.0))
    return TestReport('scale_invariance', passed=worst < z_threshold,
                      max_abs_z=worst,
                      details={'groups': grouped.branches,
                               'threshold': z_threshold})
