"""Exact enumeration of the collapse process on small instances."""
import logging
import math
from typing import List, Optional, Tuple

import attr
import numpy as np

from .core import (BranchDistribution, CollapseMode, Spectrum,
                   NORM_TOLERANCE)
from .ensemble import TestReport, branch_pairs, zscores
from .error import BudgetError, DimensionError, DomainError
from .output import MomentTable

logger = logging.getLogger('aiocollapse.oracle')

DEFAULT_NODE_BUDGET = 10 ** 7


@attr.s(frozen=True, slots=True, eq=False)
class EventTreeMoments:
    steps: np.ndarray = attr.ib()
    mean_p: np.ndarray = attr.ib()
    mean_x: np.ndarray = attr.ib()
    weights: np.ndarray = attr.ib()
    nodes: int = attr.ib()

    @property
    def branches(self) -> int:
        return int(self.mean_p.shape[1])

    @property
    def se_p(self) -> np.ndarray:
        return np.zeros_like(self.mean_p)

    @property
    def se_x(self) -> np.ndarray:
        return np.zeros_like(self.mean_x)

    def to_rows(self) -> List[List[str]]:
        """Rows of the ensemble CSV layout with zero standard errors."""
        return MomentTable.from_moments(self).rows()


def tree_size(branches: int, steps: int,
              limit: Optional[int] = None) -> int:
    """Nodes of the full event tree; stops counting once past ``limit``."""
    total, level = 0, 1
    for _ in range(steps + 1):
        total += level
        if limit is not None and total > limit:
            break
        level *= branches
    return total


def _step(probs: List[float], k: float, chosen: int) -> List[float]:
    out = [p * (1.0 - k) for p in probs]
    out[chosen] += k
    total = sum(out)
    if abs(total - 1.0) > NORM_TOLERANCE:
        out = [p / total for p in out]
    return out


def _strength(probs: List[float], spread: Optional[List[List[float]]],
              mode: CollapseMode) -> float:
    if mode.is_fixed:
        return mode.fixed_k
    m = len(probs)
    delta = 0.5 * sum(probs[i] * probs[j] * spread[i][j]
                      for i in range(m) for j in range(m))
    return min(1.0, 2.0 * math.pi * delta)


def enumerate_exact(initial: BranchDistribution, steps: int,
                    mode: CollapseMode, spectrum: Optional[Spectrum] = None,
                    node_budget: int = DEFAULT_NODE_BUDGET
                    ) -> EventTreeMoments:
    """Walks every event sequence up to ``steps`` instants.

    Each path is weighted by the product of its branch probabilities;
    moments at depth ``d`` are the weighted sums over the depth-``d``
    nodes. Zero-weight branches are not expanded.
    """
    m = len(initial)
    if steps < 0:
        raise DomainError('steps must be non-negative')
    if tree_size(m, steps, limit=node_budget) > node_budget:
        raise BudgetError('event tree of %d steps over %d branches exceeds '
                          'the budget of %d nodes' % (steps, m, node_budget))
    spread = None
    if not mode.is_fixed:
        if spectrum is None:
            raise DomainError('model-k enumeration needs a spectrum')
        if len(spectrum) != m:
            raise DimensionError('initial distribution has %d branches, '
                                 'spectrum has %d' % (m, len(spectrum)))
        spread = spectrum.spread_matrix().tolist()

    pairs = branch_pairs(m)
    sum_p = [[0.0] * m for _ in range(steps + 1)]
    sum_x = [[0.0] * len(pairs) for _ in range(steps + 1)]
    weights = [0.0] * (steps + 1)
    nodes = 0

    stack: List[Tuple[List[float], float, int]] = [
        (initial.probs.tolist(), 1.0, 0)]
    while stack:
        probs, weight, depth = stack.pop()
        nodes += 1
        weights[depth] += weight
        row_p = sum_p[depth]
        for i in range(m):
            row_p[i] += weight * probs[i]
        row_x = sum_x[depth]
        for n, (i, j) in enumerate(pairs):
            row_x[n] += weight * probs[i] * probs[j]
        if depth == steps:
            continue
        k = _strength(probs, spread, mode)
        for chosen in range(m):
            if probs[chosen] > 0.0:
                stack.append((_step(probs, k, chosen),
                              weight * probs[chosen], depth + 1))

    logger.debug('enumerated %d nodes over %d steps', nodes, steps)
    return EventTreeMoments(steps=np.arange(steps + 1),
                            mean_p=np.array(sum_p),
                            mean_x=np.array(sum_x).reshape(steps + 1,
                                                           len(pairs)),
                            weights=np.array(weights), nodes=nodes)


def oracle_compare(moments, stats, z_threshold: float = 5.0) -> TestReport:
    """Monte Carlo means against exact moments at every recorded step.

    ``moments`` and ``stats`` only need ``steps``, ``mean_p``, ``mean_x``
    and, for ``stats``, ``se_p`` and ``se_x``; parsed CSV tables work too.
    """
    if moments.mean_p.shape[1] != stats.mean_p.shape[1]:
        raise DimensionError('oracle has %d branches, ensemble has %d'
                             % (moments.mean_p.shape[1],
                                stats.mean_p.shape[1]))
    rows = []
    if len(stats.steps) == 0:
        return TestReport('oracle_compare', passed=True,
                          details={'rows': rows})
    exact_steps = {int(s): r for r, s in enumerate(moments.steps)}
    missing = [int(s) for s in stats.steps if int(s) not in exact_steps]
    if missing:
        raise DimensionError('oracle does not cover steps %s' % missing[:5])
    worst = 0.0
    for r, step in enumerate(stats.steps):
        e = exact_steps[int(step)]
        diff_p = stats.mean_p[r] - moments.mean_p[e]
        diff_x = stats.mean_x[r] - moments.mean_x[e]
        z = np.concatenate([zscores(diff_p, stats.se_p[r]),
                            zscores(diff_x, stats.se_x[r])])
        step_z = float(z.max()) if z.size else 0.0
        worst = max(worst, step_z)
        rows.append({
            'step': int(step),
            'max_abs_diff_p': float(np.abs(diff_p).max()),
            'max_abs_diff_x': (float(np.abs(diff_x).max())
                               if diff_x.size else 0.0),
            'max_abs_z': step_z})
    return TestReport('oracle_compare', passed=worst < z_threshold,
                      max_abs_z=worst,
                      details={'rows': rows, 'threshold': z_threshold})
