"""Single-step collapse dynamics.

Energies are stored as fractions of the Planck energy E_P and time is counted
in Planck instants; conversion to eV or seconds happens only at the API
edges. Every stochastic function takes an explicit numpy ``Generator``.
"""
import math
from typing import Iterable, List, Optional, Sequence, Union, Callable

import attr
import numpy as np

from .constants import EV, CollapseConstants
from .error import DimensionError, DomainError

NORM_TOLERANCE = 1e-12

RowStep = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _as_levels(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionError('a spectrum needs a non-empty list of levels')
    if not np.all(np.isfinite(arr)):
        raise DomainError('energy levels must be finite')
    return _frozen(arr)


def _as_matrix(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError('a many-body spectrum needs an n x m matrix, '
                             'got shape %s' % (arr.shape,))
    if not np.all(np.isfinite(arr)):
        raise DomainError('energy levels must be finite')
    return _frozen(arr)


def renormalize(probs: np.ndarray) -> np.ndarray:
    """Clamp rounding negatives to zero and rescale rows drifting from 1.

    Works on a single distribution or on a batch (last axis).
    """
    out = np.where(probs < 0.0, 0.0, probs)
    total = out.sum(axis=-1, keepdims=True)
    drift = np.abs(total - 1.0) > NORM_TOLERANCE
    if np.any(drift):
        out = np.where(drift, out / total, out)
    return out


def _as_probs(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise DimensionError('a distribution needs a non-empty list of '
                             'probabilities')
    if not np.all(np.isfinite(arr)):
        raise DomainError('probabilities must be finite')
    if np.any(arr < 0.0):
        raise DomainError('probabilities must be non-negative')
    if arr.sum() <= 0.0:
        raise DomainError('probabilities must not all be zero')
    return _frozen(renormalize(arr))


@attr.s(frozen=True, slots=True, eq=False)
class EnergySpectrum:
    levels: np.ndarray = attr.ib(converter=_as_levels)

    @classmethod
    def from_planck(cls, values: Iterable[float]) -> 'EnergySpectrum':
        return cls(list(values))

    @classmethod
    def from_ev(cls, values: Iterable[float],
                constants: Optional[CollapseConstants] = None
                ) -> 'EnergySpectrum':
        constants = constants or CollapseConstants()
        return cls(np.asarray(list(values), dtype=float)
                   / constants.planck_energy)

    @classmethod
    def from_joules(cls, values: Iterable[float],
                    constants: Optional[CollapseConstants] = None
                    ) -> 'EnergySpectrum':
        return cls.from_ev(np.asarray(list(values), dtype=float) / EV,
                           constants)

    @classmethod
    def from_frequency(cls, values: Iterable[float],
                       constants: Optional[CollapseConstants] = None
                       ) -> 'EnergySpectrum':
        """Levels given as frequencies in Hz, E = h·f."""
        constants = constants or CollapseConstants()
        return cls.from_ev(np.asarray(list(values), dtype=float)
                           * constants.h, constants)

    def to_ev(self, constants: Optional[CollapseConstants] = None
              ) -> np.ndarray:
        constants = constants or CollapseConstants()
        return self.levels * constants.planck_energy

    def spread_matrix(self) -> np.ndarray:
        return np.abs(self.levels[:, None] - self.levels[None, :])

    def as_many_body(self) -> 'ManyBodySpectrum':
        return ManyBodySpectrum(self.levels[None, :])

    def __len__(self) -> int:
        return int(self.levels.size)


@attr.s(frozen=True, slots=True, eq=False)
class ManyBodySpectrum:
    """Energies E_li of subsystem ``l`` in branch ``i``."""

    energies: np.ndarray = attr.ib(converter=_as_matrix)

    @classmethod
    def from_planck(cls, rows: Iterable[Iterable[float]]
                    ) -> 'ManyBodySpectrum':
        return cls([list(r) for r in rows])

    @classmethod
    def from_ev(cls, rows: Iterable[Iterable[float]],
                constants: Optional[CollapseConstants] = None
                ) -> 'ManyBodySpectrum':
        constants = constants or CollapseConstants()
        return cls(np.array([list(r) for r in rows], dtype=float)
                   / constants.planck_energy)

    @property
    def subsystems(self) -> int:
        return int(self.energies.shape[0])

    def spread_matrix(self) -> np.ndarray:
        diff = self.energies[:, :, None] - self.energies[:, None, :]
        return np.abs(diff).sum(axis=0)

    def total(self) -> EnergySpectrum:
        return EnergySpectrum(self.energies.sum(axis=0))

    def rows(self) -> List[EnergySpectrum]:
        return [EnergySpectrum(row) for row in self.energies]

    def __len__(self) -> int:
        return int(self.energies.shape[1])


Spectrum = Union[EnergySpectrum, ManyBodySpectrum]


@attr.s(frozen=True, slots=True, eq=False)
class BranchDistribution:
    """Probabilities P_i of the energy branches, always normalized."""

    probs: np.ndarray = attr.ib(converter=_as_probs)

    @classmethod
    def from_probs(cls, values: Iterable[float],
                   tolerance: float = 1e-9) -> 'BranchDistribution':
        """Strict constructor: refuses input that is not already normalized.
        """
        arr = np.array(list(values), dtype=float)
        total = float(arr.sum()) if arr.size else 0.0
        if not abs(total - 1.0) <= tolerance:
            raise DomainError('probabilities must be normalized, they sum '
                              'to %.12g' % total)
        return cls(arr)

    @classmethod
    def uniform(cls, m: int) -> 'BranchDistribution':
        return cls(np.full(m, 1.0 / m))

    @classmethod
    def vertex(cls, m: int, i: int) -> 'BranchDistribution':
        arr = np.zeros(m)
        arr[i] = 1.0
        return cls(arr)

    def absorbed_branch(self, threshold: float) -> Optional[int]:
        i = int(np.argmax(self.probs))
        return i if self.probs[i] >= threshold else None

    def is_vertex(self, threshold: float = 1.0) -> bool:
        return self.absorbed_branch(threshold) is not None

    def __len__(self) -> int:
        return int(self.probs.size)

    def __getitem__(self, i: int) -> float:
        return float(self.probs[i])


@attr.s(frozen=True, slots=True)
class CollapseMode:
    """``model-k`` derives k from the state each instant; ``fixed-k`` does
    not."""

    fixed_k: Optional[float] = attr.ib(default=None)

    @fixed_k.validator
    def _check_k(self, attribute, value) -> None:
        if value is not None:
            check_strength(value)

    @classmethod
    def model(cls) -> 'CollapseMode':
        return cls(None)

    @classmethod
    def fixed(cls, k: float) -> 'CollapseMode':
        return cls(float(k))

    @property
    def is_fixed(self) -> bool:
        return self.fixed_k is not None

    def __str__(self) -> str:
        if self.fixed_k is None:
            return 'model-k'
        return 'fixed-k(%g)' % self.fixed_k


def check_strength(k: float) -> float:
    if not (0.0 <= k <= 1.0):
        raise DomainError('collapse strength k must lie in [0, 1], got %r'
                          % (k,))
    return float(k)


def _check_same_length(dist: BranchDistribution, spec: Spectrum) -> None:
    if len(dist) != len(spec):
        raise DimensionError('distribution has %d branches, spectrum has %d'
                             '' % (len(dist), len(spec)))


def spread(probs: np.ndarray, spread_matrix: np.ndarray) -> np.ndarray:
    """(1/2)·Σ_ij P_i·P_j·D_ij for one distribution or a batch of rows."""
    pairs = probs[..., :, None] * probs[..., None, :] * spread_matrix
    return 0.5 * pairs.sum(axis=(-2, -1))


def energy_uncertainty(dist: BranchDistribution,
                       spec: EnergySpectrum) -> float:
    """Mean absolute pairwise energy spread, in the units of ``spec``."""
    if isinstance(spec, ManyBodySpectrum):
        raise DimensionError('use energy_uncertainty_many_body for a '
                             'many-body spectrum')
    _check_same_length(dist, spec)
    return float(spread(dist.probs, spec.spread_matrix()))


def energy_uncertainty_many_body(dist: BranchDistribution,
                                 spec: ManyBodySpectrum) -> float:
    """Sum over subsystems of each subsystem's energy uncertainty."""
    if isinstance(spec, EnergySpectrum):
        spec = spec.as_many_body()
    _check_same_length(dist, spec)
    return float(spread(dist.probs, spec.spread_matrix()))


def collapse_strength(delta_e: float,
                      constants: Optional[CollapseConstants] = None
                      ) -> float:
    """k = ΔE·t_P/ħ for ΔE in eV, clamped to 1."""
    constants = constants or CollapseConstants()
    if not delta_e >= 0.0:
        raise DomainError('energy uncertainty must be non-negative, got %r'
                          % (delta_e,))
    return min(1.0, delta_e * constants.planck_time / constants.hbar)


def collapse_strength_internal(delta: np.ndarray) -> np.ndarray:
    """k for ΔE given in units of E_P = h/t_P, where ΔE·t_P/ħ = 2π·ΔE/E_P."""
    return np.minimum(1.0, 2.0 * math.pi * np.asarray(delta, dtype=float))


def collapse_time_estimate(delta_e: float,
                           constants: Optional[CollapseConstants] = None
                           ) -> float:
    """τ_c = ħ·E_P/ΔE² in seconds for ΔE in eV; ``inf`` when ΔE is 0."""
    constants = constants or CollapseConstants()
    if not delta_e >= 0.0:
        raise DomainError('energy uncertainty must be non-negative, got %r'
                          % (delta_e,))
    if delta_e == 0.0:
        return math.inf
    return constants.hbar * constants.planck_energy / delta_e ** 2


def choose_rows(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Cumulative-sum inversion for a batch of rows.

    A draw landing exactly on a cumulative boundary goes to the later
    bucket. Rounding mass past the cumulative total goes to the last branch
    with non-zero probability.
    """
    m = probs.shape[-1]
    cum = np.cumsum(probs, axis=-1)
    last = m - 1 - np.argmax(probs[:, ::-1] > 0.0, axis=-1)
    cum = np.where(np.arange(m)[None, :] >= last[:, None], np.inf, cum)
    return (uniforms[:, None] >= cum).sum(axis=-1)


def sample_collapse_branch(dist: BranchDistribution,
                           rng: np.random.Generator) -> int:
    u = np.array([rng.random()])
    return int(choose_rows(dist.probs[None, :], u)[0])


def collapse_rows(probs: np.ndarray, k: np.ndarray,
                  chosen: np.ndarray) -> np.ndarray:
    """P_c += k·(1 − P_c), every other P_j *= (1 − k), row by row."""
    out = probs * (1.0 - k)[:, None]
    rows = np.arange(probs.shape[0])
    out[rows, chosen] += k
    return out


def tiny_collapse_step(dist: BranchDistribution, k: float,
                       chosen: int) -> BranchDistribution:
    check_strength(k)
    if not 0 <= chosen < len(dist):
        raise DomainError('branch index %r outside 0..%d'
                          % (chosen, len(dist) - 1))
    out = collapse_rows(dist.probs[None, :], np.array([float(k)]),
                        np.array([chosen]))
    return BranchDistribution(renormalize(out[0]))


def step_strength(probs: np.ndarray, spread_matrix: Optional[np.ndarray],
                  mode: CollapseMode) -> np.ndarray:
    if mode.is_fixed:
        return np.full(probs.shape[0], mode.fixed_k)
    if spread_matrix is None:
        raise DomainError('model-k mode needs a spectrum')
    return collapse_strength_internal(spread(probs, spread_matrix))


def evolve_batch(probs: np.ndarray, spread_matrix: Optional[np.ndarray],
                 uniforms: np.ndarray, mode: CollapseMode,
                 step: RowStep = collapse_rows) -> np.ndarray:
    """One Planck instant for a batch of independent trajectories.

    ``probs`` is (trajectories, branches); ``uniforms`` holds one draw per
    row. Each row is updated exactly as :func:`evolve_step` would.
    """
    k = step_strength(probs, spread_matrix, mode)
    chosen = choose_rows(probs, uniforms)
    return renormalize(step(probs, k, chosen))


def evolve_step(dist: BranchDistribution, spec: Optional[Spectrum],
                rng: np.random.Generator,
                mode: CollapseMode) -> BranchDistribution:
    matrix = None
    if spec is not None:
        _check_same_length(dist, spec)
        matrix = spec.spread_matrix()
    u = np.array([rng.random()])
    out = evolve_batch(dist.probs[None, :], matrix, u, mode)
    return BranchDistribution(out[0])


def check_partition(partition: Sequence[Iterable[int]],
                    m: int) -> List[List[int]]:
    groups = [[int(i) for i in group] for group in partition]
    seen = [i for group in groups for i in group]
    if any(not group for group in groups):
        raise DomainError('partition groups must not be empty')
    if len(seen) != len(set(seen)):
        raise DomainError('partition groups overlap')
    if sorted(seen) != list(range(m)):
        raise DomainError('partition must cover branches 0..%d exactly'
                          % (m - 1))
    return groups


def group_rows(probs: np.ndarray, groups: List[List[int]]) -> np.ndarray:
    return np.stack([probs[..., g].sum(axis=-1) for g in groups], axis=-1)


def group_of(groups: Sequence[Sequence[int]], i: int) -> int:
    for n, group in enumerate(groups):
        if i in group:
            return n
    raise DomainError('branch %d is in no group' % i)


def coarse_grain(dist: BranchDistribution,
                 partition: Sequence[Iterable[int]]) -> BranchDistribution:
    groups = check_partition(partition, len(dist))
    return BranchDistribution(group_rows(dist.probs, groups))
