"""Physical constants in the units the collapse model works with.

Energies are in eV, times in seconds, lengths in metres and masses in
kilograms unless a name says otherwise. Values come from the CODATA tables
shipped with :mod:`scipy.constants`.
"""
import math

import attr
from scipy import constants as sc

from .error import DomainError

EV = sc.electron_volt
HBAR_EV = sc.hbar / EV
PLANCK_TIME = sc.physical_constants['Planck time'][0]
BOLTZMANN_EV = sc.k / EV


def _positive(instance, attribute, value) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value)
            and value > 0):
        raise DomainError('%s must be a positive finite number, got %r'
                          '' % (attribute.name, value))


@attr.s(frozen=True, slots=True)
class CollapseConstants:
    """Planck time and reduced Planck constant; E_P is derived as h/t_P."""

    planck_time: float = attr.ib(default=PLANCK_TIME, validator=_positive)
    hbar: float = attr.ib(default=HBAR_EV, validator=_positive)

    @property
    def h(self) -> float:
        return 2 * math.pi * self.hbar

    @property
    def planck_energy(self) -> float:
        return self.h / self.planck_time


@attr.s(frozen=True, slots=True)
class PhysicalConstants:
    hbar: float = attr.ib(default=HBAR_EV, validator=_positive)
    c: float = attr.ib(default=sc.c, validator=_positive)
    k_b: float = attr.ib(default=BOLTZMANN_EV, validator=_positive)
    planck_time: float = attr.ib(default=PLANCK_TIME, validator=_positive)
    radius_universe: float = attr.ib(default=1e25, validator=_positive)
    electron_mass: float = attr.ib(default=sc.m_e, validator=_positive)
    temperature: float = attr.ib(default=300.0, validator=_positive)

    @property
    def h(self) -> float:
        return 2 * math.pi * self.hbar

    @property
    def planck_energy(self) -> float:
        return self.h / self.planck_time

    @property
    def collapse(self) -> CollapseConstants:
        return CollapseConstants(planck_time=self.planck_time,
                                 hbar=self.hbar)

    @property
    def thermal_energy(self) -> float:
        """Mean kinetic energy (3/2)k_B·T of a gas molecule, in eV."""
        return 1.5 * self.k_b * self.temperature
