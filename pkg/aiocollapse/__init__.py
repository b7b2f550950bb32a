# -*- coding: utf-8 -*-

"""Discrete energy-conserved wavefunction-collapse simulations."""

__author__ = """Konstantin Stepanov"""
__version__ = '0.1.0'

from . import app, error
from .app import Application, Component
from .config import Config
from .core import (BranchDistribution, CollapseMode, EnergySpectrum,
                   ManyBodySpectrum)
from .constants import CollapseConstants, PhysicalConstants
from .ensemble import EnsembleStats, RunConfig, run_ensemble
from .oracle import enumerate_exact, oracle_compare
from .scenarios import reproduction_table
from .tracer import Span

__all__ = ['app', 'error', 'Component', 'Application', 'Span', 'Config',
           'BranchDistribution', 'CollapseMode', 'EnergySpectrum',
           'ManyBodySpectrum', 'CollapseConstants', 'PhysicalConstants',
           'EnsembleStats', 'RunConfig', 'run_ensemble', 'enumerate_exact',
           'oracle_compare', 'reproduction_table']
