"""Typed configuration from config files and the environment.

Config files use ``key = value`` lines under ``[section]`` headers. Each key
is addressed as ``section.key``; a ``Config`` subclass declares the keys it
reads in ``_vars`` and converts them through a ``Val`` class. Keys no class
declares are errors.
"""
import configparser
import copy
import os
from collections import OrderedDict
from typing import (Any, Dict, Iterable, List, Mapping, Optional, Tuple,
                    Type, Union)

from .constants import PhysicalConstants
from .core import (BranchDistribution, CollapseMode, EnergySpectrum,
                   ManyBodySpectrum, Spectrum)
from .ensemble import DEFAULT_ABSORPTION, DEFAULT_BUDGET, RunConfig
from .error import DimensionError, DomainError
from .verify import MUTATIONS, VerifySettings

Env = Mapping[str, Any]


class ConfigError(Exception):
    pass


class Val:

    def __init__(self, name: str, value: Any) -> None:
        self.name = name
        self.value = value

    def __call__(self):  # pragma: nocover
        raise NotImplementedError()

    @staticmethod
    def type_name() -> str:
        return ''

    def args_markdown(self) -> str:
        return ''


class StrVal(Val):

    def __init__(self, name: str, value: Any,
                 max: Optional[int] = None,
                 min: Optional[int] = None) -> None:
        super().__init__(name, value)
        self.min = min
        self.max = max

    def __call__(self) -> str:
        if not isinstance(self.value, str):
            raise ConfigError("%s must be a string" % self.name)
        if self.min is not None and len(self.value) < self.min:
            raise ConfigError("length of %s must be greater than or equal to "
                              "%s"
                              "" % (self.name, self.min))
        if self.max is not None and len(self.value) > self.max:
            raise ConfigError("length of %s must be less than or equal to %s"
                              "" % (self.name, self.max))

        return self.value

    @staticmethod
    def type_name() -> str:
        return 'string'

    def args_markdown(self) -> str:
        text = ''
        if self.min is not None:
            text += '\n  min length: %s' % self.min
        if self.max is not None:
            text += '\n  max length: %s' % self.max
        return text


class BoolVal(Val):

    def __call__(self) -> bool:
        if isinstance(self.value, bool):
            return self.value
        if isinstance(self.value, int):
            return self.value != 0
        if isinstance(self.value, str):
            if self.value.lower() in ('1', 'on', 'true', 't', 'yes'):
                return True
            if self.value.lower() in ('0', 'off', 'false', 'f', 'no'):
                return False
        raise ConfigError("%s must be a boolean" % self.name)

    @staticmethod
    def type_name() -> str:
        return 'boolean'


class IntVal(Val):

    def __init__(self, name: str, value: Any,
                 max: Optional[int] = None,
                 min: Optional[int] = None) -> None:
        super().__init__(name, value)
        self.min = min
        self.max = max

    def __call__(self) -> int:
        try:
            val = int(self.value)
        except Exception:
            raise ConfigError("%s must be an integer" % self.name)
        if self.min is not None and val < self.min:
            raise ConfigError("%s must be greater than or equal to %s"
                              "" % (self.name, self.min))
        if self.max is not None and val > self.max:
            raise ConfigError("%s must be less than or equal to %s"
                              "" % (self.name, self.max))
        return val

    @staticmethod
    def type_name() -> str:
        return 'integer'

    def args_markdown(self) -> str:
        text = ''
        if self.min is not None:
            text += '\n  min value: %s' % self.min
        if self.max is not None:
            text += '\n  max value: %s' % self.max
        return text


class FloatVal(Val):

    def __init__(self, name: str, value: Any,
                 max: Optional[float] = None,
                 min: Optional[float] = None) -> None:
        super().__init__(name, value)
        self.min = min
        self.max = max

    def _parse(self, value: Any) -> float:
        try:
            return float(value)
        except Exception:
            raise ConfigError("%s must be a float" % self.name)

    def __call__(self) -> float:
        val = self._parse(self.value)
        if self.min is not None and val < self.min:
            raise ConfigError("%s must be greater than or equal to %s"
                              "" % (self.name, self.min))
        if self.max is not None and val > self.max:
            raise ConfigError("%s must be less than or equal to %s"
                              "" % (self.name, self.max))
        return val

    @staticmethod
    def type_name() -> str:
        return 'float'

    def args_markdown(self) -> str:
        text = ''
        if self.min is not None:
            text += '\n  min value: %s' % self.min
        if self.max is not None:
            text += '\n  max value: %s' % self.max
        return text


class PositiveFloatVal(FloatVal):

    def __call__(self) -> float:
        val = super().__call__()
        if not 0.0 < val < float('inf'):
            raise ConfigError("%s must be a positive finite number"
                              % self.name)
        return val

    @staticmethod
    def type_name() -> str:
        return 'float (> 0)'


class ChoiceVal(Val):

    def __init__(self, name: str, value: Any,
                 choices: Iterable[str] = ()) -> None:
        super().__init__(name, value)
        self.choices = list(choices)

    def __call__(self) -> str:
        if self.value not in self.choices:
            raise ConfigError("%s must be one of %s, got %r"
                              "" % (self.name, ', '.join(self.choices),
                                    self.value))
        return self.value

    @staticmethod
    def type_name() -> str:
        return 'choice'

    def args_markdown(self) -> str:
        return '\n  choices: %s' % ', '.join(self.choices)


class FloatListVal(FloatVal):
    """Comma separated floats."""

    def __init__(self, name: str, value: Any,
                 min_len: int = 1) -> None:
        super().__init__(name, value)
        self.min_len = min_len

    def _split(self, text: Any) -> List[float]:
        if isinstance(text, str):
            items = [t.strip() for t in text.split(',') if t.strip()]
        else:
            items = list(text)
        return [self._parse(item) for item in items]

    def __call__(self) -> List[float]:
        values = self._split(self.value)
        if len(values) < self.min_len:
            raise ConfigError("%s needs at least %d values"
                              "" % (self.name, self.min_len))
        return values

    @staticmethod
    def type_name() -> str:
        return 'comma separated floats'

    def args_markdown(self) -> str:
        return '\n  min length: %s' % self.min_len


class MatrixVal(FloatListVal):
    """Rows separated by ``;``, entries by ``,``."""

    def __call__(self) -> List[List[float]]:
        if isinstance(self.value, str):
            rows = [self._split(r) for r in self.value.split(';')
                    if r.strip()]
        else:
            rows = [self._split(r) for r in self.value]
        if len(rows) < self.min_len:
            raise ConfigError("%s needs at least %d rows"
                              "" % (self.name, self.min_len))
        if len({len(r) for r in rows}) != 1:
            raise ConfigError("%s rows must all have the same length"
                              % self.name)
        return rows

    @staticmethod
    def type_name() -> str:
        return 'matrix (rows separated by ";")'


class IndexGroupsVal(Val):
    """Groups separated by ``;``, branch indices by ``,``."""

    def __call__(self) -> Tuple[Tuple[int, ...], ...]:
        try:
            return tuple(tuple(int(i) for i in group.split(',')
                               if i.strip())
                         for group in str(self.value).split(';')
                         if group.strip())
        except ValueError:
            raise ConfigError("%s must list integer branch indices"
                              % self.name)

    @staticmethod
    def type_name() -> str:
        return 'index groups (groups separated by ";")'


class FileVal(Val):

    def __init__(self, name: str, value: Any,
                 mode: str = 'r',
                 encoding: str = 'UTF-8') -> None:
        super().__init__(name, value)
        self.mode = mode
        self.encoding = encoding

    def __call__(self) -> str:
        try:
            with open(self.value, self.mode, encoding=self.encoding):
                pass
        except Exception as e:
            raise ConfigError("Could not access file %s (%s): %s"
                              "" % (self.value, self.name, e))
        return self.value

    @staticmethod
    def type_name() -> str:
        return 'string(path to file)'

    def args_markdown(self) -> str:
        return '\n  access mode: %s\n  encoding: %s' % (self.mode,
                                                       self.encoding)


class DirVal(Val):

    def __call__(self) -> str:
        if not os.path.isdir(self.value):
            raise ConfigError("Directory %s does not exist"
                              "" % self.value)
        return self.value

    @staticmethod
    def type_name() -> str:
        return 'string(path to dir)'


class Config:
    _vars: Dict[str, Union[Dict, OrderedDict]] = {}

    def __init__(self,
                 env: Optional[Env] = None) -> None:
        self._env = os.environ if env is None else env
        self._conf = copy.deepcopy(self._vars)
        self._description: Dict[str, Dict] = {}
        for key, val in self._conf.items():
            val_type = val.pop('type')
            val_name = val.pop('name')
            val_default = val.pop('default', None)
            required = bool(val.pop('required', False))
            descr = str(val.pop('descr', ''))

            self._description[val_name] = {
                'type': val_type,
                'default': val_default,
                'required': required,
                'descr': descr,
            }

            value = self._env.get(val_name, val_default)
            if value is None:
                if required is True:
                    raise ConfigError("%s is required" % val_name)
                else:
                    setattr(self, key, None)
            else:
                v: Any = self._get_val(val_type)
                setattr(self, key, v(val_name, value, **val)())

    @classmethod
    def names(cls) -> List[str]:
        return [options['name'] for options in cls._vars.values()]

    @classmethod
    def _get_val(cls, val_type: Any) -> Type[Val]:
        if val_type == str:
            return StrVal
        elif val_type == bool:
            return BoolVal
        elif val_type == int:
            return IntVal
        elif val_type == float:
            return FloatVal
        elif val_type == 'file':
            return FileVal
        elif val_type == 'dir':
            return DirVal
        elif isinstance(val_type, type) and issubclass(val_type, Val):
            return val_type
        else:
            raise UserWarning('Invalid configuration settings')

    @classmethod
    def as_markdown(cls):
        result = []

        for name, options in cls._vars.items():
            options = copy.deepcopy(options)

            type_cls = cls._get_val(options.pop('type'))
            env_name = options.pop('name')
            descr = ''
            if 'descr' in options:
                descr = ': %s' % options.pop('descr')
            text = '* %s%s\n  type: %s' % (env_name, descr,
                                           type_cls.type_name())
            if 'required' in options:
                required = options.pop('required')
                if required:
                    text += '\n\n  required'
            if 'default' in options:
                default = options.pop('default')
                if default is not None:
                    text += '\n  default: %s' % default

            inst = type_cls(env_name, None, **options)
            text += inst.args_markdown()

            result.append(text)

        return '\n\n'.join(result) + '\n'


def _wrap(key: str, exc: Exception) -> ConfigError:
    return ConfigError('%s: %s' % (key, exc))


class SimulationConfig(Config):
    initial: List[float]
    mode: str
    k: Optional[float]
    steps: int
    trajectories: int
    seed: int
    record_stride: int
    absorption_threshold: float
    chunk_size: int
    budget: int
    groups: Optional[Tuple[Tuple[int, ...], ...]]
    unit: str
    levels: Optional[List[float]]
    energies: Optional[List[List[float]]]
    _vars = OrderedDict([
        ('initial', {
            'type': FloatListVal,
            'name': 'run.initial',
            'required': True,
            'descr': 'initial branch probabilities, must sum to 1',
        }),
        ('mode', {
            'type': ChoiceVal,
            'name': 'run.mode',
            'default': 'fixed-k',
            'choices': ['fixed-k', 'model-k'],
            'descr': 'fixed collapse strength or k from the energy '
                     'uncertainty',
        }),
        ('k', {
            'type': float,
            'name': 'run.k',
            'min': 0.0,
            'max': 1.0,
            'descr': 'collapse strength for fixed-k mode',
        }),
        ('steps', {
            'type': int,
            'name': 'run.steps',
            'required': True,
            'min': 1,
            'descr': 'Planck instants per trajectory',
        }),
        ('trajectories', {
            'type': int,
            'name': 'run.trajectories',
            'required': True,
            'min': 1,
        }),
        ('seed', {
            'type': int,
            'name': 'run.seed',
            'default': 0,
            'min': 0,
            'max': 2 ** 64 - 1,
        }),
        ('record_stride', {
            'type': int,
            'name': 'run.record_stride',
            'default': 1,
            'min': 1,
        }),
        ('absorption_threshold', {
            'type': float,
            'name': 'run.absorption_threshold',
            'default': DEFAULT_ABSORPTION,
            'min': 0.0,
            'max': 1.0,
        }),
        ('chunk_size', {
            'type': int,
            'name': 'run.chunk_size',
            'default': 1000,
            'min': 1,
            'descr': 'trajectories per work unit; part of the result, '
                     'not a tuning knob',
        }),
        ('budget', {
            'type': int,
            'name': 'run.budget',
            'default': DEFAULT_BUDGET,
            'min': 1,
            'descr': 'maximum trajectories x steps',
        }),
        ('groups', {
            'type': IndexGroupsVal,
            'name': 'run.groups',
            'descr': 'optional partition for coarse-grained statistics',
        }),
        ('unit', {
            'type': ChoiceVal,
            'name': 'spectrum.unit',
            'default': 'planck',
            'choices': ['planck', 'eV', 'J', 'Hz'],
        }),
        ('levels', {
            'type': FloatListVal,
            'name': 'spectrum.levels',
            'descr': 'energy of each branch',
        }),
        ('energies', {
            'type': MatrixVal,
            'name': 'spectrum.energies',
            'descr': 'per-subsystem energies, one row per subsystem',
        }),
    ])

    def mode_value(self) -> CollapseMode:
        if self.mode == 'model-k':
            if self.k is not None:
                raise ConfigError('run.k is only valid in fixed-k mode')
            return CollapseMode.model()
        if self.k is None:
            raise ConfigError('run.k is required for fixed-k mode')
        return CollapseMode.fixed(self.k)

    def spectrum(self, constants: Optional[PhysicalConstants] = None
                 ) -> Optional[Spectrum]:
        if self.levels is not None and self.energies is not None:
            raise ConfigError('spectrum.levels and spectrum.energies are '
                              'mutually exclusive')
        collapse = (constants or PhysicalConstants()).collapse
        convert = {
            'planck': lambda row: EnergySpectrum.from_planck(row),
            'eV': lambda row: EnergySpectrum.from_ev(row, collapse),
            'J': lambda row: EnergySpectrum.from_joules(row, collapse),
            'Hz': lambda row: EnergySpectrum.from_frequency(row, collapse),
        }[self.unit]
        try:
            if self.levels is not None:
                return convert(self.levels)
            if self.energies is not None:
                return ManyBodySpectrum.from_planck(
                    convert(row).levels for row in self.energies)
        except (DomainError, DimensionError) as e:
            raise _wrap('spectrum', e)
        return None

    def initial_value(self) -> BranchDistribution:
        try:
            return BranchDistribution.from_probs(self.initial)
        except (DomainError, DimensionError) as e:
            raise _wrap('run.initial', e)

    def run_config(self, seed: Optional[int] = None,
                   constants: Optional[PhysicalConstants] = None
                   ) -> RunConfig:
        try:
            return RunConfig(
                initial=self.initial_value(),
                spectrum=self.spectrum(constants),
                mode=self.mode_value(), steps=self.steps,
                trajectories=self.trajectories,
                base_seed=self.seed if seed is None else seed,
                record_stride=self.record_stride,
                absorption_threshold=self.absorption_threshold,
                chunk_size=self.chunk_size, budget=self.budget,
                groups=self.groups)
        except (DomainError, DimensionError) as e:
            raise _wrap('run', e)


class OracleConfig(Config):
    node_budget: int
    steps: Optional[int]
    _vars = {
        'node_budget': {
            'type': int,
            'name': 'oracle.node_budget',
            'default': 10 ** 7,
            'min': 1,
            'descr': 'maximum event-tree nodes to visit',
        },
        'steps': {
            'type': int,
            'name': 'oracle.steps',
            'min': 0,
            'descr': 'enumeration depth, run.steps when unset',
        },
    }


def _verify_vars() -> Dict[str, Dict]:
    defaults = VerifySettings()
    names: Dict[str, Dict] = OrderedDict()
    names['seed'] = {'type': int, 'name': 'verify.seed', 'default': 0,
                     'min': 0, 'max': 2 ** 64 - 1}
    names['mutation'] = {'type': ChoiceVal, 'name': 'verify.mutation',
                         'default': 'none', 'choices': list(MUTATIONS),
                         'descr': 'deliberately broken update to check the '
                                  'battery fails'}
    for field in ('chunk_size', 'fuzz_cases', 'oracle_steps',
                  'oracle_trajectories', 'oracle_compare_steps',
                  'martingale_trajectories', 'martingale_steps',
                  'decay_trajectories', 'decay_steps', 'born_trajectories',
                  'born_steps', 'scale_trajectories', 'scale_steps'):
        names[field] = {'type': int, 'name': 'verify.' + field,
                        'default': getattr(defaults, field), 'min': 1}
    for field in ('martingale_z', 'decay_rate_tolerance', 'binomial_z',
                  'oracle_z'):
        names[field] = {'type': PositiveFloatVal, 'name': 'verify.' + field,
                        'default': getattr(defaults, field)}
    return names


class VerifyConfig(Config):
    _vars = _verify_vars()

    def settings(self, seed: Optional[int] = None) -> VerifySettings:
        values = {key: getattr(self, key) for key in self._vars}
        if seed is not None:
            values['seed'] = seed
        return VerifySettings(**values)


class ConstantsConfig(Config):
    radius_universe: Optional[float]
    temperature: Optional[float]
    planck_time: Optional[float]
    hbar: Optional[float]
    _vars = {
        'radius_universe': {
            'type': PositiveFloatVal,
            'name': 'constants.radius_universe',
            'descr': 'horizon radius in m',
        },
        'temperature': {
            'type': PositiveFloatVal,
            'name': 'constants.temperature',
            'descr': 'ambient temperature in K',
        },
        'planck_time': {
            'type': PositiveFloatVal,
            'name': 'constants.planck_time',
            'descr': 'Planck time in s',
        },
        'hbar': {
            'type': PositiveFloatVal,
            'name': 'constants.hbar',
            'descr': 'reduced Planck constant in eV s',
        },
    }

    def constants(self) -> PhysicalConstants:
        overrides = {key: getattr(self, key) for key in self._vars
                     if getattr(self, key) is not None}
        return PhysicalConstants(**overrides)


class ReportConfig(Config):
    ensemble_csv: Optional[str]
    oracle_csv: Optional[str]
    _vars = {
        'ensemble_csv': {
            'type': 'file',
            'name': 'report.ensemble_csv',
            'descr': 'moments written by simulate',
        },
        'oracle_csv': {
            'type': 'file',
            'name': 'report.oracle_csv',
            'descr': 'moments written by oracle',
        },
    }


class EnvConfig(Config):
    threads: int
    tracer_addr: Optional[str]
    tracer_name: str
    tracer_sample_rate: float
    _vars = {
        'threads': {
            'type': int,
            'name': 'AIOCOLLAPSE_THREADS',
            'default': 1,
            'min': 1,
            'descr': 'default worker thread count',
        },
        'tracer_addr': {
            'type': str,
            'name': 'AIOCOLLAPSE_TRACER_ADDR',
            'descr': 'Zipkin collector address, e.g. http://localhost:9411/',
        },
        'tracer_name': {
            'type': str,
            'name': 'AIOCOLLAPSE_TRACER_NAME',
            'default': 'aiocollapse',
        },
        'tracer_sample_rate': {
            'type': float,
            'name': 'AIOCOLLAPSE_TRACER_SAMPLE_RATE',
            'default': 1.0,
            'min': 0.0,
            'max': 1.0,
        },
    }


FILE_CONFIGS: Tuple[Type[Config], ...] = (
    SimulationConfig, OracleConfig, VerifyConfig, ConstantsConfig,
    ReportConfig)


def read_config_file(path: str) -> Dict[str, str]:
    """Flattens a sectioned config file into ``section.key`` names.

    Raises ``ConfigError`` for unreadable files and for keys none of the
    file configs declares.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # type: ignore
    try:
        with open(path, encoding='UTF-8') as f:
            parser.read_file(f)
    except OSError as e:
        raise ConfigError('could not read config %s: %s' % (path, e))
    except configparser.Error as e:
        raise ConfigError('malformed config %s: %s' % (path, e))
    if parser.defaults():
        raise ConfigError('unknown configuration section [%s]'
                          % parser.default_section)
    values = {'%s.%s' % (section, key): value
              for section in parser.sections()
              for key, value in parser.items(section)}
    known = {name for cls in FILE_CONFIGS for name in cls.names()}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError('unknown configuration key %s' % unknown[0])
    return values


def reference_markdown() -> str:
    parts = []
    for cls in FILE_CONFIGS + (EnvConfig,):
        parts.append('## %s\n\n%s' % (cls.__name__, cls.as_markdown()))
    return '\n'.join(parts)
