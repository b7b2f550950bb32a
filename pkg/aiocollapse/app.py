import asyncio
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from typing import (IO, Any, Awaitable, Callable, Dict, Iterable, List,
                    Optional)

from .config import ConfigError
from .ensemble import EnsembleStats, RunConfig, plan_chunks, run_chunk
from .error import (BudgetError, DimensionError, DomainError,
                    OutputExistsError, PrepareError)
from .tracer import SPAN_KIND_COMMAND, SPAN_KIND_WORK, Span, Tracer

logger = logging.getLogger('aiocollapse')

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3

Main = Callable[[Span], Awaitable[int]]


class Component(object):
    def __init__(self) -> None:
        super(Component, self).__init__()
        self.app: Optional['Application'] = None

    async def prepare(self) -> None:
        raise NotImplementedError()

    async def start(self) -> None:
        raise NotImplementedError()

    async def stop(self) -> None:
        raise NotImplementedError()

    async def health(self, ctx: Span) -> None:
        """
        Raises exception if not healthy
        :raises: Exception
        """
        raise NotImplementedError()


class WorkerPool(Component):
    """Threads that run ensemble chunks; results come back in plan order."""

    def __init__(self, threads: int = 1) -> None:
        super().__init__()
        if threads < 1:
            raise UserWarning('threads must be positive')
        self.threads = threads
        self._executor: Optional[ThreadPoolExecutor] = None

    @property
    def executor(self) -> ThreadPoolExecutor:
        if self._executor is None:
            raise PrepareError('worker pool is not prepared')
        return self._executor

    async def prepare(self) -> None:
        self._executor = ThreadPoolExecutor(
            max_workers=self.threads, thread_name_prefix='aiocollapse')

    async def start(self) -> None:
        pass

    async def stop(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    async def health(self, ctx: Span) -> None:
        self.executor

    async def map(self, fn: Callable, items: Iterable) -> List:
        loop = asyncio.get_running_loop()
        return list(await asyncio.gather(
            *[loop.run_in_executor(self.executor, fn, item)
              for item in items]))

    async def call(self, fn: Callable, *args, **kwargs) -> Any:
        """Runs a blocking call off the event loop, outside the pool."""
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(None, partial(fn, *args, **kwargs))

    async def run_ensemble(self, config: RunConfig,
                           ctx: Optional[Span] = None) -> EnsembleStats:
        config.check_budget()
        chunks = plan_chunks(config)
        if ctx is None:
            parts = await self.map(partial(run_chunk, config), chunks)
        else:
            with ctx.new_child('ensemble', SPAN_KIND_WORK) as span:
                span.tag('trajectories', config.trajectories)
                span.tag('steps', config.steps)
                span.tag('chunks', len(chunks))
                span.tag('threads', self.threads)
                parts = await self.map(partial(run_chunk, config), chunks)
        return EnsembleStats.merge(parts)


class OutputDir(Component):
    """Output directory that refuses to overwrite files unless forced."""

    def __init__(self, path: str, force: bool = False) -> None:
        super().__init__()
        self.path = path
        self.force = force
        self.written: List[str] = []

    async def prepare(self) -> None:
        try:
            os.makedirs(self.path, exist_ok=True)
        except OSError as e:
            raise PrepareError('cannot create output directory %s: %s'
                               % (self.path, e))
        if not os.access(self.path, os.W_OK):
            raise PrepareError('output directory %s is not writable'
                               % self.path)

    async def start(self) -> None:
        pass

    async def stop(self) -> None:
        pass

    async def health(self, ctx: Span) -> None:
        if not os.access(self.path, os.W_OK):
            raise PrepareError('output directory %s is not writable'
                               % self.path)

    def path_for(self, name: str) -> str:
        return os.path.join(self.path, name)

    def claim(self, *names: str) -> None:
        """Fails early if any of ``names`` would be overwritten."""
        if self.force:
            return
        for name in names:
            path = self.path_for(name)
            if os.path.exists(path):
                raise OutputExistsError('%s exists, use --force to '
                                        'overwrite it' % path)

    def open(self, name: str) -> IO[str]:
        self.claim(name)
        path = self.path_for(name)
        self.written.append(path)
        return open(path, 'w', encoding='UTF-8', newline='')


class Application(object):
    def __init__(self) -> None:
        super(Application, self).__init__()
        self._components: Dict[str, Component] = {}
        self._stop_deps: dict = {}
        self._stopped: list = []
        self.tracer: Tracer = Tracer()

    def add(self, name: str, comp: Component,
            stop_after: Optional[list] = None):
        if not isinstance(comp, Component):
            raise UserWarning()
        if name in self._components:
            raise UserWarning()
        if stop_after:
            for cmp in stop_after:
                if cmp not in self._components:
                    raise UserWarning('Unknown component %s' % cmp)
        comp.app = self
        self._components[name] = comp
        self._stop_deps[name] = stop_after

    def __getattr__(self, item: str) -> Component:
        if item.startswith('_') or item not in self._components:
            raise AttributeError(item)
        return self._components[item]

    def log_err(self, err):
        if not err:
            return
        if isinstance(err, BaseException):
            logger.exception(err)
        else:
            logger.error(err)

    def log_warn(self, warn):
        logger.warning(warn)

    def log_info(self, info):
        logger.info(info)

    def log_debug(self, debug):
        logger.debug(debug)

    def setup_logging(self, level: int = logging.INFO,
                      tracer_driver: Optional[str] = None,
                      tracer_addr: Optional[str] = None,
                      tracer_name: Optional[str] = None,
                      tracer_sample_rate: float = 1.0,
                      tracer_send_interval: float = 3,
                      on_span_finish: Optional[Callable] = None):
        if not logger.handlers:
            handler = logging.StreamHandler()
            handler.setFormatter(logging.Formatter(
                '%(asctime)s %(levelname)s %(name)s: %(message)s'))
            logger.addHandler(handler)
        logger.setLevel(level)
        if tracer_driver:
            self.tracer.configure(tracer_driver, tracer_name or 'aiocollapse',
                                  tracer_addr, tracer_sample_rate,
                                  tracer_send_interval)
        self.tracer.on_span_finish = on_span_finish

    def run(self, main: Main, name: str = 'main') -> int:
        """Runs ``main`` between prepare and shutdown; returns an exit code.

        Configuration problems map to 2 and exhausted budgets to 3;
        otherwise the code ``main`` returns is passed through.
        """
        try:
            return asyncio.run(self._run(main, name))
        except (ConfigError, OutputExistsError, PrepareError,
                DomainError, DimensionError) as e:
            self.log_err(str(e))
            return EXIT_CONFIG
        except BudgetError as e:
            self.log_err(str(e))
            return EXIT_BUDGET
        except KeyboardInterrupt:  # pragma: no cover
            return EXIT_FAILED

    async def _run(self, main: Main, name: str) -> int:
        try:
            await self.run_prepare()
            with self.tracer.new_trace() as span:
                span.name(name)
                span.kind(SPAN_KIND_COMMAND)
                code = await main(span)
                span.tag('exit_code', code)
            return code
        finally:
            await self.run_shutdown()

    async def run_prepare(self):
        self.log_debug('Prepare for start')

        await asyncio.gather(*[comp.prepare()
                               for comp in self._components.values()])
        await self.tracer.start()

        self.log_debug('Starting...')
        await asyncio.gather(*[comp.start()
                               for comp in self._components.values()])

    async def run_shutdown(self):
        self.log_debug('Shutting down...')
        for comp_name in self._components:
            await self._stop_comp(comp_name)
        await self._shutdown_tracer()

    async def _shutdown_tracer(self):
        if self.tracer.tracer is not None:
            self.log_debug("Shutting down tracer")
        await self.tracer.close()

    async def _stop_comp(self, name):
        if name in self._stopped:
            return
        if name in self._stop_deps and self._stop_deps[name]:
            for dep_name in self._stop_deps[name]:
                await self._stop_comp(dep_name)
        await self._components[name].stop()
        self._stopped.append(name)

    async def health(self, ctx: Optional[Span] = None
                     ) -> Dict[str, Optional[BaseException]]:
        if ctx is None:
            with self.tracer.new_trace() as span:
                span.name('healthcheck')
                return await self._health(span)
        else:
            return await self._health(ctx)

    async def _health(self, ctx: Span) -> Dict[str, Optional[BaseException]]:
        result: Dict[str, Optional[BaseException]] = {}
        for name, cmp in self._components.items():
            try:
                await cmp.health(ctx)
                result[name] = None
            except BaseException as err:
                result[name] = err
        return result
