"""Command and check spans with optional Zipkin export.

A command opens one root span; ensemble work and every battery check hang
below it. Spans always keep their tags and timings in memory so callers can
inspect them; the finished tree is exported only when a Zipkin collector is
configured.
"""
import asyncio
import logging
import time
from typing import Any, Callable, Dict, List, Optional, Tuple

import aiozipkin as az
import aiozipkin.span as azs
import aiozipkin.utils as azu
from yarl import URL

from .misc import mask_url_pwd

logger = logging.getLogger('aiocollapse.tracer')

DRIVER_ZIPKIN = 'zipkin'

SPAN_KIND_COMMAND = 'command'
SPAN_KIND_CHECK = 'check'
SPAN_KIND_WORK = 'work'

ERROR = 'error'

ZIPKIN_PATH = '/api/v2/spans'


def _micros(ts: Optional[float] = None) -> int:
    return int((time.time() if ts is None else ts) * 1e6)


class Span:
    """One timed unit of work.

    Setters return the span so tags can be chained. Children inherit the
    trace, the sampling decision and the skip flag of their parent.
    """

    def __init__(self, tracer: Optional['Tracer'], trace_id: str,
                 id: Optional[str] = None, parent_id: Optional[str] = None,
                 sampled: Optional[bool] = None,
                 debug: Optional[bool] = False, skip: bool = False,
                 parent: Optional['Span'] = None) -> None:
        self.tracer = tracer
        self.trace_id = trace_id
        self.id = id
        self.parent_id = parent_id
        self.sampled = sampled
        self.debug = debug
        self.parent = parent
        self._name: Optional[str] = None
        self._kind: Optional[str] = None
        self._tags: Dict[str, str] = {}
        self._annotations: List[Tuple[str, int]] = []
        self._window: List[Optional[int]] = [None, None]
        self._skip = skip
        self._exception: Optional[BaseException] = None
        self._children: List['Span'] = []
        self._exported = False

    @property
    def tags(self) -> Dict[str, str]:
        return dict(self._tags)

    @property
    def children(self) -> List['Span']:
        return list(self._children)

    @property
    def duration_ms(self) -> Optional[float]:
        started, finished = self._window
        if started is None or finished is None:
            return None
        return (finished - started) / 1000.

    def skip(self) -> None:
        """Exclude this span and everything below it from export."""
        self._skip = True
        for child in self._children:
            child.skip()

    def new_child(self, name: Optional[str] = None,
                  kind: Optional[str] = None) -> 'Span':
        child = Span(self.tracer, self.trace_id,
                     id=azu.generate_random_64bit_string(),
                     parent_id=self.id, sampled=self.sampled,
                     debug=self.debug, skip=self._skip, parent=self)
        if name is not None:
            child.name(name)
        if kind:
            child.kind(kind)
        self._children.append(child)
        return child

    def start(self, ts: Optional[float] = None) -> 'Span':
        self._window[0] = _micros(ts)
        return self

    def finish(self, ts: Optional[float] = None,
               exception: Optional[BaseException] = None) -> 'Span':
        self._window[1] = _micros(ts)
        self._exception = exception
        if exception is not None:
            self.tag(ERROR, 'true')
            self.tag('error.message', str(exception))
        logger.debug('%s', self)

        if self.tracer is not None:
            if self.parent is None:
                self.tracer.export(self)
            self.tracer.notify(self)
        return self

    def tag(self, key: str, value: Any) -> 'Span':
        self._tags[key] = str(value)
        return self

    def record_check(self, passed: bool, max_abs_z: float,
                     insufficient: bool = False) -> 'Span':
        """Tag the outcome of a statistical check."""
        self.tag('passed', passed)
        self.tag('max_abs_z', '%.6g' % max_abs_z)
        if insufficient:
            self.tag('insufficient', True)
        return self

    def annotate(self, value: str, ts: Optional[float] = None) -> 'Span':
        self._annotations.append((value, _micros(ts)))
        return self

    def kind(self, span_kind: str) -> 'Span':
        self._kind = span_kind
        return self

    def name(self, span_name: str) -> 'Span':
        self._name = span_name
        return self

    def __enter__(self) -> 'Span':
        return self.start()

    def __exit__(self, exception_type, exception_value, traceback) -> None:
        self.finish(exception=exception_value)

    def to_zipkin(self, tracer: az.Tracer) -> azs.SpanAbc:
        """Replay the recorded span into an aiozipkin span."""
        started, finished = self._window
        if started is None or finished is None:
            raise UserWarning('span %s was not finished' % self._name)
        span = tracer.to_span(azs.TraceContext(
            trace_id=self.trace_id, parent_id=self.parent_id,
            span_id=self.id, sampled=self.sampled and not self._skip,
            debug=self.debug, shared=False))
        span.start(ts=started / 1e6)
        if self._name:
            span.name(self._name)
        if self._kind:
            span.tag('span_kind', self._kind)
        for key, value in self._tags.items():
            span.tag(key, value)
        for value, stamp in self._annotations:
            span.annotate(value, stamp / 1e6)
        span.finish(ts=finished / 1e6, exception=self._exception)
        return span

    def __str__(self) -> str:
        duration = self.duration_ms
        if duration is None:
            return 'Span: %s' % self._name
        return 'Span: %s in %s ms' % (self._name, duration)


class Tracer:
    """Creates spans; exports finished root spans when Zipkin is set up."""

    def __init__(self) -> None:
        self.tracer: Optional[az.Tracer] = None
        self.tracer_driver: Optional[str] = None
        self.default_sampled: Optional[bool] = None
        self.default_debug: Optional[bool] = None
        self.on_span_finish: Optional[Callable] = None
        self._settings: Optional[dict] = None

    def new_trace(self, sampled: Optional[bool] = None,
                  debug: Optional[bool] = None,
                  skip: bool = False) -> Span:
        return Span(
            self, azu.generate_random_128bit_string(),
            id=azu.generate_random_64bit_string(),
            sampled=self.default_sampled if sampled is None else sampled,
            debug=self.default_debug if debug is None else debug,
            skip=skip)

    def export(self, root: Span) -> None:
        """Send ``root`` and its finished descendants, once."""
        pending = [root]
        while pending:
            span = pending.pop()
            pending.extend(reversed(span.children))
            if span._exported:
                continue
            span._exported = True
            if self.tracer is None or span._skip:
                continue
            if span._window[0] is None or span._window[1] is None:
                continue
            span.to_zipkin(self.tracer)

    def notify(self, span: Span) -> None:
        if self.on_span_finish is None:
            return
        call = self.on_span_finish(span)
        if not asyncio.iscoroutine(call):
            return
        try:
            asyncio.get_running_loop().create_task(call)
        except RuntimeError:
            call.close()
            logger.warning('on_span_finish coroutine dropped, no running '
                           'event loop')

    def configure(self, driver: str, name: str, addr: str,
                  sample_rate: float = 1.0, send_interval: float = 3,
                  default_sampled: bool = True,
                  default_debug: bool = False) -> None:
        if driver != DRIVER_ZIPKIN:
            raise UserWarning('Unsupported tracer driver %r' % driver)
        self.tracer_driver = driver
        self.default_sampled = default_sampled
        self.default_debug = default_debug
        self._settings = {'name': name, 'addr': addr,
                          'sample_rate': sample_rate,
                          'send_interval': send_interval}

    async def start(self) -> None:
        if self._settings is None or self.tracer is not None:
            return
        settings = self._settings
        url = URL(settings['addr']).with_path(ZIPKIN_PATH)
        logger.info('Exporting spans to %s', mask_url_pwd(str(url)))
        self.tracer = await az.create(
            str(url), az.create_endpoint(settings['name']),
            sample_rate=settings['sample_rate'],
            send_interval=settings['send_interval'])

    async def close(self) -> None:
        if self.tracer is not None:
            await self.tracer.close()
            self.tracer = None
