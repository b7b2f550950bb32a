import textwrap

import aiohttp.web
import numpy as np
import pytest
from aiohttp.test_utils import TestServer

from aiocollapse.app import Application


@pytest.fixture
async def tracer_server():
    """Local Zipkin collector: (host, port, received span batches)."""
    requests = []

    async def tracer_handle(request):
        requests.append(await request.json())
        return aiohttp.web.Response(text='', status=202)

    app = aiohttp.web.Application()
    app.router.add_post('/api/v2/spans', tracer_handle)
    server = TestServer(app, host='127.0.0.1', port=None)
    await server.start_server()

    yield ('127.0.0.1', server.port, requests)

    await server.close()


@pytest.fixture(params=["with_tracer", "without_tracer"])
def app(request, tracer_server):
    app = Application()
    if request.param == 'with_tracer':
        app.setup_logging(tracer_driver='zipkin',
                          tracer_addr='http://%s:%s/' % (tracer_server[0],
                                                         tracer_server[1]),
                          tracer_name='test',
                          tracer_send_interval=0.01)
    return app


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


@pytest.fixture
def write_config(tmp_path):
    def go(text: str, name: str = 'run.ini') -> str:
        path = tmp_path / name
        path.write_text(textwrap.dedent(text), encoding='UTF-8')
        return str(path)

    return go
