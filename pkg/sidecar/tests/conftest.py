import threading
import time

import pytest
import uvicorn

from qeleak_sidecar.app import create_app
from qeleak_sidecar.config import ServiceConfig


@pytest.fixture(scope="session")
def sidecar_url():
    """A real uvicorn server on an ephemeral port (builtin backends)."""
    config = ServiceConfig(max_batch=64)
    app = create_app(config)
    uv_config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(uv_config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("sidecar did not start within 10s")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)
