"""HTTP and TCP front doors over one shared engine.

Both transports carry the same newline-delimited JSON documents: the
TCP server reads one document per line, HTTP takes one per POST /probe
body.  Validation stays inside the engine so a malformed document gets
a coded error response instead of a transport-level failure, and the
connection (or HTTP session) keeps serving.
"""

from __future__ import annotations

import json
import socketserver
import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..config import build_engine, load_config
from ..engine import ProbeEngine
from ..relational.database import MAIN_BRANCH, BranchCatalog
from ..workload import load_dataset
from .models import HealthResponse, WireResponse


def create_app(engine: ProbeEngine) -> FastAPI:
    app = FastAPI(title="probekernel", version="0.1.0")
    app.state.engine = engine

    @app.post("/probe", response_model=WireResponse)
    async def probe(request: Request):
        raw = await request.body()
        return JSONResponse(engine.handle_wire(raw))

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        catalog = BranchCatalog(engine.db, MAIN_BRANCH)
        return HealthResponse(
            status="ok",
            tables=len(catalog.tables()),
            branches=len(engine.db.branches),
        )

    return app


class _ProbeHandler(socketserver.StreamRequestHandler):
    def handle(self):
        server = self.server  # type: ignore[assignment]
        for line in self.rfile:
            line = line.strip()
            if not line:
                continue
            server.track(+1)
            try:
                response = server.engine.handle_wire(line)
                payload = json.dumps(response, separators=(",", ":")) + "\n"
                self.wfile.write(payload.encode("utf-8"))
                self.wfile.flush()
            finally:
                server.track(-1)


class ProbeTCPServer(socketserver.ThreadingTCPServer):
    """One worker thread per connection.

    Threads are daemonic so an idle connection can't hold shutdown
    hostage; stop() instead drains probes that are mid-flight.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, engine: ProbeEngine):
        super().__init__(address, _ProbeHandler)
        self.engine = engine
        self._inflight = 0
        self._inflight_cv = threading.Condition()

    def track(self, delta: int):
        with self._inflight_cv:
            self._inflight += delta
            if self._inflight == 0:
                self._inflight_cv.notify_all()

    def stop(self, drain_timeout: float = 10.0):
        """Stop accepting, wait for in-flight probes, release the port."""
        self.shutdown()
        with self._inflight_cv:
            self._inflight_cv.wait_for(
                lambda: self._inflight == 0, timeout=drain_timeout
            )
        self.server_close()


def start_tcp_server(engine: ProbeEngine, host: str, port: int) -> ProbeTCPServer:
    """Bind and serve on a background thread; caller owns stop()."""
    server = ProbeTCPServer((host, port), engine)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


def serve(config: dict):
    """Run both transports until interrupted.  Blocking."""
    import uvicorn

    cfg = load_config(None) if config is None else dict(config)
    if cfg.get("data_dir") is None:
        raise ValueError("serve needs data_dir in the config")
    db = load_dataset(cfg["data_dir"])
    engine = build_engine(db, cfg)
    app = create_app(engine)
    tcp = start_tcp_server(engine, cfg.get("host", "127.0.0.1"), cfg.get("tcp_port", 8724))
    try:
        uvicorn.run(app, host=cfg.get("host", "127.0.0.1"), port=cfg.get("port", 8723))
    finally:
        tcp.stop()
