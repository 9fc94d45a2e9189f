"""Head-end HTTP service: JSON request/response plus a server-sent
event stream, bound to a local socket.

The exact wire schema lives in docs/api.md. Handlers never touch the
simulation directly: every operation is submitted to the runner's
command queue and executed in the single simulation thread, which also
paces simulated time against the wall clock (time_scale sim-seconds per
wall second). The event stream carries every reading/anomaly/sweep
event with a monotonically increasing `seq`; reconnecting clients
resume with Last-Event-ID (or ?last_event_id=) and the buffered tail is
replayed without gaps or duplicates.
"""

from __future__ import annotations

import json
import queue
import re
import signal
import threading
import time
import uuid
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .billing import NoBaselineError, Tariff, bill_period, flat_tariff
from .headend import NotRegisteredError
from .meter import Direction
from .scenario import World

COMMAND_TIMEOUT = 60.0  # wall seconds an API handler waits on the sim thread
SWEEP_TIMEOUT = 3600.0
SSE_KEEPALIVE = 1.0


class EventHub:
    """Fan-out of sequence-numbered events with a bounded replay buffer."""

    def __init__(self, buffer_size: int = 100_000):
        self._buf: deque = deque(maxlen=buffer_size)
        self._seq = 0
        self._lock = threading.Lock()
        self._subs: list[queue.Queue] = []

    def publish(self, payload: dict) -> None:
        with self._lock:
            self._seq += 1
            event = {"seq": self._seq, **payload}
            self._buf.append(event)
            for q in self._subs:
                q.put(event)

    def subscribe(self, last_seq: int | None = None):
        """Returns (queue, replay): replay holds the buffered events
        after last_seq; anything newer lands on the queue. Atomic, so
        the two never overlap or gap."""
        q: queue.Queue = queue.Queue()
        with self._lock:
            replay = ([e for e in self._buf if e["seq"] > last_seq]
                      if last_seq is not None else [])
            self._subs.append(q)
        return q, replay

    def unsubscribe(self, q) -> None:
        with self._lock:
            try:
                self._subs.remove(q)
            except ValueError:
                pass

    @property
    def last_seq(self) -> int:
        return self._seq


class SimRunner(threading.Thread):
    """Owns the simulation: paces sim time against the wall clock and
    executes queued commands between slices."""

    def __init__(self, world: World, time_scale: float = 1.0,
                 tick: float = 0.005):
        super().__init__(name="sim-runner", daemon=True)
        self.world = world
        self.time_scale = time_scale
        self.tick = tick
        self._cmds: queue.Queue = queue.Queue()
        self._halt = threading.Event()

    def submit(self, fn) -> None:
        self._cmds.put(fn)

    def stop(self) -> None:
        self._halt.set()

    def run(self) -> None:
        sim = self.world.sim
        start_wall = time.monotonic()
        start_sim = sim.now
        while not self._halt.is_set():
            while True:
                try:
                    fn = self._cmds.get_nowait()
                except queue.Empty:
                    break
                fn()
            target = start_sim + (time.monotonic() - start_wall) * self.time_scale
            if target > sim.now:
                sim.run_until(target)
            time.sleep(self.tick)

    def call(self, fn, timeout: float = COMMAND_TIMEOUT):
        """Run fn() on the sim thread and return its result (or raise
        its exception)."""
        done = threading.Event()
        box: dict = {}

        def cmd():
            try:
                box["value"] = fn()
            except Exception as e:  # surfaced to the API caller
                box["error"] = e
            done.set()

        self.submit(cmd)
        if not done.wait(timeout):
            raise TimeoutError("simulation command timed out")
        if "error" in box:
            raise box["error"]
        return box["value"]

    def call_async(self, start_fn, timeout: float):
        """start_fn(resolve) runs on the sim thread and arranges for
        resolve(value) to be called later (e.g. from a poll callback)."""
        done = threading.Event()
        box: dict = {}

        def resolve(value):
            box["value"] = value
            done.set()

        def cmd():
            try:
                start_fn(resolve)
            except Exception as e:
                box["error"] = e
                done.set()

        self.submit(cmd)
        if not done.wait(timeout):
            raise TimeoutError("simulation command timed out")
        if "error" in box:
            raise box["error"]
        return box["value"]


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


class _Api:
    """Route implementations, shared by all handler threads."""

    def __init__(self, world: World, runner: SimRunner, hub: EventHub,
                 tariff: Tariff):
        self.world = world
        self.runner = runner
        self.hub = hub
        self.tariff = tariff

    # every route runs on the sim thread via runner.call/call_async

    def health(self, q):
        w = self.world
        return self.runner.call(lambda: {
            "status": "ok",
            "sim_time": w.sim.now,
            "meters": len(w.headend.registry),
            "seed": w.cfg.seed,
            "link": w.cfg.link,
            "records": w.headend.store.record_count(),
            "last_event_seq": self.hub.last_seq,
        })

    def meters(self, q):
        offset = int(q.get("offset", ["0"])[0])
        limit = min(int(q.get("limit", ["1000"])[0]), 10_000)

        def fn():
            he = self.world.headend
            out = []
            for addr in list(he.registry)[offset:offset + limit]:
                last = he.store.last_record(addr)
                out.append({
                    "address": addr,
                    "address_hex": f"{addr:08x}",
                    "meter_constant_k": he.registry.k_of(addr),
                    "last_reading": last.to_dict() if last else None,
                    "tamper": bool(last and last.status_flags & 0x03),
                    "reachable": (False if addr in he.unreachable_marks
                                  else (True if last else None)),
                })
            return {"meters": out, "total": len(he.registry), "offset": offset}

        return self.runner.call(fn)

    def read(self, address: int):
        def start(resolve):
            self.world.headend.start_read(
                address, lambda _a, rec: resolve(rec))

        try:
            rec = self.runner.call_async(start, timeout=COMMAND_TIMEOUT)
        except NotRegisteredError as e:
            raise ApiError(404, "NOT_REGISTERED", str(e)) from None
        if rec is None:
            return {"result": "unreachable", "address": address,
                    "attempts": self.world.headend.policy.max_attempts}
        return {"result": "ok", "reading": rec.to_dict()}

    def history(self, address: int, q):
        t0 = float(q["start"][0]) if "start" in q else None
        t1 = float(q["end"][0]) if "end" in q else None

        def fn():
            he = self.world.headend
            if address not in he.registry:
                raise NotRegisteredError(address)
            return {"records": [r.to_dict()
                                for r in he.store.query_history(address, t0, t1)]}

        try:
            return self.runner.call(fn)
        except NotRegisteredError as e:
            raise ApiError(404, "NOT_REGISTERED", str(e)) from None

    def anomalies(self, q):
        limit = min(int(q.get("limit", ["1000"])[0]), 10_000)
        return self.runner.call(lambda: {
            "anomalies": [a.to_dict()
                          for a in self.world.headend.store.anomalies[-limit:]]})

    def bills(self, q):
        def fn():
            out = [b.to_dict() if hasattr(b, "to_dict") else b
                   for b in self.world.headend.store.bills]
            return {"bills": out}
        return self.runner.call(fn)

    def bill(self, address: int, body: dict):
        try:
            t0, t1 = float(body["start"]), float(body["end"])
        except (KeyError, TypeError, ValueError):
            raise ApiError(400, "BAD_REQUEST",
                           "body needs numeric 'start' and 'end'") from None

        def fn():
            he = self.world.headend
            if address not in he.registry:
                raise NotRegisteredError(address)
            b = bill_period(he.store, address, t0, t1, self.tariff)
            he.store.add_bill(b)
            return {"result": "ok", "bill": b.to_dict()}

        try:
            return self.runner.call(fn)
        except NotRegisteredError as e:
            raise ApiError(404, "NOT_REGISTERED", str(e)) from None
        except NoBaselineError as e:
            raise ApiError(409, "NO_BASELINE", str(e)) from None
        except ValueError as e:
            raise ApiError(400, "BAD_REQUEST", str(e)) from None

    def sweep(self, body: dict):
        wait = bool(body.get("wait"))
        if wait:
            def start(resolve):
                self.world.headend.start_sweep(done_cb=resolve)
            try:
                report = self.runner.call_async(start, timeout=SWEEP_TIMEOUT)
            except RuntimeError as e:
                raise ApiError(409, "SWEEP_RUNNING", str(e)) from None
            return {"result": "ok", "report": report.to_dict()}

        def fn():
            self.world.headend.start_sweep()
            return {"result": "started",
                    "meters": len(self.world.headend.registry)}

        try:
            return self.runner.call(fn)
        except RuntimeError as e:
            raise ApiError(409, "SWEEP_RUNNING", str(e)) from None

    def inject_tamper(self, address: int):
        """Simulation control (demo/test): a reverse disk pulse."""
        def fn():
            node = self.world.node_of(address)
            node.apply_pulse(Direction.REVERSE)
            return {"result": "ok", "address": address}

        try:
            return self.runner.call(fn)
        except KeyError:
            raise ApiError(404, "NOT_REGISTERED",
                           f"meter {address:#010x} is not registered") from None


_ROUTES = [
    ("GET", re.compile(r"^/api/health$"), "health_r"),
    ("GET", re.compile(r"^/api/meters$"), "meters_r"),
    ("POST", re.compile(r"^/api/meters/(\w+)/read$"), "read_r"),
    ("GET", re.compile(r"^/api/meters/(\w+)/history$"), "history_r"),
    ("POST", re.compile(r"^/api/meters/(\w+)/bill$"), "bill_r"),
    ("POST", re.compile(r"^/api/meters/(\w+)/tamper$"), "tamper_r"),
    ("GET", re.compile(r"^/api/anomalies$"), "anomalies_r"),
    ("GET", re.compile(r"^/api/bills$"), "bills_r"),
    ("POST", re.compile(r"^/api/sweep$"), "sweep_r"),
]


def _parse_address(text: str) -> int:
    try:
        return int(text, 16) if text.lower().startswith("0x") else int(text)
    except ValueError:
        raise ApiError(400, "BAD_REQUEST", f"bad address {text!r}") from None


class ApiHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "amrsim"

    # route targets --------------------------------------------------

    def health_r(self, m, q, body):
        return self.server.api.health(q)

    def meters_r(self, m, q, body):
        return self.server.api.meters(q)

    def read_r(self, m, q, body):
        return self.server.api.read(_parse_address(m.group(1)))

    def history_r(self, m, q, body):
        return self.server.api.history(_parse_address(m.group(1)), q)

    def bill_r(self, m, q, body):
        return self.server.api.bill(_parse_address(m.group(1)), body or {})

    def tamper_r(self, m, q, body):
        return self.server.api.inject_tamper(_parse_address(m.group(1)))

    def anomalies_r(self, m, q, body):
        return self.server.api.anomalies(q)

    def bills_r(self, m, q, body):
        return self.server.api.bills(q)

    def sweep_r(self, m, q, body):
        return self.server.api.sweep(body or {})

    # plumbing ---------------------------------------------------------

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send_json(self, status: int, obj: dict) -> None:
        data = json.dumps(obj).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _dispatch(self, method: str) -> None:
        parsed = urlparse(self.path)
        if method == "GET" and parsed.path == "/api/events":
            self._serve_events(parse_qs(parsed.query))
            return
        body = None
        if method == "POST":
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if raw:
                try:
                    body = json.loads(raw.decode())
                except (UnicodeDecodeError, json.JSONDecodeError):
                    self._send_json(400, {"error": {
                        "code": "BAD_REQUEST", "message": "body is not JSON"}})
                    return
        for want_method, pattern, target in _ROUTES:
            if want_method != method:
                continue
            m = pattern.match(parsed.path)
            if m is None:
                continue
            try:
                result = getattr(self, target)(m, parse_qs(parsed.query), body)
            except ApiError as e:
                self._send_json(e.status, {"error": {
                    "code": e.code, "message": str(e)}})
            except Exception as e:  # 5xx with a correlation id
                cid = uuid.uuid4().hex[:12]
                self._send_json(500, {"error": {
                    "code": "INTERNAL", "message": f"{type(e).__name__}: {e}",
                    "correlation_id": cid}})
            else:
                self._send_json(200, result)
            return
        self._send_json(404, {"error": {
            "code": "NOT_FOUND", "message": f"no route for {method} {parsed.path}"}})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers",
                         "Content-Type, Last-Event-ID")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def _serve_events(self, q) -> None:
        last = None
        if "last_event_id" in q:
            last = int(q["last_event_id"][0])
        elif self.headers.get("Last-Event-ID"):
            last = int(self.headers["Last-Event-ID"])
        hub: EventHub = self.server.api.hub
        sub, replay = hub.subscribe(last)
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            for event in replay:
                self._write_event(event)
            while not self.server.stopping.is_set():
                try:
                    event = sub.get(timeout=SSE_KEEPALIVE)
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                self._write_event(event)
        except (BrokenPipeError, ConnectionResetError):
            pass
        finally:
            hub.unsubscribe(sub)

    def _write_event(self, event: dict) -> None:
        data = json.dumps(event)
        self.wfile.write(f"id: {event['seq']}\ndata: {data}\n\n".encode())
        self.wfile.flush()


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, api: _Api):
        super().__init__(addr, ApiHandler)
        self.api = api
        self.stopping = threading.Event()


def start_service(world: World, host: str, port: int, *,
                  tariff: Tariff | None = None,
                  time_scale: float = 1.0) -> tuple[ApiServer, SimRunner]:
    """Wire up hub + runner + HTTP server and start the background
    threads. The caller owns shutdown (see run_service)."""
    hub = EventHub()
    world.headend.on_event = hub.publish
    runner = SimRunner(world, time_scale=time_scale)
    api = _Api(world, runner, hub, tariff or flat_tariff())
    server = ApiServer((host, port), api)
    runner.start()
    serve_thread = threading.Thread(target=server.serve_forever,
                                    name="http", daemon=True)
    server._serve_thread = serve_thread
    serve_thread.start()
    return server, runner


def stop_service(server: ApiServer, runner: SimRunner,
                 store=None, snapshot_path: str | None = None) -> None:
    server.stopping.set()
    server.shutdown()
    server._serve_thread.join(timeout=5)
    server.server_close()
    runner.stop()
    runner.join(timeout=5)
    if store is not None:
        store.flush()
        if snapshot_path:
            store.save_snapshot(snapshot_path)


def run_service(world: World, host: str, port: int, *, store=None,
                tariff: Tariff | None = None, time_scale: float = 1.0,
                snapshot_path: str | None = None) -> None:
    """Foreground mode for the CLI: serve until SIGINT/SIGTERM, then
    flush the store and exit cleanly."""
    server, runner = start_service(world, host, port, tariff=tariff,
                                   time_scale=time_scale)
    stop_flag = threading.Event()

    def on_signal(_sig, _frame):
        stop_flag.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    print(f"amrsim head-end listening on http://{host}:{port}"
          f" ({len(world.headend.registry)} meters, time_scale={time_scale})",
          flush=True)
    try:
        while not stop_flag.is_set():
            stop_flag.wait(0.2)
    finally:
        stop_service(server, runner, store=store, snapshot_path=snapshot_path)
        print("store flushed, bye", flush=True)
