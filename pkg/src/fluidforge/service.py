"""Streaming session service for interactive steering.

One simulation thread per session advances the hybrid rollout and, on a
client stroke, falls back to MPM and runs a 100-step control episode before
resuming.  Frames fan out through per-client bounded queues with a
drop-oldest policy, so a slow client can never stall the simulation; state
messages (mode changes, control start, errors) ride an unbounded reliable
queue.  Frame payloads are base64-embedded little-endian f32 positions.
"""

from __future__ import annotations

import base64
import json
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .control import (CONTROL_STEPS, BaselineController, ControllerInput,
                      fit_sketch_from_stroke)
from .core import (MODE_CONTROL, MODE_NAMES, ScenarioConfig, list_scenarios,
                   scenario_preset)
from .errors import FluidForgeError
from .hybrid import HybridConfig, HybridEngine
from .mpm import mpm_step
from .neural import load_weights

FRAME_QUEUE_DEPTH = 8
DEFAULT_FRAME_RATE = 30.0  # frame messages per second per client

IDLE = "IDLE"
RUNNING_HYBRID = "RUNNING_HYBRID"
CONTROLLING = "CONTROLLING"


@dataclass
class _Client:
    frames: deque = field(default_factory=lambda: deque(maxlen=FRAME_QUEUE_DEPTH))
    events: deque = field(default_factory=deque)
    last_sent_index: int = -1
    last_sent_at: float = 0.0


class Session:
    """Owns one simulation thread plus its client fan-out queues."""

    def __init__(self, config: ScenarioConfig, hconfig: HybridConfig,
                 controller_name: str = "baseline", max_steps: int | None = None,
                 step_delay: float = 0.0):
        self.session_id = uuid.uuid4().hex[:12]
        self.config = config
        self.hconfig = hconfig
        self.controller_name = controller_name
        self.engine = HybridEngine(config, hconfig)
        self.mode = IDLE
        self.frame_index = -1
        self.max_steps = max_steps
        self.step_delay = step_delay
        self.paused = False
        self.commands: deque = deque()
        self.clients: dict[str, _Client] = {}
        self.lock = threading.Lock()
        self.stop_event = threading.Event()
        self.thread = threading.Thread(target=self._run, daemon=True)
        self._control = None  # (controller, sketch, fine_steps_done)

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        self.mode = RUNNING_HYBRID
        self._announce_mode()
        self.thread.start()

    def stop(self) -> None:
        self.stop_event.set()
        if self.thread.is_alive():
            self.thread.join(timeout=5.0)

    def attach_client(self) -> str:
        client_id = uuid.uuid4().hex[:8]
        with self.lock:
            self.clients[client_id] = _Client()
        return client_id

    def detach_client(self, client_id: str) -> None:
        with self.lock:
            self.clients.pop(client_id, None)

    # -- client -> session ----------------------------------------------------

    def submit(self, message: dict) -> None:
        self.commands.append(message)

    # -- session -> clients ---------------------------------------------------

    def _broadcast_event(self, payload: dict) -> None:
        with self.lock:
            for client in self.clients.values():
                client.events.append(payload)

    def _broadcast_frame(self, payload: dict) -> None:
        with self.lock:
            for client in self.clients.values():
                client.frames.append(payload)  # drop-oldest by maxlen

    def _announce_mode(self) -> None:
        self._broadcast_event({"type": "mode_change", "index": self.frame_index,
                               "mode": self.mode})

    # -- simulation thread ----------------------------------------------------

    def _handle_command(self, message: dict) -> None:
        kind = message.get("type")
        if kind == "stroke":
            if self.mode == CONTROLLING:
                self._broadcast_event({"type": "error",
                                       "detail": "controller busy"})
                return
            try:
                points = np.asarray(message["points"], dtype=float)
                sketch = fit_sketch_from_stroke(points)
            except (KeyError, ValueError, FluidForgeError) as exc:
                self._broadcast_event({"type": "error", "detail": str(exc)})
                return
            controller = BaselineController()
            self._control = {"controller": controller, "sketch": sketch,
                             "done": 0}
            self.mode = CONTROLLING
            self._broadcast_event({"type": "control_started",
                                   "index": self.frame_index,
                                   "sketch": sketch.to_dict()})
            self._announce_mode()
        elif kind == "set_rc":
            try:
                value = float(message["value"])
            except (KeyError, TypeError, ValueError):
                self._broadcast_event({"type": "error", "detail": "bad set_rc"})
                return
            self.hconfig = replace(self.hconfig, fallback_threshold=value)
            self.engine.hconfig = self.hconfig
        elif kind == "pause":
            self.paused = True
        elif kind == "resume":
            self.paused = False
        elif kind == "reset":
            self.engine = HybridEngine(self.config, self.hconfig)
            self._control = None
            self.mode = RUNNING_HYBRID
            self._announce_mode()
        else:
            self._broadcast_event({"type": "error",
                                   "detail": f"unknown message type {kind!r}"})

    def _control_coarse_step(self) -> float:
        """time_stride controlled MPM substeps; returns wall seconds."""
        state = self._control
        engine = self.engine
        started = time.perf_counter()
        v_before = engine.particles.velocities.copy()
        for _ in range(self.hconfig.reduction.time_stride):
            if state["done"] >= CONTROL_STEPS:
                break
            request = ControllerInput(
                position_history=np.stack(engine.history),
                velocities=engine.particles.velocities.copy(),
                sketch=state["sketch"], control_step_index=state["done"],
                total_steps=CONTROL_STEPS, dt=self.config.dt,
                gravity=self.config.gravity)
            row = np.asarray(state["controller"].evaluate(request), dtype=float)
            if not np.isfinite(row).all():
                self._broadcast_event({"type": "error",
                                       "detail": "controller produced non-finite field"})
                state["done"] = CONTROL_STEPS
                break
            engine.particles = mpm_step(engine.particles, self.config,
                                        external_accel=row)
            state["done"] += 1
        elapsed = time.perf_counter() - started
        accel = (engine.particles.velocities - v_before) / engine.coarse_dt
        engine.window.push(accel)
        engine.history.append(engine.particles.positions.copy())
        engine.mode_log.append(MODE_CONTROL)
        engine.timing_log.append(elapsed)
        engine.frames.append(engine.particles.positions.copy())
        engine.frame_velocities.append(engine.particles.velocities.copy())
        if state["done"] >= CONTROL_STEPS:
            self._control = None
            self.mode = RUNNING_HYBRID
            self._announce_mode()
        return elapsed

    def _run(self) -> None:
        while not self.stop_event.is_set():
            if self.max_steps is not None and self.frame_index + 1 >= self.max_steps:
                break
            while self.commands:
                self._handle_command(self.commands.popleft())
            if self.paused:
                time.sleep(0.01)
                continue
            if self.mode == CONTROLLING:
                latency = self._control_coarse_step()
                mode_name = "CONTROL"
            else:
                previous = self.mode
                self.engine.coarse_step()
                latency = self.engine.timing_log[-1]
                mode_name = MODE_NAMES[self.engine.mode_log[-1]]
                if previous != RUNNING_HYBRID:
                    self.mode = RUNNING_HYBRID
                    self._announce_mode()
            self.frame_index += 1
            positions = self.engine.particles.positions.astype("<f4")
            self._broadcast_frame({
                "type": "frame", "index": self.frame_index, "mode": mode_name,
                "latency_ms": latency * 1000.0,
                "positions": base64.b64encode(positions.tobytes()).decode(),
                "count": int(positions.shape[0]), "dim": int(positions.shape[1]),
            })
            if self.step_delay:
                time.sleep(self.step_delay)
        self.stop_event.set()


class SessionRegistry:
    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.session_id] = session

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id)

    def shutdown(self) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            session.stop()


def build_app(frame_rate: float = DEFAULT_FRAME_RATE,
              frontend_dir: str | None = None):
    """FastAPI app exposing health, scenario listing, session create/stream.

    When ``frontend_dir`` points at a built studio (index.html + dist/),
    it is served at the root path.
    """
    import asyncio
    from contextlib import asynccontextmanager

    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    registry = SessionRegistry()

    @asynccontextmanager
    async def lifespan(app):
        yield
        registry.shutdown()

    app = FastAPI(title="fluidforge", lifespan=lifespan)
    app.state.registry = registry

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/scenarios")
    def scenarios():
        return {"scenarios": list_scenarios()}

    @app.post("/sessions")
    def create_session(body: dict):
        name = body.get("scenario", "water2d-desk")
        config = scenario_preset(name)
        if "steps" in body:
            config = replace(config, total_steps=int(body["steps"]))
        weights = None
        if body.get("weights"):
            weights = load_weights(body["weights"])
        hconfig = HybridConfig(
            fallback_threshold=float(body.get("rc", 0.8)),
            fast_path=weights)
        session = Session(config, hconfig,
                          controller_name=body.get("controller", "baseline"),
                          max_steps=body.get("max_steps"),
                          step_delay=float(body.get("step_delay", 0.0)))
        registry.create(session)
        session.start()
        return {"session_id": session.session_id, "scenario": name,
                "particles": int(session.engine.particles.n),
                "coarse_dt": session.engine.coarse_dt}

    @app.websocket_route("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket):
        session_id = websocket.path_params["session_id"]
        session = registry.get(session_id)
        if session is None:
            await websocket.close(code=4404)
            return
        await websocket.accept()
        client_id = session.attach_client()
        client = session.clients[client_id]
        min_gap = 1.0 / frame_rate

        async def pump_outgoing():
            while True:
                sent = False
                while client.events:
                    await websocket.send_text(json.dumps(client.events.popleft()))
                    sent = True
                now = time.monotonic()
                if client.frames and now - client.last_sent_at >= min_gap:
                    frame = client.frames.pop()  # newest; older ones coalesce
                    client.frames.clear()
                    if frame["index"] > client.last_sent_index:
                        client.last_sent_index = frame["index"]
                        client.last_sent_at = now
                        await websocket.send_text(json.dumps(frame))
                        sent = True
                if not sent:
                    await asyncio.sleep(0.004)

        pump = asyncio.ensure_future(pump_outgoing())
        try:
            while True:
                raw = await websocket.receive_text()
                try:
                    message = json.loads(raw)
                    if not isinstance(message, dict):
                        raise ValueError("message must be an object")
                except ValueError as exc:
                    client.events.append({"type": "error", "detail": str(exc)})
                    continue
                session.submit(message)
        except WebSocketDisconnect:
            pass
        finally:
            pump.cancel()
            session.detach_client(client_id)

    if frontend_dir is not None:
        from starlette.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="studio")

    return app


def decode_frame_positions(frame: dict) -> np.ndarray:
    """Inverse of the frame payload encoding (for clients and tests)."""
    raw = base64.b64decode(frame["positions"])
    return np.frombuffer(raw, dtype="<f4").reshape(frame["count"], frame["dim"])
