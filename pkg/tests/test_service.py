import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from fluidforge.service import build_app, decode_frame_positions

CIRCLE = [[0.5 + 0.1 * np.cos(t), 0.55 + 0.1 * np.sin(t)]
          for t in np.linspace(0, 2 * np.pi, 40, endpoint=False)]
LINE = [[0.3, 0.3], [0.4, 0.4], [0.5, 0.5]]


@pytest.fixture
def client():
    app = build_app(frame_rate=1000.0)
    with TestClient(app) as cl:
        yield cl
    app.state.registry.shutdown()


def create_session(client, **body):
    payload = {"scenario": "freefall2d-desk", "step_delay": 0.003}
    payload.update(body)
    response = client.post("/sessions", json=payload)
    assert response.status_code == 200
    return response.json()


def collect(ws, want, timeout=15.0, stop=None):
    """Read messages until `want(msgs)` is satisfied or timeout."""
    messages = []
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        message = json.loads(ws.receive_text())
        messages.append(message)
        if stop is not None and stop(message):
            break
        if want is not None and want(messages):
            break
    return messages


class TestHttpSurface:
    def test_healthz(self, client):
        assert client.get("/healthz").json() == {"status": "ok"}

    def test_scenarios(self, client):
        names = client.get("/scenarios").json()["scenarios"]
        assert "water2d-desk" in names

    def test_create_session(self, client):
        info = create_session(client)
        assert info["particles"] > 0
        assert info["coarse_dt"] == pytest.approx(0.005)

    def test_unknown_session_socket_rejected(self, client):
        from starlette.websockets import WebSocketDisconnect
        with pytest.raises(WebSocketDisconnect):
            with client.websocket_connect("/sessions/nope/stream") as ws:
                ws.receive_text()


class TestFrameStream:
    def test_frames_monotone_and_decodable(self, client):
        info = create_session(client)
        with client.websocket_connect(f"/sessions/{info['session_id']}/stream") as ws:
            messages = collect(ws, lambda ms: sum(m["type"] == "frame" for m in ms) >= 10)
        frames = [m for m in messages if m["type"] == "frame"]
        indices = [f["index"] for f in frames]
        assert all(b > a for a, b in zip(indices, indices[1:]))
        positions = decode_frame_positions(frames[0])
        assert positions.shape == (info["particles"], 2)
        assert np.isfinite(positions).all()
        assert all(f["latency_ms"] > 0 for f in frames)

    def test_freefall_modes_all_neural(self, client):
        info = create_session(client)
        with client.websocket_connect(f"/sessions/{info['session_id']}/stream") as ws:
            messages = collect(ws, lambda ms: sum(m["type"] == "frame" for m in ms) >= 8)
        modes = {m["mode"] for m in messages if m["type"] == "frame"}
        assert modes == {"NEURAL"}


class TestControlCycle:
    def test_stroke_control_cycle(self, client):
        info = create_session(client)
        with client.websocket_connect(f"/sessions/{info['session_id']}/stream") as ws:
            collect(ws, lambda ms: any(m["type"] == "frame" for m in ms))
            ws.send_text(json.dumps({"type": "stroke", "points": LINE}))
            messages = collect(
                ws, None, timeout=30.0,
                stop=lambda m: (m["type"] == "mode_change"
                                and m["mode"] == "RUNNING_HYBRID"))
        started = [m for m in messages if m["type"] == "control_started"]
        assert len(started) == 1
        assert started[0]["sketch"]["kind"] == "arrow"
        control_frames = [m for m in messages
                          if m["type"] == "frame" and m["mode"] == "CONTROL"]
        assert control_frames, "no frames streamed during the control episode"
        mode_changes = [m["mode"] for m in messages if m["type"] == "mode_change"]
        assert mode_changes[:2] == ["CONTROLLING", "RUNNING_HYBRID"]

    def test_circle_stroke_fits_oval(self, client):
        info = create_session(client)
        with client.websocket_connect(f"/sessions/{info['session_id']}/stream") as ws:
            ws.send_text(json.dumps({"type": "stroke", "points": CIRCLE}))
            messages = collect(ws, lambda ms: any(m["type"] == "control_started"
                                                  for m in ms), timeout=20.0)
        sketch = next(m for m in messages if m["type"] == "control_started")["sketch"]
        assert sketch["kind"] == "oval"
        assert sketch["center"][0] == pytest.approx(0.5, abs=1e-6)

    def test_second_stroke_rejected_busy(self, client):
        info = create_session(client)
        with client.websocket_connect(f"/sessions/{info['session_id']}/stream") as ws:
            ws.send_text(json.dumps({"type": "stroke", "points": LINE}))
            collect(ws, lambda ms: any(m["type"] == "control_started" for m in ms),
                    timeout=20.0)
            ws.send_text(json.dumps({"type": "stroke", "points": LINE}))
            messages = collect(ws, lambda ms: any(m["type"] == "error" for m in ms),
                               timeout=20.0)
        errors = [m for m in messages if m["type"] == "error"]
        assert any("busy" in e["detail"] for e in errors)

    def test_state_machine_edges_only(self, client):
        info = create_session(client)
        with client.websocket_connect(f"/sessions/{info['session_id']}/stream") as ws:
            ws.send_text(json.dumps({"type": "stroke", "points": LINE}))
            messages = collect(
                ws, None, timeout=30.0,
                stop=lambda m: (m["type"] == "mode_change"
                                and m["mode"] == "RUNNING_HYBRID"))
        allowed = {("RUNNING_HYBRID", "CONTROLLING"),
                   ("CONTROLLING", "RUNNING_HYBRID")}
        changes = [m["mode"] for m in messages if m["type"] == "mode_change"]
        transitions = set(zip(changes, changes[1:]))
        assert transitions <= allowed


class TestRobustness:
    def test_malformed_message_keeps_session_alive(self, client):
        info = create_session(client)
        with client.websocket_connect(f"/sessions/{info['session_id']}/stream") as ws:
            ws.send_text("this is not json")
            messages = collect(ws, lambda ms: any(m["type"] == "error" for m in ms))
            after = collect(ws, lambda ms: any(m["type"] == "frame" for m in ms))
        assert any(m["type"] == "error" for m in messages + after)
        assert any(m["type"] == "frame" for m in after)

    def test_short_stroke_reports_error(self, client):
        info = create_session(client)
        with client.websocket_connect(f"/sessions/{info['session_id']}/stream") as ws:
            ws.send_text(json.dumps({"type": "stroke",
                                     "points": [[0.1, 0.1], [0.2, 0.2]]}))
            messages = collect(ws, lambda ms: any(m["type"] == "error" for m in ms))
        assert any("three points" in m["detail"] for m in messages
                   if m["type"] == "error")

    def test_set_rc_and_pause_resume(self, client):
        info = create_session(client)
        with client.websocket_connect(f"/sessions/{info['session_id']}/stream") as ws:
            ws.send_text(json.dumps({"type": "set_rc", "value": 0.5}))
            ws.send_text(json.dumps({"type": "pause"}))
            time.sleep(0.15)
            ws.send_text(json.dumps({"type": "resume"}))
            messages = collect(ws, lambda ms: sum(m["type"] == "frame" for m in ms) >= 3)
        assert sum(m["type"] == "frame" for m in messages) >= 3

    def test_session_stops_at_max_steps(self, client):
        info = create_session(client, max_steps=5, step_delay=0.0)
        session = client.app.state.registry.get(info["session_id"])
        deadline = time.monotonic() + 10.0
        while not session.stop_event.is_set() and time.monotonic() < deadline:
            time.sleep(0.01)
        assert session.frame_index + 1 <= 5
