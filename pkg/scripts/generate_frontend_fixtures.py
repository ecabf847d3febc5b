"""Regenerate the studio test fixtures.

Emits two files under frontend/tests/fixtures/:
  strokes.json     canvas-space strokes with the sketch parameters the
                   engine fits after canvas->domain mapping
  transcript.json  a recorded message stream from a real session driven
                   through the stroke/control cycle

Run from the repository root:  python3 scripts/generate_frontend_fixtures.py
"""

import json
import time
from pathlib import Path

import numpy as np

from fluidforge.control import fit_sketch_from_stroke

CANVAS = {"width": 640, "height": 640}
OUT_DIR = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"


def canvas_to_domain(points):
    pts = np.asarray(points, dtype=float)
    x = pts[:, 0] / (CANVAS["width"] - 1)
    y = 1.0 - pts[:, 1] / (CANVAS["height"] - 1)
    return np.stack([x, y], axis=1)


def stroke_fixtures():
    rng = np.random.default_rng(12)
    strokes = {}
    theta = np.linspace(0, 2 * np.pi, 60, endpoint=False)
    strokes["circle"] = np.stack([320 + 90 * np.cos(theta),
                                  320 + 90 * np.sin(theta)], axis=1)
    t = np.linspace(0, 1, 25)
    strokes["diagonal"] = np.stack([80 + 400 * t, 520 - 380 * t], axis=1)
    wobble = np.stack([100 + 380 * t, 300 + 25 * np.sin(9 * t)], axis=1)
    strokes["wobbly"] = wobble
    blob = np.stack([320 + 70 * np.cos(theta) + rng.normal(0, 4, len(theta)),
                     250 + 110 * np.sin(theta) + rng.normal(0, 4, len(theta))],
                    axis=1)
    strokes["noisy_loop"] = blob
    out = []
    for name, canvas_pts in strokes.items():
        domain = canvas_to_domain(canvas_pts)
        sketch = fit_sketch_from_stroke(domain)
        fitted = {"kind": sketch.kind}
        if sketch.kind == "arrow":
            fitted["start"] = sketch.start.tolist()
            fitted["end"] = sketch.end.tolist()
        else:
            fitted["center"] = sketch.center.tolist()
            fitted["semi_axes"] = sketch.semi_axes.tolist()
        out.append({"name": name, "canvas": canvas_pts.tolist(),
                    "expected_domain": domain.tolist(), "fitted": fitted})
    return {"canvas_size": CANVAS, "strokes": out}


def record_transcript():
    from fastapi.testclient import TestClient

    from fluidforge.service import build_app

    app = build_app(frame_rate=500.0)
    messages = []
    with TestClient(app) as client:
        info = client.post("/sessions", json={"scenario": "freefall2d-desk",
                                              "step_delay": 0.002}).json()
        stroke = [[0.35, 0.35], [0.45, 0.45], [0.55, 0.52]]
        with client.websocket_connect(f"/sessions/{info['session_id']}/stream") as ws:
            sent = False
            deadline = time.monotonic() + 60.0
            while time.monotonic() < deadline:
                message = json.loads(ws.receive_text())
                messages.append(message)
                frames = sum(m["type"] == "frame" for m in messages)
                if frames >= 4 and not sent:
                    ws.send_text(json.dumps({"type": "stroke", "points": stroke}))
                    sent = True
                if sent and message.get("type") == "mode_change" \
                        and message.get("mode") == "RUNNING_HYBRID":
                    break
            # a few frames after control ends
            for _ in range(3):
                messages.append(json.loads(ws.receive_text()))
    app.state.registry.shutdown()
    return {"scenario": info["scenario"], "particles": info["particles"],
            "messages": messages}


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    (OUT_DIR / "strokes.json").write_text(
        json.dumps(stroke_fixtures(), indent=1))
    (OUT_DIR / "transcript.json").write_text(
        json.dumps(record_transcript(), indent=1))
    print(f"wrote fixtures to {OUT_DIR}")


if __name__ == "__main__":
    main()
