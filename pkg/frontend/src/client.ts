// WebSocket client for /sessions/{id}/stream: parses server messages into
// the ViewModel and sends the documented client messages; nothing else
// touches simulation state.

import type { Point } from "./mapping.js";
import type { ClientMessage, ServerMessage } from "./protocol.js";
import type { ViewModel } from "./viewmodel.js";

export class StudioClient {
  private socket: WebSocket | null = null;

  constructor(readonly vm: ViewModel) {}

  connect(url: string): void {
    this.socket = new WebSocket(url);
    this.socket.onmessage = (event: MessageEvent) => {
      try {
        this.vm.ingest(JSON.parse(event.data as string) as ServerMessage);
      } catch {
        this.vm.lastError = "undecodable message";
      }
    };
  }

  send(message: ClientMessage): void {
    if (this.socket && this.socket.readyState === WebSocket.OPEN) {
      this.socket.send(JSON.stringify(message));
    }
  }

  submitStroke(points: Point[]): boolean {
    if (points.length < 3) return false;
    this.send({ type: "stroke", points });
    return true;
  }

  setThreshold(value: number): void {
    this.vm.hud.rc = value;
    this.send({ type: "set_rc", value });
  }
}

export async function createSession(base: string, scenario: string):
    Promise<{ session_id: string; particles: number }> {
  const response = await fetch(`${base}/sessions`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ scenario }),
  });
  if (!response.ok) throw new Error(`session create failed: ${response.status}`);
  return response.json();
}
