// Studio state: the frame ring buffer, the in-progress stroke, and the HUD.
// Pure logic (no DOM) so the whole state machine is unit-testable; socket
// callbacks push messages in, the renderer pulls the latest frame out on
// animation ticks.

import type { Point } from "./mapping.js";
import type { FrameMessage, ServerMessage } from "./protocol.js";

export interface DecodedFrame {
  index: number;
  mode: string;
  latencyMs: number;
  positions: Float32Array;
  count: number;
  dim: number;
}

export interface Hud {
  mode: string;
  latencyMs: number;
  rc: number;
  mpmFraction: number;
}

const RING = 4;
const LATENCY_HISTORY = 120;

function decodeBase64(data: string): Uint8Array {
  if (typeof atob === "function") {
    const binary = atob(data);
    const bytes = new Uint8Array(binary.length);
    for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
    return bytes;
  }
  return new Uint8Array(Buffer.from(data, "base64"));
}

export function decodeFrame(message: FrameMessage): DecodedFrame {
  const bytes = decodeBase64(message.positions);
  const positions = new Float32Array(bytes.buffer, bytes.byteOffset,
                                     message.count * message.dim);
  return {
    index: message.index,
    mode: message.mode,
    latencyMs: message.latency_ms,
    positions,
    count: message.count,
    dim: message.dim,
  };
}

export class ViewModel {
  frames: DecodedFrame[] = [];
  strokeInProgress: Point[] = [];
  hud: Hud = { mode: "IDLE", latencyMs: 0, rc: 0.8, mpmFraction: 0 };
  badgeHistory: string[] = [];
  latencyHistory: number[] = [];
  fittedSketch: Record<string, unknown> | null = null;
  lastError: string | null = null;
  private renderedIndex = -1;
  private mpmFrames = 0;
  private totalFrames = 0;

  ingest(message: ServerMessage): void {
    switch (message.type) {
      case "frame": {
        const frame = decodeFrame(message);
        if (frame.index <= this.renderedIndex) return; // stale after a drop
        this.frames.push(frame);
        if (this.frames.length > RING) this.frames.shift();
        this.totalFrames += 1;
        if (frame.mode === "MPM") this.mpmFrames += 1;
        this.hud.latencyMs = frame.latencyMs;
        this.hud.mpmFraction = this.totalFrames
          ? this.mpmFrames / this.totalFrames : 0;
        this.latencyHistory.push(frame.latencyMs);
        if (this.latencyHistory.length > LATENCY_HISTORY) {
          this.latencyHistory.shift();
        }
        break;
      }
      case "mode_change":
        this.hud.mode = message.mode;
        this.badgeHistory.push(message.mode);
        break;
      case "control_started":
        this.fittedSketch = message.sketch;
        break;
      case "error":
        this.lastError = message.detail;
        break;
    }
  }

  /** Newest undrawn frame, advancing the monotone render cursor. */
  nextFrameToRender(): DecodedFrame | null {
    if (!this.frames.length) return null;
    const frame = this.frames[this.frames.length - 1];
    if (frame.index <= this.renderedIndex) return null;
    this.renderedIndex = frame.index;
    return frame;
  }

  get renderedFrameIndex(): number {
    return this.renderedIndex;
  }

  beginStroke(point: Point): void {
    this.strokeInProgress = [point];
  }

  extendStroke(point: Point): void {
    if (this.strokeInProgress.length) this.strokeInProgress.push(point);
  }

  /** Returns the finished stroke (domain points) or null if too short. */
  finishStroke(): Point[] | null {
    const stroke = this.strokeInProgress;
    this.strokeInProgress = [];
    return stroke.length >= 3 ? stroke : null;
  }
}
