// GENERATED from schema/protocol.schema.json - do not edit by hand.
// Regenerate with: npm run generate-protocol

export interface StrokeMessage {
  type: "stroke";
  points: number[][];
}

export interface SetRcMessage {
  type: "set_rc";
  value: number;
}

export interface PauseMessage {
  type: "pause";
}

export interface ResumeMessage {
  type: "resume";
}

export interface ResetMessage {
  type: "reset";
}

export interface FrameMessage {
  type: "frame";
  index: number;
  mode: string;
  latency_ms: number;
  positions: string;
  count: number;
  dim: number;
}

export interface ModeChangeMessage {
  type: "mode_change";
  index: number;
  mode: string;
}

export interface ControlStartedMessage {
  type: "control_started";
  index?: number;
  sketch: Record<string, unknown>;
}

export interface ErrorMessage {
  type: "error";
  detail: string;
}

export type ClientMessage = StrokeMessage | SetRcMessage | PauseMessage | ResumeMessage | ResetMessage;
export type ServerMessage = FrameMessage | ModeChangeMessage | ControlStartedMessage | ErrorMessage;
