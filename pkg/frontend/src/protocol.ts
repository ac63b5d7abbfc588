/** Wire protocol of the gateway: one JSON object per message. */

export type FsmStateName = "SPEAK" | "LISTEN";

export interface UserChunkMessage {
  type: "user_chunk";
  t_ms: number;
  silence: boolean;
  text?: string;
}

export interface MachineTokenMessage {
  type: "machine_token";
  t_ms: number;
  text: string;
  entry_index: number;
}

export interface ControlMessage {
  type: "control";
  t_ms: number;
  control: string; // one of the four bracketed surface strings
}

export interface StateMessage {
  type: "state";
  t_ms: number;
  state: FsmStateName;
}

export interface VoicedMessage {
  type: "voiced";
  t_ms: number;
  entry_index: number;
}

export interface MetricsMessage {
  type: "metrics";
  t_ms: number;
  fted_ms: number | null;
  cancelled_tokens?: number;
}

export interface ErrorMessage {
  type: "error";
  t_ms: number;
  message: string;
}

export type WireMessage =
  | UserChunkMessage
  | MachineTokenMessage
  | ControlMessage
  | StateMessage
  | VoicedMessage
  | MetricsMessage
  | ErrorMessage;

export const CONTROL_SURFACES = ["[S.SPEAK]", "[C.SPEAK]", "[S.LISTEN]", "[C.LISTEN]"] as const;

export function parseWireMessage(raw: string): WireMessage {
  const parsed = JSON.parse(raw) as WireMessage;
  if (typeof parsed !== "object" || parsed === null || typeof parsed.type !== "string") {
    throw new Error(`not a wire message: ${raw}`);
  }
  return parsed;
}
