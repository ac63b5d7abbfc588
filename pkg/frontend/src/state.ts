/** Pure view-state reducer over the wire protocol.
 *
 * The console is a mirror: it never originates control tokens, never
 * guesses the machine state, and applying the same message log always
 * reproduces the same final state.
 */

import type { FsmStateName, WireMessage } from "./protocol.js";

export interface MachineToken {
  text: string;
  entryIndex: number;
  voiced: boolean;
}

export interface UserEntry {
  kind: "user";
  tMs: number;
  text: string;
}

export interface ControlEntry {
  kind: "control";
  tMs: number;
  surface: string;
}

export interface MachineEntry {
  kind: "machine";
  tMs: number;
  tokens: MachineToken[];
  open: boolean;
  /** A barge-in arrived while this reply streamed and the floor was ceded. */
  conceded: boolean;
  bargedIn: boolean;
}

export type TranscriptEntry = UserEntry | ControlEntry | MachineEntry;

export interface ViewState {
  fsm: FsmStateName;
  transcript: TranscriptEntry[];
  pendingMachineText: string;
  lastFtedMs: number | null;
  silenceTicks: number;
  connection: "connected" | "reconnecting" | "closed";
  error: string | null;
}

export function initialViewState(): ViewState {
  return {
    fsm: "LISTEN",
    transcript: [],
    pendingMachineText: "",
    lastFtedMs: null,
    silenceTicks: 0,
    connection: "connected",
    error: null,
  };
}

function cloneTranscript(state: ViewState): TranscriptEntry[] {
  return state.transcript.map((entry) =>
    entry.kind === "machine" ? { ...entry, tokens: entry.tokens.map((t) => ({ ...t })) } : { ...entry },
  );
}

export function reduce(state: ViewState, message: WireMessage): ViewState {
  switch (message.type) {
    case "user_chunk": {
      if (message.silence || message.text === undefined) {
        return { ...state, silenceTicks: state.silenceTicks + 1 };
      }
      const transcript = cloneTranscript(state);
      const bubble = lastOpenMachine(transcript);
      if (bubble) {
        bubble.bargedIn = true;
      }
      transcript.push({ kind: "user", tMs: message.t_ms, text: message.text });
      return { ...state, transcript, silenceTicks: 0 };
    }
    case "machine_token": {
      const transcript = cloneTranscript(state);
      let bubble = lastOpenMachine(transcript);
      if (!bubble) {
        bubble = {
          kind: "machine",
          tMs: message.t_ms,
          tokens: [],
          open: true,
          conceded: false,
          bargedIn: false,
        };
        transcript.push(bubble);
      }
      bubble.tokens.push({ text: message.text, entryIndex: message.entry_index, voiced: false });
      return {
        ...state,
        transcript,
        pendingMachineText: bubble.tokens.map((t) => t.text).join(" "),
      };
    }
    case "control": {
      const transcript = cloneTranscript(state);
      const bubble = lastOpenMachine(transcript);
      if (message.control === "[S.LISTEN]" && bubble) {
        bubble.open = false;
        bubble.conceded = bubble.bargedIn;
      }
      transcript.push({ kind: "control", tMs: message.t_ms, surface: message.control });
      const closing = message.control === "[S.LISTEN]";
      return {
        ...state,
        transcript,
        pendingMachineText: closing ? "" : state.pendingMachineText,
      };
    }
    case "state":
      return { ...state, fsm: message.state };
    case "voiced": {
      const transcript = cloneTranscript(state);
      markVoiced(transcript, message.entry_index);
      return { ...state, transcript };
    }
    case "metrics":
      return message.fted_ms === null ? state : { ...state, lastFtedMs: message.fted_ms };
    case "error":
      return { ...state, error: message.message };
    default:
      return state;
  }
}

function lastOpenMachine(transcript: TranscriptEntry[]): MachineEntry | null {
  for (let i = transcript.length - 1; i >= 0; i--) {
    const entry = transcript[i];
    if (entry && entry.kind === "machine") {
      return entry.open ? entry : null;
    }
  }
  return null;
}

function markVoiced(transcript: TranscriptEntry[], entryIndex: number): void {
  for (const entry of transcript) {
    if (entry.kind !== "machine") continue;
    for (const token of entry.tokens) {
      if (token.entryIndex === entryIndex) {
        token.voiced = true;
        return;
      }
    }
  }
}

export function replay(messages: WireMessage[], from?: ViewState): ViewState {
  let state = from ?? initialViewState();
  for (const message of messages) {
    state = reduce(state, message);
  }
  return state;
}
