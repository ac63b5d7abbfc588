/** View-state rendering, kept DOM-free so it is directly testable.
 *
 * Unvoiced machine tokens (generated but never audibly delivered) render
 * dimmed; a conceded reply carries a badge; the HUD shows the machine
 * state and the last first-voice delay.
 */

import type { MachineEntry, TranscriptEntry, ViewState } from "./state.js";

export interface RenderedLine {
  kind: "user" | "machine" | "control";
  html: string;
  text: string;
  badges: string[];
}

export interface Screen {
  stateBadge: string;
  hud: string;
  banner: string | null;
  lines: RenderedLine[];
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function machineLine(entry: MachineEntry): RenderedLine {
  const html = entry.tokens
    .map((token) =>
      token.voiced
        ? `<span class="tok">${escapeHtml(token.text)}</span>`
        : `<span class="tok dim">${escapeHtml(token.text)}</span>`,
    )
    .join(" ");
  const badges: string[] = [];
  if (entry.conceded) badges.push("conceded");
  if (entry.open) badges.push("streaming");
  return {
    kind: "machine",
    html,
    text: entry.tokens.map((t) => t.text).join(" "),
    badges,
  };
}

export function render(state: ViewState): Screen {
  const lines: RenderedLine[] = [];
  for (const entry of state.transcript) {
    lines.push(renderEntry(entry));
  }
  return {
    stateBadge: state.fsm,
    hud: state.lastFtedMs === null ? "FTED: —" : `FTED: ${state.lastFtedMs} ms`,
    banner:
      state.connection === "reconnecting"
        ? "connection lost — reconnecting with a fresh session"
        : state.error,
    lines,
  };
}

function renderEntry(entry: TranscriptEntry): RenderedLine {
  switch (entry.kind) {
    case "user":
      return { kind: "user", html: escapeHtml(entry.text), text: entry.text, badges: [] };
    case "control":
      return { kind: "control", html: escapeHtml(entry.surface), text: entry.surface, badges: [] };
    case "machine":
      return machineLine(entry);
  }
}
