/** Browser wiring: a textarea-free console where typing is the microphone.
 *
 * Keystrokes anywhere on the page feed the chunker; there is no special
 * interrupt mode — typing while the machine streams IS the barge-in.
 */

import { GatewayClient } from "./client.js";
import { KeystrokeBuffer } from "./input.js";
import { render } from "./render.js";

const CHUNK_PERIOD_MS = 640;

function mount(): void {
  const root = document.getElementById("console");
  if (!root) throw new Error("missing #console element");
  root.innerHTML = `
    <header>
      <span id="state-badge" class="badge"></span>
      <span id="hud"></span>
    </header>
    <div id="banner" hidden></div>
    <main id="transcript"></main>
    <footer>
      <input id="typing" autocomplete="off"
             placeholder="type to talk — typing while the machine speaks interrupts it" />
    </footer>`;

  const transcript = document.getElementById("transcript")!;
  const badge = document.getElementById("state-badge")!;
  const hud = document.getElementById("hud")!;
  const banner = document.getElementById("banner")!;
  const typing = document.getElementById("typing") as HTMLInputElement;

  const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/session`;
  const client = new GatewayClient(wsUrl, {
    onChange: (state) => {
      const screen = render(state);
      badge.textContent = screen.stateBadge;
      badge.className = `badge ${screen.stateBadge.toLowerCase()}`;
      hud.textContent = screen.hud;
      banner.hidden = screen.banner === null;
      banner.textContent = screen.banner ?? "";
      transcript.innerHTML = screen.lines
        .map((line) => {
          const badges = line.badges.map((b) => `<span class="flag">${b}</span>`).join("");
          return `<div class="line ${line.kind}">${line.html}${badges}</div>`;
        })
        .join("");
      transcript.scrollTop = transcript.scrollHeight;
    },
  });

  const buffer = new KeystrokeBuffer((text) => client.pushUserText(text));
  typing.addEventListener("input", () => {
    const value = typing.value;
    typing.value = "";
    buffer.onKeystroke(value);
  });
  setInterval(() => buffer.onPeriod(), CHUNK_PERIOD_MS);

  client.connect();
}

mount();
