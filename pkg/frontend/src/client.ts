/** Gateway connection: a thin WebSocket wrapper around the pure reducer.
 *
 * Connection loss surfaces as a banner state and triggers a reconnect
 * with a fresh session; the view state carries over so the transcript
 * stays visible, with the connection field flagging the gap.
 */

import { parseWireMessage } from "./protocol.js";
import { initialViewState, reduce, type ViewState } from "./state.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((event: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onopen: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface GatewayClientOptions {
  socketFactory?: SocketFactory;
  reconnectDelayMs?: number;
  onChange?: (state: ViewState) => void;
  /** Scheduler seam so tests can drive reconnects synchronously. */
  schedule?: (fn: () => void, delayMs: number) => void;
}

const defaultFactory: SocketFactory = (url) => new WebSocket(url) as unknown as SocketLike;

export class GatewayClient {
  state: ViewState = initialViewState();
  private socket: SocketLike | null = null;
  private closedByUs = false;

  constructor(
    private readonly url: string,
    private readonly options: GatewayClientOptions = {},
  ) {}

  connect(): void {
    const factory = this.options.socketFactory ?? defaultFactory;
    const socket = factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.apply({ ...this.state, connection: "connected", error: null });
    };
    socket.onmessage = (event) => {
      this.apply(reduce(this.state, parseWireMessage(event.data)));
    };
    socket.onclose = () => {
      if (this.closedByUs) {
        this.apply({ ...this.state, connection: "closed" });
        return;
      }
      this.apply({ ...this.state, connection: "reconnecting" });
      const schedule = this.options.schedule ?? ((fn, ms) => setTimeout(fn, ms));
      schedule(() => this.connect(), this.options.reconnectDelayMs ?? 1000);
    };
  }

  pushUserText(text: string): void {
    this.socket?.send(JSON.stringify({ type: "user_text", text }));
  }

  close(): void {
    this.closedByUs = true;
    this.socket?.send(JSON.stringify({ type: "close" }));
    this.socket?.close();
  }

  private apply(next: ViewState): void {
    this.state = next;
    this.options.onChange?.(next);
  }
}
