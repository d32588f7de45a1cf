// WebSocket client for the control plane: one connection carries both
// the subscription stream and operator commands. On (re)connect it
// re-subscribes; the server leads with a fresh snapshot, so the view
// resumes without duplicate cards.

import { ControlCommand } from "./protocol.js";

export interface ClientHooks {
  onEvent(raw: unknown): void;
  onConnected(): void;
  onDisconnected(): void;
}

export class ConsoleClient {
  private ws: WebSocket | null = null;
  private url: string;
  private hooks: ClientHooks;
  private retryMs = 1000;
  private closed = false;

  constructor(url: string, hooks: ClientHooks) {
    this.url = url;
    this.hooks = hooks;
  }

  connect(): void {
    if (this.ws || this.closed) return;
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.retryMs = 1000;
      ws.send(JSON.stringify({ type: "subscribe" }));
      this.hooks.onConnected();
    };
    ws.onmessage = (ev) => {
      this.hooks.onEvent(ev.data);
    };
    ws.onclose = () => {
      this.ws = null;
      this.hooks.onDisconnected();
      if (!this.closed) {
        setTimeout(() => this.connect(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, 10_000);
      }
    };
    ws.onerror = () => {
      // the close event follows on its own; closing here would recurse
      // on a failed connect
    };
  }

  get connected(): boolean {
    return this.ws !== null && this.ws.readyState === WebSocket.OPEN;
  }

  send(command: ControlCommand): boolean {
    if (!this.connected || this.ws === null) {
      return false;
    }
    this.ws.send(JSON.stringify(command));
    return true;
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}

export function defaultServerUrl(): string {
  const host = typeof location !== "undefined" ? location.hostname || "127.0.0.1" : "127.0.0.1";
  return `ws://${host}:7787/ws`;
}
