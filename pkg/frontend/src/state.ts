// Console state: a pure reducer over server events. The server is the
// single source of truth; nothing here mutates topology except in
// response to a received event, and reconnecting simply replays the
// fresh snapshot (topology events replace the whole card list, so a
// reconnect can never duplicate stage cards).

import {
  parseServerEvent,
  ParseFailure,
  ServerEvent,
  StageInfo,
  TopologyEvent,
} from "./protocol.js";

export const METRICS_WINDOW_MS = 5 * 60 * 1000;
export const STALE_AFTER_MS = 3000;
export const TOAST_TTL_MS = 6000;

export interface StageCard extends StageInfo {
  pending: boolean; // a command for this slot is in flight (visual only)
}

export interface MetricsPoint {
  atMs: number;
  fps: number;
  latencyMs: number | null;
}

export interface Toast {
  kind: "error" | "info";
  message: string;
  atWall: number;
}

export interface ConsoleState {
  connected: boolean;
  phase: "running" | "reconfiguring" | "degraded" | "unknown";
  missing: string[];
  stages: StageCard[];
  alerts: string[];
  metrics: MetricsPoint[];
  toasts: Toast[];
  errorBanner: string | null;
  lastEventWall: number;
  serverAtMs: number | null;
  framesDelivered: number;
  fps: number;
  latencyMs: number | null;
}

export function initialState(): ConsoleState {
  return {
    connected: false,
    phase: "unknown",
    missing: [],
    stages: [],
    alerts: [],
    metrics: [],
    toasts: [],
    errorBanner: null,
    lastEventWall: 0,
    serverAtMs: null,
    framesDelivered: 0,
    fps: 0,
    latencyMs: null,
  };
}

function toCards(stages: StageInfo[]): StageCard[] {
  return [...stages]
    .sort((a, b) => a.slot - b.slot)
    .map((s) => ({ ...s, pending: false }));
}

function pushMetrics(state: ConsoleState, point: MetricsPoint): void {
  state.metrics.push(point);
  const cutoff = point.atMs - METRICS_WINDOW_MS;
  while (state.metrics.length > 0 && state.metrics[0]!.atMs < cutoff) {
    state.metrics.shift();
  }
}

export class ConsoleStore {
  state: ConsoleState = initialState();
  private listeners: Array<(s: ConsoleState) => void> = [];

  onChange(listener: (s: ConsoleState) => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const l of this.listeners) l(this.state);
  }

  setConnected(connected: boolean, nowWall: number): void {
    this.state.connected = connected;
    if (connected) {
      this.state.errorBanner = null;
    }
    this.state.lastEventWall = nowWall;
    this.notify();
  }

  markPending(slot: number): void {
    // in-flight hint only: the card itself, and everything else about
    // the view, changes when the server says so
    for (const card of this.state.stages) {
      if (card.slot === slot) card.pending = true;
    }
    this.notify();
  }

  applyRaw(raw: unknown, nowWall: number): ServerEvent | ParseFailure {
    const event = parseServerEvent(raw);
    this.apply(event, nowWall);
    return event;
  }

  apply(event: ServerEvent | ParseFailure, nowWall: number): void {
    if (event.type !== "malformed") {
      this.state.lastEventWall = nowWall;
    }
    switch (event.type) {
      case "malformed":
        this.state.errorBanner = `malformed server event: ${event.reason}`;
        break;
      case "topology":
        this.applyTopology(event);
        break;
      case "metrics":
        this.state.serverAtMs = event.at_ms;
        this.state.fps = event.fps;
        this.state.latencyMs = event.latency_ms;
        this.state.framesDelivered = event.frames_delivered;
        pushMetrics(this.state, {
          atMs: event.at_ms,
          fps: event.fps,
          latencyMs: event.latency_ms,
        });
        break;
      case "alert":
        this.state.alerts = [...this.state.alerts, event.message].slice(-20);
        this.state.toasts.push({ kind: "error", message: event.message, atWall: nowWall });
        break;
      case "ack":
        // effects arrive through the next topology event; nothing to do
        break;
      case "reject":
        this.state.toasts.push({
          kind: "error",
          message: `rejected: ${event.reason}`,
          atWall: nowWall,
        });
        break;
    }
    this.pruneToasts(nowWall);
    this.notify();
  }

  private applyTopology(event: TopologyEvent): void {
    this.state.phase = event.phase;
    this.state.missing = event.missing ?? [];
    this.state.stages = toCards(event.stages);
    this.state.alerts = event.alerts ?? [];
    this.state.serverAtMs = event.at_ms;
    this.state.fps = event.fps;
    this.state.latencyMs = event.latency_ms;
    this.state.framesDelivered = event.frames_delivered;
  }

  pruneToasts(nowWall: number): void {
    this.state.toasts = this.state.toasts.filter((t) => nowWall - t.atWall < TOAST_TTL_MS);
  }

  isStale(nowWall: number): boolean {
    return (
      this.state.lastEventWall > 0 && nowWall - this.state.lastEventWall > STALE_AFTER_MS
    );
  }
}
