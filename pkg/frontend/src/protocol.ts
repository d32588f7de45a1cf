// Wire types for the control-plane JSON protocol (NDJSON or WebSocket;
// the payloads are identical). Parsing is defensive: a malformed event
// becomes a ParseFailure value, never an exception.

export interface StageInfo {
  slot: number;
  capability: string;
  preset: string;
  state: string;
  bypassable: boolean;
}

export interface TopologyEvent {
  type: "topology";
  seq?: number;
  at_ms: number;
  phase: "running" | "reconfiguring" | "degraded";
  detail?: string;
  missing: string[];
  stages: StageInfo[];
  link_depths: Record<string, number>;
  holdback: number;
  alerts: string[];
  fps: number;
  latency_ms: number | null;
  frames_delivered: number;
}

export interface MetricsEvent {
  type: "metrics";
  seq?: number;
  at_ms: number;
  fps: number;
  latency_ms: number | null;
  frames_delivered: number;
  holdback: number;
  phase: string;
}

export interface AlertEvent {
  type: "alert";
  seq?: number;
  at_ms: number;
  severity: string;
  message: string;
}

export interface AckEvent {
  type: "ack";
  request_id: string | null;
  command: string;
  result: Record<string, unknown>;
}

export interface RejectEvent {
  type: "reject";
  request_id: string | null;
  command?: string;
  reason: string;
}

export type ServerEvent = TopologyEvent | MetricsEvent | AlertEvent | AckEvent | RejectEvent;

export interface ParseFailure {
  type: "malformed";
  reason: string;
  raw: unknown;
}

const PHASES = new Set(["running", "reconfiguring", "degraded"]);

function isRecord(x: unknown): x is Record<string, unknown> {
  return typeof x === "object" && x !== null && !Array.isArray(x);
}

function isStage(x: unknown): x is StageInfo {
  return (
    isRecord(x) &&
    typeof x.slot === "number" &&
    typeof x.capability === "string" &&
    typeof x.state === "string" &&
    typeof x.bypassable === "boolean"
  );
}

export function parseServerEvent(raw: unknown): ServerEvent | ParseFailure {
  let data: unknown = raw;
  if (typeof raw === "string") {
    try {
      data = JSON.parse(raw);
    } catch (err) {
      return { type: "malformed", reason: `not JSON: ${String(err)}`, raw };
    }
  }
  if (!isRecord(data)) {
    return { type: "malformed", reason: "event is not an object", raw };
  }
  switch (data.type) {
    case "topology": {
      if (typeof data.phase !== "string" || !PHASES.has(data.phase)) {
        return { type: "malformed", reason: `bad phase ${String(data.phase)}`, raw };
      }
      if (!Array.isArray(data.stages) || !data.stages.every(isStage)) {
        return { type: "malformed", reason: "bad stages array", raw };
      }
      return data as unknown as TopologyEvent;
    }
    case "metrics": {
      if (typeof data.fps !== "number" || typeof data.at_ms !== "number") {
        return { type: "malformed", reason: "bad metrics fields", raw };
      }
      return data as unknown as MetricsEvent;
    }
    case "alert": {
      if (typeof data.message !== "string") {
        return { type: "malformed", reason: "alert without message", raw };
      }
      return data as unknown as AlertEvent;
    }
    case "ack":
      return data as unknown as AckEvent;
    case "reject": {
      if (typeof data.reason !== "string") {
        return { type: "malformed", reason: "reject without reason", raw };
      }
      return data as unknown as RejectEvent;
    }
    default:
      return { type: "malformed", reason: `unknown event type ${String(data.type)}`, raw };
  }
}

// --- commands (client -> server) ---------------------------------------------

export interface ControlCommand {
  type: string;
  request_id: string;
  payload: Record<string, unknown>;
}
