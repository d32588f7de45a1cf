// Pure view functions: console state in, HTML strings out. Kept free of
// DOM access so the transcript tests can assert on rendered output.

import { ConsoleState, StageCard } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const STATE_COLORS: Record<string, string> = {
  ready: "#2da44e",
  busy: "#bf8700",
  loading_model: "#8250df",
  handshaking: "#8250df",
};

export function renderBanner(state: ConsoleState, stale: boolean): string {
  const cls = state.phase;
  let label: string;
  if (state.phase === "running") {
    label = "Running";
  } else if (state.phase === "reconfiguring") {
    label = "Reconfiguring…";
  } else if (state.phase === "degraded") {
    const missing = state.missing.map(escapeHtml).join(", ") || "unknown capability";
    label = `Degraded — missing ${missing}`;
  } else {
    label = "Waiting for server";
  }
  const staleBadge = stale ? `<span class="stale">stale — no events for &gt;3 s</span>` : "";
  const conn = state.connected ? "" : `<span class="disconnected">disconnected</span>`;
  return `<div class="banner ${cls}">${label}${staleBadge}${conn}</div>`;
}

function renderCard(card: StageCard): string {
  const color = STATE_COLORS[card.state] ?? "#57606a";
  const badge = card.bypassable
    ? `<span class="badge bypassable">bypassable</span>`
    : `<span class="badge required">required</span>`;
  const pending = card.pending ? ` pending` : "";
  return (
    `<div class="card${pending}" draggable="true" data-slot="${card.slot}">` +
    `<div class="card-slot">slot ${card.slot}</div>` +
    `<div class="card-name">${escapeHtml(card.preset || card.capability)}</div>` +
    `<div class="card-state" style="color:${color}">${escapeHtml(card.state)}</div>` +
    badge +
    `<button class="unplug" data-slot="${card.slot}">unplug</button>` +
    `</div>`
  );
}

export function renderStages(state: ConsoleState): string {
  if (state.stages.length === 0) {
    return `<div class="placeholder">no cartridges plugged in</div>`;
  }
  return state.stages.map(renderCard).join(`<div class="link">→</div>`);
}

export function renderAlerts(state: ConsoleState): string {
  if (state.alerts.length === 0) return "";
  const items = state.alerts
    .map((a) => `<li class="alert">${escapeHtml(a)}</li>`)
    .join("");
  return `<ul class="alerts">${items}</ul>`;
}

export function renderToasts(state: ConsoleState): string {
  return state.toasts
    .map((t) => `<div class="toast ${t.kind}">${escapeHtml(t.message)}</div>`)
    .join("");
}

export function renderErrorBanner(state: ConsoleState): string {
  if (!state.errorBanner) return "";
  return `<div class="error-banner">${escapeHtml(state.errorBanner)}</div>`;
}

export function renderMetricsSummary(state: ConsoleState): string {
  const latency = state.latencyMs === null ? "–" : `${state.latencyMs.toFixed(1)} ms`;
  return (
    `<span class="metric">fps ${state.fps.toFixed(1)}</span>` +
    `<span class="metric">latency ${latency}</span>` +
    `<span class="metric">frames ${state.framesDelivered}</span>`
  );
}

export interface TopologyView {
  banner: string;
  stages: string;
  alerts: string;
  toasts: string;
  error: string;
  metrics: string;
  cardCount: number;
}

export function renderTopology(state: ConsoleState, nowWall: number, stale = false): TopologyView {
  return {
    banner: renderBanner(state, stale),
    stages: renderStages(state),
    alerts: renderAlerts(state),
    toasts: renderToasts(state),
    error: renderErrorBanner(state),
    metrics: renderMetricsSummary(state),
    cardCount: state.stages.length,
  };
}
