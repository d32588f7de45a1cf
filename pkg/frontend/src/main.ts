// DOM wiring: subscribe to the control plane, render on every server
// event, forward operator actions as commands. View updates happen only
// on server events; buttons and drags never touch the topology locally.

import { ConsoleClient, defaultServerUrl } from "./client.js";
import { plugCommand, reorderCommand, sourceRateCommand, unplugCommand } from "./commands.js";
import { renderTopology } from "./render.js";
import { ConsoleStore } from "./state.js";

const PRESETS = [
  "face-detect",
  "face-quality",
  "face-embed",
  "object-detect",
  "gait-embed",
  "database",
  "passthrough",
];

function byId(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

function drawSeries(
  canvas: HTMLCanvasElement,
  points: Array<{ atMs: number; value: number | null }>,
  color: string,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const usable = points.filter((p) => p.value !== null) as Array<{ atMs: number; value: number }>;
  if (usable.length < 2) return;
  const t0 = usable[0]!.atMs;
  const t1 = usable[usable.length - 1]!.atMs;
  const vMax = Math.max(...usable.map((p) => p.value)) * 1.2 || 1;
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  usable.forEach((p, i) => {
    const x = t1 === t0 ? 0 : ((p.atMs - t0) / (t1 - t0)) * canvas.width;
    const y = canvas.height - (p.value / vMax) * canvas.height;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

function start(): void {
  const store = new ConsoleStore();
  const client = new ConsoleClient(defaultServerUrl(), {
    onEvent: (raw) => store.applyRaw(raw, Date.now()),
    onConnected: () => store.setConnected(true, Date.now()),
    onDisconnected: () => store.setConnected(false, Date.now()),
  });

  const presetSelect = byId("plug-preset") as HTMLSelectElement;
  presetSelect.innerHTML = PRESETS.map((p) => `<option value="${p}">${p}</option>`).join("");

  let dragFromIndex: number | null = null;

  function render(): void {
    const state = store.state;
    const view = renderTopology(state, Date.now(), store.isStale(Date.now()));
    byId("banner").innerHTML = view.banner + view.error;
    byId("stages").innerHTML = view.stages;
    byId("alerts").innerHTML = view.alerts;
    byId("toasts").innerHTML = view.toasts;
    byId("metrics-summary").innerHTML = view.metrics;
    for (const button of document.querySelectorAll<HTMLButtonElement>("button.unplug")) {
      button.disabled = !state.connected;
      button.onclick = () => {
        const slot = Number(button.dataset.slot);
        if (client.send(unplugCommand(slot))) store.markPending(slot);
      };
    }
    const cards = [...document.querySelectorAll<HTMLElement>(".card")];
    cards.forEach((card, index) => {
      card.ondragstart = () => {
        dragFromIndex = index;
      };
      card.ondragover = (ev) => ev.preventDefault();
      card.ondrop = (ev) => {
        ev.preventDefault();
        if (dragFromIndex === null || dragFromIndex === index) return;
        const slots = state.stages.map((s) => s.slot);
        client.send(reorderCommand(slots, dragFromIndex, index));
        dragFromIndex = null;
      };
    });
    drawSeries(
      byId("fps-chart") as HTMLCanvasElement,
      state.metrics.map((m) => ({ atMs: m.atMs, value: m.fps })),
      "#2da44e",
    );
    drawSeries(
      byId("latency-chart") as HTMLCanvasElement,
      state.metrics.map((m) => ({ atMs: m.atMs, value: m.latencyMs })),
      "#0969da",
    );
    (byId("plug-button") as HTMLButtonElement).disabled = !state.connected;
    (byId("rate-button") as HTMLButtonElement).disabled = !state.connected;
  }

  store.onChange(render);
  setInterval(() => {
    store.pruneToasts(Date.now());
    render();
  }, 1000);

  byId("plug-button").onclick = () => {
    const slot = Number((byId("plug-slot") as HTMLInputElement).value);
    if (Number.isInteger(slot)) {
      client.send(plugCommand(slot, presetSelect.value));
    }
  };
  byId("rate-button").onclick = () => {
    const fps = Number((byId("rate-fps") as HTMLInputElement).value);
    if (fps > 0) client.send(sourceRateCommand(fps));
  };

  client.connect();
  render();
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", start);
}
