// Replays the recorded control-plane transcript (a scripted remove /
// reinsert cycle of slot 1, plus one rejected command) through the
// store and checks the view tracks the server exactly.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { ConsoleStore, METRICS_WINDOW_MS, initialState } from "../src/state.js";
import { renderBanner, renderStages } from "../src/render.js";

const here = dirname(fileURLToPath(import.meta.url));
const transcript = JSON.parse(
  readFileSync(join(here, "fixtures", "transcript.json"), "utf-8"),
);

function replayStore(): ConsoleStore {
  const store = new ConsoleStore();
  store.setConnected(true, 0);
  store.applyRaw(transcript.snapshot, 0);
  let wall = 1;
  for (const event of transcript.events) {
    store.applyRaw(event, wall);
    wall += 1;
  }
  return store;
}

describe("transcript replay", () => {
  it("starts from the boot snapshot: three cards, running", () => {
    const store = new ConsoleStore();
    store.applyRaw(transcript.snapshot, 0);
    expect(store.state.phase).toBe("running");
    expect(store.state.stages.map((s) => s.slot)).toEqual([0, 1, 2]);
  });

  it("tracks the remove/reinsert cycle: banners and card counts", () => {
    const store = new ConsoleStore();
    store.applyRaw(transcript.snapshot, 0);
    const trajectory: Array<[string, number]> = [[store.state.phase, store.state.stages.length]];
    for (const event of transcript.events) {
      if (event.type !== "topology") continue;
      store.applyRaw(event, 1);
      trajectory.push([store.state.phase, store.state.stages.length]);
    }
    expect(trajectory).toEqual([
      ["running", 3],
      ["reconfiguring", 2], // quality pulled from slot 1
      ["running", 2],
      ["reconfiguring", 3], // quality going back in
      ["running", 3],
    ]);
  });

  it("keeps cards in slot order throughout", () => {
    const store = new ConsoleStore();
    store.applyRaw(transcript.snapshot, 0);
    for (const event of transcript.events) {
      store.applyRaw(event, 1);
      const slots = store.state.stages.map((s) => s.slot);
      expect(slots).toEqual([...slots].sort((a, b) => a - b));
    }
  });

  it("surfaces a rejection as a visible reason and leaves the view unchanged", () => {
    const store = replayStore();
    const before = JSON.stringify({
      phase: store.state.phase,
      stages: store.state.stages,
      missing: store.state.missing,
    });
    store.applyRaw(transcript.rejection, 10_000);
    const after = JSON.stringify({
      phase: store.state.phase,
      stages: store.state.stages,
      missing: store.state.missing,
    });
    expect(after).toBe(before);
    const toast = store.state.toasts.at(-1);
    expect(toast?.kind).toBe("error");
    expect(toast?.message).toContain("OccupiedSlot");
  });

  it("accumulates metrics into a bounded ring buffer", () => {
    const store = replayStore();
    const metricsEvents = transcript.events.filter((e: any) => e.type === "metrics");
    expect(metricsEvents.length).toBeGreaterThan(10);
    expect(store.state.metrics.length).toBeGreaterThan(0);
    expect(store.state.metrics.length).toBeLessThanOrEqual(metricsEvents.length);
    const span =
      store.state.metrics.at(-1)!.atMs - store.state.metrics[0]!.atMs;
    expect(span).toBeLessThanOrEqual(METRICS_WINDOW_MS);
  });
});

describe("single source of truth", () => {
  it("reconnect replays the snapshot without duplicating cards", () => {
    const store = replayStore();
    expect(store.state.stages).toHaveLength(3);
    store.setConnected(false, 20_000);
    store.setConnected(true, 21_000);
    store.applyRaw(transcript.snapshot, 21_001); // server leads with a snapshot
    expect(store.state.stages).toHaveLength(3);
    const slots = store.state.stages.map((s) => s.slot);
    expect(new Set(slots).size).toBe(slots.length);
  });

  it("pending is a visual hint only and clears on the next topology event", () => {
    const store = new ConsoleStore();
    store.applyRaw(transcript.snapshot, 0);
    store.markPending(1);
    expect(store.state.stages.find((s) => s.slot === 1)?.pending).toBe(true);
    expect(store.state.stages).toHaveLength(3); // no optimistic removal
    const nextTopology = transcript.events.find((e: any) => e.type === "topology");
    store.applyRaw(nextTopology, 1);
    expect(store.state.stages.every((s) => !s.pending)).toBe(true);
  });

  it("acks alone change nothing", () => {
    const store = new ConsoleStore();
    store.applyRaw(transcript.snapshot, 0);
    const before = JSON.stringify(store.state.stages);
    store.applyRaw(transcript.remove_ack, 1);
    expect(JSON.stringify(store.state.stages)).toBe(before);
  });
});

describe("robustness", () => {
  it("malformed events raise the error banner and never throw", () => {
    const store = new ConsoleStore();
    store.applyRaw(transcript.snapshot, 0);
    for (const junk of ["{not json", 42, null, { type: "topology", phase: "melting" }, { type: "???" }]) {
      expect(() => store.applyRaw(junk as any, 1)).not.toThrow();
    }
    expect(store.state.errorBanner).toContain("malformed");
    expect(store.state.stages).toHaveLength(3); // view intact
  });

  it("flags staleness after 3 s without events", () => {
    const store = new ConsoleStore();
    store.applyRaw(transcript.snapshot, 1000);
    expect(store.isStale(2000)).toBe(false);
    expect(store.isStale(4500)).toBe(true);
    expect(renderBanner(store.state, true)).toContain("stale");
  });

  it("starts from an explicit empty state", () => {
    const state = initialState();
    expect(state.phase).toBe("unknown");
    expect(renderStages(state)).toContain("no cartridges");
  });
});
