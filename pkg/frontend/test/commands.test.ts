import { describe, expect, it } from "vitest";

import {
  plugCommand,
  reorderCommand,
  sourceRateCommand,
  unplugCommand,
} from "../src/commands.js";

describe("action to command mapping", () => {
  it("unplug emits remove for the slot", () => {
    const cmd = unplugCommand(1);
    expect(cmd.type).toBe("remove");
    expect(cmd.payload).toEqual({ slot: 1 });
    expect(cmd.request_id).toBeTruthy();
  });

  it("plug emits insert with the preset", () => {
    const cmd = plugCommand(3, "database");
    expect(cmd.type).toBe("insert");
    expect(cmd.payload).toEqual({ slot: 3, preset: "database" });
  });

  it("request ids are unique per command", () => {
    expect(unplugCommand(1).request_id).not.toBe(unplugCommand(1).request_id);
  });

  it("drag from position 2 to 0 emits the rotation permutation", () => {
    const cmd = reorderCommand([0, 1, 2], 2, 0);
    expect(cmd.type).toBe("reorder");
    expect(cmd.payload.assignment).toEqual({ "2": 0, "0": 1, "1": 2 });
  });

  it("reorder assignment is always a permutation of the occupied slots", () => {
    const slots = [0, 2, 5];
    for (let from = 0; from < slots.length; from++) {
      for (let to = 0; to < slots.length; to++) {
        const assignment = reorderCommand(slots, from, to).payload.assignment as Record<
          string,
          number
        >;
        expect(Object.keys(assignment).map(Number).sort((a, b) => a - b)).toEqual(slots);
        expect(Object.values(assignment).sort((a, b) => a - b)).toEqual(slots);
      }
    }
  });

  it("adjacent swap moves just the two cards", () => {
    const cmd = reorderCommand([0, 1, 2], 0, 1);
    expect(cmd.payload.assignment).toEqual({ "1": 0, "0": 1, "2": 2 });
  });

  it("source rate maps to set_source_rate", () => {
    const cmd = sourceRateCommand(24);
    expect(cmd.type).toBe("set_source_rate");
    expect(cmd.payload).toEqual({ fps: 24 });
  });
});
