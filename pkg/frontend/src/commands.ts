// User actions map one-to-one onto control commands. The console never
// edits its own view in response to these; it waits for server events.

import { ControlCommand } from "./protocol.js";

let counter = 0;

export function freshRequestId(): string {
  counter += 1;
  return `ui-${Date.now().toString(36)}-${counter}`;
}

export function plugCommand(slot: number, preset: string): ControlCommand {
  return { type: "insert", request_id: freshRequestId(), payload: { slot, preset } };
}

export function unplugCommand(slot: number): ControlCommand {
  return { type: "remove", request_id: freshRequestId(), payload: { slot } };
}

/**
 * Drag-reorder: the operator dragged the card at `fromIndex` so it now
 * sits at `toIndex`. Slots themselves stay where they are; the
 * assignment permutes which cartridge occupies which slot.
 */
export function reorderCommand(occupiedSlots: number[], fromIndex: number, toIndex: number): ControlCommand {
  const slots = [...occupiedSlots].sort((a, b) => a - b);
  const order = [...slots];
  const [moved] = order.splice(fromIndex, 1);
  order.splice(toIndex, 0, moved!);
  // order[i] is the cartridge (named by its old slot) now living at slots[i]
  const assignment: Record<string, number> = {};
  order.forEach((oldSlot, i) => {
    assignment[String(oldSlot)] = slots[i]!;
  });
  return { type: "reorder", request_id: freshRequestId(), payload: { assignment } };
}

export function sourceRateCommand(fps: number): ControlCommand {
  return { type: "set_source_rate", request_id: freshRequestId(), payload: { fps } };
}
