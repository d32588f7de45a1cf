"""Pipeline orchestrator: enumerates cartridges, builds the linear
pipeline in slot order, routes envelopes between stages with
credit-based backpressure, and executes hot-swap without losing data.

Everything advances on a single discrete-event clock (bus.EventQueue),
so runs are bit-reproducible. Structural changes (insert / remove /
reorder) are totally ordered: at most one reconfiguration is in flight,
later ones queue behind it.

Routing rules:
  * every handoff into a stage costs HANDOFF_MS (routing + buffer copy);
    delivery from the last stage into the sink is free, and an empty
    pipeline charges one source-to-sink handoff;
  * a producer may have at most min(capacity, credits) unacknowledged
    envelopes in flight toward a consumer; acknowledgment happens when
    the consumer dequeues;
  * while a reconfiguration is in flight, newly accepted envelopes are
    held back and re-injected through the rebuilt pipeline after resume;
    envelopes already mid-pipeline keep draining through the stages that
    remain, and traffic that would have crossed the vanished position is
    intercepted in arrival order by a gap buffer until the pipeline is
    rebuilt.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field

from .bus import EventQueue
from .cartridge import Cartridge, CartridgeState
from .protocol import (
    Capability,
    CapabilityDescriptor,
    DataFormat,
    FormatKind,
    FrameEnvelope,
    negotiate,
)

HANDOFF_MS = 1.5
RECONFIGURE_BUDGET_MS = 500.0
HOLDBACK_CAPACITY = 256
DEFAULT_LINK_CAPACITY = 8

_SINK = None  # routing target for "past the last stage"


class KernelError(Exception):
    pass


class DuplicateSlot(KernelError):
    pass


class EmptySlot(KernelError):
    pass


class OccupiedSlot(KernelError):
    pass


class UnknownLink(KernelError):
    pass


class BadPermutation(KernelError):
    pass


class PipelineFormatError(KernelError):
    """Adjacent stages advertise incompatible formats."""

    def __init__(self, producer_slot, consumer_slot, out_format, in_format, reason):
        self.producer_slot = producer_slot
        self.consumer_slot = consumer_slot
        self.out_format = out_format
        self.in_format = in_format
        super().__init__(f"slot {producer_slot} -> slot {consumer_slot}: {reason}")


@dataclass(frozen=True)
class StageSpec:
    slot: int
    cartridge_id: int
    descriptor: CapabilityDescriptor


@dataclass(frozen=True)
class LinkSpec:
    producer_slot: int
    consumer_slot: int
    format: DataFormat
    capacity: int
    credits: int


@dataclass(frozen=True)
class PipelineGraph:
    stages: tuple[StageSpec, ...]
    links: tuple[LinkSpec, ...]


@dataclass(frozen=True)
class Alert:
    at_ms: float
    severity: str
    message: str


@dataclass(frozen=True)
class SwapOutcome:
    kind: str  # insert | remove | reorder
    slot: int | None
    accepted: bool
    at_ms: float
    pause_ms: float | None = None  # None: rejected, queued, or open-ended (degraded)
    reason: str | None = None
    queued: bool = False


@dataclass
class _StageRuntime:
    cartridge: Cartridge
    capacity: int
    credits: int
    inbox: deque = field(default_factory=deque)
    transit: int = 0
    busy: bool = False
    current_in: FrameEnvelope | None = None
    current_out: FrameEnvelope | None = None
    out_pending: FrameEnvelope | None = None
    generation: int = 0


def enumerate_cartridges(plugged: list[Cartridge]) -> dict[int, Cartridge]:
    """Order plugged cartridges by slot. Slots must be distinct."""
    by_slot: dict[int, Cartridge] = {}
    for cart in plugged:
        if cart.slot is None:
            raise KernelError(f"cartridge {cart.id} has no slot")
        if cart.slot in by_slot:
            raise DuplicateSlot(f"two cartridges claim slot {cart.slot}")
        by_slot[cart.slot] = cart
    return dict(sorted(by_slot.items()))


def build_pipeline(
    slot_map: dict[int, Cartridge],
    capacity: int = DEFAULT_LINK_CAPACITY,
) -> PipelineGraph:
    """Validate formats along the slot order and produce the graph.
    All cartridges must be Ready."""
    ordered = sorted(slot_map.items())
    for slot, cart in ordered:
        if cart.state is not CartridgeState.READY:
            raise KernelError(f"cartridge in slot {slot} is {cart.state.value}, not ready")
    stages = tuple(StageSpec(slot, cart.id, cart.descriptor) for slot, cart in ordered)
    links = []
    for (s_a, a), (s_b, b) in zip(ordered, ordered[1:]):
        compat = negotiate(a.descriptor.output_format, b.descriptor.input_format)
        if not compat:
            raise PipelineFormatError(
                s_a, s_b, a.descriptor.output_format, b.descriptor.input_format, compat.reason
            )
        links.append(LinkSpec(s_a, s_b, a.descriptor.output_format, capacity, capacity))
    return PipelineGraph(stages=stages, links=tuple(links))


class Kernel:
    """Single-clock pipeline orchestrator.

    The instance is owned by one simulation loop; feed control commands
    through apply_* (or schedule_hotplug for scripted runs) and advance
    time with run_until / run_to_quiescence.
    """

    def __init__(
        self,
        queue: EventQueue | None = None,
        *,
        link_capacity: int = DEFAULT_LINK_CAPACITY,
        holdback_capacity: int = HOLDBACK_CAPACITY,
        handoff_ms: float = HANDOFF_MS,
        reconfigure_ms: float = RECONFIGURE_BUDGET_MS,
    ):
        self.queue = queue or EventQueue()
        self.link_capacity = link_capacity
        self.holdback_capacity = holdback_capacity
        self.handoff_ms = handoff_ms
        self.reconfigure_ms = reconfigure_ms

        self.slots: dict[int, Cartridge] = {}
        self._rt: dict[int, _StageRuntime] = {}
        self.order: list[int] = []  # routing order; rebuilt only at resume
        self._gaps: dict[int, deque] = {}

        self.phase = "running"
        self.reconfig_deadline: float | None = None
        self.missing: set[Capability] = set()
        self._pending_swaps: deque = deque()

        self.holdback: deque[FrameEnvelope] = deque()
        self.alerts: list[Alert] = []
        self.phase_log: list[tuple[float, str, str]] = [(0.0, "running", "boot")]
        self.swap_log: list[SwapOutcome] = []

        self.sink: list[tuple[float, FrameEnvelope]] = []
        self.accepted: Counter = Counter()
        self.ingress_time: dict[tuple[int, int], float] = {}
        self.latencies: list[tuple[int, float]] = []  # (sequence, sink latency ms)

        # source
        self.source_period_ms: float = 100.0
        self.source_frames_left: int = 0
        self.source_format: DataFormat = DataFormat(FormatKind.IMAGE_FRAME, (640, 480, 3))
        self.source_stream_id: int = 0
        self._source_feed: deque[FrameEnvelope] | None = None
        self._next_sequence: int = 0
        self._source_stalled = False
        self._source_scheduled = False

    # --- construction ------------------------------------------------------

    def boot(self, cartridges: list[Cartridge]) -> "Kernel":
        """Enumerate, handshake, and load every plugged cartridge; build
        the initial pipeline once all are ready. Advances the clock by
        the longest model-load time."""
        slot_map = enumerate_cartridges(cartridges)
        for slot, cart in slot_map.items():
            desc = cart.handshake()
            self.slots[slot] = cart
            self._rt[slot] = _StageRuntime(
                cartridge=cart, capacity=self.link_capacity, credits=self.link_capacity
            )
            self.queue.schedule(self.queue.now + desc.model_load_ms, ("loaded", slot, cart.id))
        while any(c.state is not CartridgeState.READY for c in self.slots.values()):
            popped = self.queue.step()
            if popped is None:
                raise KernelError("load events exhausted before all cartridges ready")
            at, event = popped
            self._dispatch(event, at)
        build_pipeline(self.slots, self.link_capacity)  # validates adjacent formats
        self.order = sorted(self.slots)
        return self

    def graph(self) -> PipelineGraph:
        stages = tuple(
            StageSpec(slot, self.slots[slot].id, self.slots[slot].descriptor)
            for slot in sorted(self.slots)
        )
        links = []
        ordered = sorted(self.slots)
        for a, b in zip(ordered, ordered[1:]):
            links.append(
                LinkSpec(
                    a,
                    b,
                    self.slots[a].descriptor.output_format,
                    self._rt[b].capacity,
                    self._rt[b].credits,
                )
            )
        return PipelineGraph(stages=stages, links=tuple(links))

    # --- source --------------------------------------------------------------

    def start_source(
        self,
        period_ms: float,
        n_frames: int,
        *,
        payload_format: DataFormat | None = None,
        feed: list[FrameEnvelope] | None = None,
    ) -> None:
        self.source_period_ms = period_ms
        if feed is not None:
            self._source_feed = deque(feed)
            self.source_frames_left = len(feed)
        else:
            self.source_frames_left = n_frames
        if payload_format is not None:
            self.source_format = payload_format
        self._schedule_source(self.queue.now)

    def set_source_rate(self, fps: float) -> None:
        if fps <= 0:
            raise KernelError("source rate must be > 0 fps")
        self.source_period_ms = 1000.0 / fps

    def _schedule_source(self, at: float) -> None:
        if not self._source_scheduled:
            self._source_scheduled = True
            self.queue.schedule(at, ("source",))

    def _next_envelope(self) -> FrameEnvelope:
        if self._source_feed is not None:
            return self._source_feed.popleft()
        seq = self._next_sequence
        self._next_sequence += 1
        return FrameEnvelope(
            stream_id=self.source_stream_id,
            sequence=seq,
            payload_format=self.source_format,
            payload=seq.to_bytes(8, "big"),
        )

    def _emit_source(self, t: float) -> None:
        self._source_scheduled = False
        if self.source_frames_left <= 0:
            return
        # ingress stays FIFO: while held envelopes exist, new ones join them
        to_holdback = self.phase != "running" or bool(self.holdback)
        if to_holdback:
            if len(self.holdback) >= self.holdback_capacity:
                self._source_stalled = True
                return
        else:
            target = self.order[0] if self.order else _SINK
            if target is not _SINK and not self._can_send(target):
                self._source_stalled = True
                return
        env = self._next_envelope()
        self.source_frames_left -= 1
        self.accepted[env.sequence] += 1
        self.ingress_time[(env.stream_id, env.sequence)] = t
        if to_holdback:
            self.holdback.append(env)
        else:
            self._send(self.order[0] if self.order else _SINK, env, t)
        if self.source_frames_left > 0:
            self._schedule_source(t + self.source_period_ms)

    def _unstall_source(self, t: float) -> None:
        if self._source_stalled and self.source_frames_left > 0:
            self._source_stalled = False
            self._schedule_source(t)

    # --- routing ---------------------------------------------------------------

    def _can_send(self, slot) -> bool:
        rt = self._rt.get(slot)
        if rt is None:
            return True  # vanished stage: the gap buffer absorbs anything
        return len(rt.inbox) + rt.transit < min(rt.capacity, rt.credits)

    def _send(self, target, env: FrameEnvelope, t: float) -> None:
        """Hand an envelope toward a stage (handoff delay) or the sink."""
        if target is _SINK:
            # the only charged source-to-sink hop is the empty pipeline
            delay = self.handoff_ms if not self.order else 0.0
            self.queue.schedule(t + delay, ("deliver", _SINK, env))
            return
        rt = self._rt.get(target)
        if rt is not None:
            rt.transit += 1
        self.queue.schedule(t + self.handoff_ms, ("deliver", target, env))

    def _next_active_after(self, slot: int) -> int | None:
        for s in self.order:
            if s > slot and s in self._rt:
                return s
        return None

    def _downstream_of(self, slot: int):
        idx = self.order.index(slot)
        return self.order[idx + 1] if idx + 1 < len(self.order) else _SINK

    def _upstream_of(self, slot: int):
        if slot not in self.order:
            return None
        idx = self.order.index(slot)
        for s in reversed(self.order[:idx]):
            if s in self._rt:
                return s
        return None

    def _deliver(self, target, env: FrameEnvelope, t: float) -> None:
        if target is _SINK:
            self._deliver_sink(env, t)
            return
        if target in self._gaps:
            # a stage was pulled from this position; hold everything that
            # would have crossed it, in arrival order
            self._gaps[target].append(env)
            return
        rt = self._rt.get(target)
        if rt is None:
            # stage vanished while the envelope was in flight and the gap
            # is already resolved; continue past the dead position
            nxt = self._next_active_after(target)
            if nxt is None:
                self._deliver_sink(env, t)
            elif nxt in self._gaps:
                self._gaps[nxt].append(env)
            else:
                self._rt[nxt].inbox.append(env)
                if nxt in self.order:
                    self._try_start(nxt, t)
            return
        rt.transit = max(0, rt.transit - 1)
        rt.inbox.append(env)
        if target in self.order:
            self._try_start(target, t)

    def _deliver_sink(self, env: FrameEnvelope, t: float) -> None:
        self.sink.append((t, env))
        key = (env.stream_id, env.sequence)
        if key in self.ingress_time:
            self.latencies.append((env.sequence, t - self.ingress_time[key]))

    def _try_start(self, slot: int, t: float) -> None:
        rt = self._rt.get(slot)
        if rt is None or rt.busy or rt.out_pending is not None or not rt.inbox:
            return
        if rt.cartridge.state is not CartridgeState.READY:
            return
        env = rt.inbox.popleft()  # the ack: frees one credit upstream
        self._on_dequeue(slot, t)
        out, busy_ms = rt.cartridge.process(env)
        rt.busy = True
        rt.current_in = env
        rt.current_out = out
        self.queue.schedule(t + busy_ms, ("finish", slot, rt.generation))

    def _on_dequeue(self, slot: int, t: float) -> None:
        """Capacity freed at `slot`: wake whoever was blocked on it."""
        if self.order and slot == self.order[0]:
            self._pump_ingress(t)
            return
        prev = self._upstream_of(slot)
        if prev is None:
            return
        prt = self._rt[prev]
        if prt.out_pending is not None:
            target = self._downstream_of(prev)
            if self._can_send(target):
                out = prt.out_pending
                prt.out_pending = None
                self._send(target, out, t)
                self._try_start(prev, t)

    def _pump_ingress(self, t: float) -> None:
        """Drain held-back envelopes into the head of the pipeline, then
        let the source move again."""
        if self.phase != "running":
            return
        head = self.order[0] if self.order else _SINK
        while self.holdback and (head is _SINK or self._can_send(head)):
            env = self.holdback.popleft()
            self._send(head, env, t)
        if not self.holdback:
            self._unstall_source(t)

    def _finish(self, slot: int, generation: int, t: float) -> None:
        rt = self._rt.get(slot)
        if rt is None or rt.generation != generation or not rt.busy:
            return  # the stage was removed while processing
        rt.cartridge.finish_busy()
        rt.busy = False
        out = rt.current_out
        rt.current_in = None
        rt.current_out = None
        target = self._downstream_of(slot) if slot in self.order else _SINK
        if target is _SINK:
            self._deliver_sink(out, t)
        elif self._can_send(target):
            self._send(target, out, t)
        else:
            rt.out_pending = out
        self._try_start(slot, t)

    # --- backpressure ------------------------------------------------------------

    def throttle_link(self, link_index: int, credit_delta: int) -> int:
        """Adjust the credit window of link link_index (stage i -> i+1);
        index -1 addresses the source -> first stage link. Credits clamp
        at zero. Returns the new credit count."""
        if not self.order:
            raise UnknownLink("pipeline has no links")
        if link_index == -1:
            consumer = self.order[0]
        elif 0 <= link_index < len(self.order) - 1:
            consumer = self.order[link_index + 1]
        else:
            raise UnknownLink(f"no link {link_index} in a {len(self.order)}-stage pipeline")
        rt = self._rt[consumer]
        rt.credits = max(0, rt.credits + credit_delta)
        if credit_delta > 0:
            self._retry_blocked(self.queue.now)
        return rt.credits

    def _retry_blocked(self, t: float) -> None:
        """Re-attempt handoffs that were blocked on a window that has
        since widened (credits raised, capacity freed at resume)."""
        for slot in self.order:
            rt = self._rt.get(slot)
            if rt is None or rt.out_pending is None:
                continue
            target = self._downstream_of(slot)
            if self._can_send(target):
                out = rt.out_pending
                rt.out_pending = None
                self._send(target, out, t)
                self._try_start(slot, t)
        self._pump_ingress(t)

    # --- hot-swap ------------------------------------------------------------------

    def _log_phase(self, t: float, detail: str) -> None:
        self.phase_log.append((t, self.phase, detail))

    def _alert(self, t: float, severity: str, message: str) -> None:
        self.alerts.append(Alert(at_ms=t, severity=severity, message=message))

    def _bridgeable_without(self, slot: int) -> bool:
        remaining = sorted(s for s in self.slots if s != slot)
        pairs = zip(remaining, remaining[1:])
        for a, b in pairs:
            if not negotiate(
                self.slots[a].descriptor.output_format, self.slots[b].descriptor.input_format
            ):
                return False
        if remaining and not negotiate(
            self.source_format, self.slots[remaining[0]].descriptor.input_format
        ):
            return False
        return True

    def apply_remove(self, slot: int) -> SwapOutcome:
        t = self.queue.now
        if self.phase == "reconfiguring":
            self._pending_swaps.append(("remove", slot, None))
            outcome = SwapOutcome("remove", slot, True, t, queued=True)
            self.swap_log.append(outcome)
            return outcome
        if slot not in self.slots:
            raise EmptySlot(f"slot {slot} is empty")
        cart = self.slots[slot]
        rt = self._rt[slot]
        bypassable = cart.descriptor.bypassable
        capability = cart.descriptor.capability

        # reclaim whatever the stage had not finished: the in-progress
        # input is requeued unprocessed, the blocked output continues
        # downstream as a normal (late) handoff
        held = deque()
        if rt.busy:
            rt.generation += 1
            held.append(rt.current_in)
        held.extend(rt.inbox)
        if rt.out_pending is not None:
            self._send(self._downstream_of(slot), rt.out_pending, t)

        # bypassable only helps if the remaining stages still line up:
        # bridge the gap when formats negotiate, otherwise halt and alert
        bridgeable = bypassable and self._bridgeable_without(slot)

        cart.remove()
        del self.slots[slot]
        del self._rt[slot]
        self._gaps[slot] = held  # intercepts traffic routed at this position

        if bridgeable:
            self.phase = "reconfiguring"
            self.reconfig_deadline = t + self.reconfigure_ms
            self._log_phase(t, f"remove slot {slot} ({capability.name})")
            self.queue.schedule(self.reconfig_deadline, ("resume",))
            self._unstall_source(t)
            outcome = SwapOutcome("remove", slot, True, t, pause_ms=self.reconfigure_ms)
        else:
            self.missing.add(capability)
            self.phase = "degraded"
            self.reconfig_deadline = None
            self._log_phase(t, f"remove slot {slot} ({capability.name})")
            self._alert(
                t,
                "error",
                f"capability {capability.name} missing: pipeline halted at slot {slot}",
            )
            self._unstall_source(t)  # ingress now goes to holdback
            outcome = SwapOutcome("remove", slot, True, t, pause_ms=None)
        self.swap_log.append(outcome)
        return outcome

    def apply_insert(self, slot: int, cartridge: Cartridge) -> SwapOutcome:
        t = self.queue.now
        if self.phase == "reconfiguring":
            self._pending_swaps.append(("insert", slot, cartridge))
            outcome = SwapOutcome("insert", slot, True, t, queued=True)
            self.swap_log.append(outcome)
            return outcome
        if slot in self.slots:
            raise OccupiedSlot(f"slot {slot} is occupied")
        cartridge.plug(slot)
        desc = cartridge.handshake()

        prospective = sorted(set(self.slots) | {slot})
        idx = prospective.index(slot)
        reason = None
        if idx > 0:
            prev = self.slots[prospective[idx - 1]].descriptor
            compat = negotiate(prev.output_format, desc.input_format)
            if not compat:
                reason = f"upstream slot {prospective[idx - 1]}: {compat.reason}"
        else:
            compat = negotiate(self.source_format, desc.input_format)
            if not compat:
                reason = f"source: {compat.reason}"
        if reason is None and idx + 1 < len(prospective):
            nxt = self.slots[prospective[idx + 1]].descriptor
            compat = negotiate(desc.output_format, nxt.input_format)
            if not compat:
                reason = f"downstream slot {prospective[idx + 1]}: {compat.reason}"

        if reason is not None:
            cartridge.remove()
            self._alert(t, "warning", f"insertion at slot {slot} rejected: {reason}")
            outcome = SwapOutcome("insert", slot, False, t, reason=reason)
            self.swap_log.append(outcome)
            return outcome

        self.slots[slot] = cartridge
        self._rt[slot] = _StageRuntime(
            cartridge=cartridge, capacity=self.link_capacity, credits=self.link_capacity
        )
        self.queue.schedule(t + desc.model_load_ms, ("loaded", slot, cartridge.id))
        pause = self.reconfigure_ms + desc.model_load_ms
        self.phase = "reconfiguring"
        self.reconfig_deadline = t + pause
        self._log_phase(t, f"insert slot {slot} ({desc.capability.name})")
        self.queue.schedule(self.reconfig_deadline, ("resume",))
        self._unstall_source(t)
        outcome = SwapOutcome("insert", slot, True, t, pause_ms=pause)
        self.swap_log.append(outcome)
        return outcome

    def apply_reorder(self, assignment: dict[int, int]) -> SwapOutcome:
        """Move cartridges between slots; assignment maps old slot to new
        slot and must be a permutation of the occupied slots."""
        t = self.queue.now
        if self.phase == "reconfiguring":
            self._pending_swaps.append(("reorder", None, dict(assignment)))
            outcome = SwapOutcome("reorder", None, True, t, queued=True)
            self.swap_log.append(outcome)
            return outcome
        occupied = set(self.slots)
        if set(assignment) != occupied or set(assignment.values()) != occupied:
            raise BadPermutation(
                f"assignment {assignment} is not a permutation of occupied slots "
                f"{sorted(occupied)}"
            )
        new_slots = {assignment[s]: cart for s, cart in self.slots.items()}
        reason = None
        ordered = sorted(new_slots.items())
        for (s_a, a), (s_b, b) in zip(ordered, ordered[1:]):
            compat = negotiate(a.descriptor.output_format, b.descriptor.input_format)
            if not compat:
                reason = f"slot {s_a} -> slot {s_b}: {compat.reason}"
                break
        if reason is None and ordered:
            compat = negotiate(self.source_format, ordered[0][1].descriptor.input_format)
            if not compat:
                reason = f"source -> slot {ordered[0][0]}: {compat.reason}"
        if reason is not None:
            self._alert(t, "warning", f"reorder rejected: {reason}")
            outcome = SwapOutcome("reorder", None, False, t, reason=reason)
            self.swap_log.append(outcome)
            return outcome

        self._rt = {assignment[s]: rt for s, rt in self._rt.items()}
        self.slots = new_slots
        for new_slot, cart in self.slots.items():
            cart.slot = new_slot
        self.phase = "reconfiguring"
        self.reconfig_deadline = t + self.reconfigure_ms
        self._log_phase(t, f"reorder {assignment}")
        self.queue.schedule(self.reconfig_deadline, ("resume",))
        self._unstall_source(t)
        outcome = SwapOutcome("reorder", None, True, t, pause_ms=self.reconfigure_ms)
        self.swap_log.append(outcome)
        return outcome

    def _resume(self, t: float) -> None:
        self.order = sorted(self.slots)
        self.reconfig_deadline = None

        # a reoccupied slot inherits the envelopes held at its position
        for slot in sorted(self._gaps):
            if slot in self.slots:
                held = self._gaps.pop(slot)
                self._rt[slot].inbox.extendleft(reversed(held))

        for cap in list(self.missing):
            if any(c.descriptor.capability is cap for c in self.slots.values()):
                self.missing.discard(cap)

        # gaps at still-empty positions: once nothing required is missing,
        # their envelopes continue past the vanished stage
        if not self.missing:
            for slot in sorted(self._gaps):
                held = self._gaps.pop(slot)
                nxt = self._next_active_after(slot)
                for env in held:
                    if nxt is None:
                        self._deliver_sink(env, t)
                    else:
                        self._rt[nxt].inbox.append(env)

        self.phase = "degraded" if self.missing else "running"
        self._log_phase(t, "resume")

        if self._pending_swaps:
            kind, slot, payload = self._pending_swaps.popleft()
            if kind == "remove":
                self.apply_remove(slot)
            elif kind == "insert":
                self.apply_insert(slot, payload)
            else:
                self.apply_reorder(payload)

        if self.phase == "running":
            for slot in self.order:
                self._try_start(slot, t)
            self._pump_ingress(t)

    # --- event loop ------------------------------------------------------------------

    def _dispatch(self, event, t: float) -> None:
        kind = event[0]
        if kind == "source":
            self._emit_source(t)
        elif kind == "deliver":
            self._deliver(event[1], event[2], t)
        elif kind == "finish":
            self._finish(event[1], event[2], t)
        elif kind == "loaded":
            slot, cart_id = event[1], event[2]
            cart = self.slots.get(slot)
            if cart is not None and cart.id == cart_id:
                cart.finish_loading()
                if slot in self.order:
                    self._try_start(slot, t)
        elif kind == "resume":
            self._resume(t)
        elif kind == "hotplug":
            action, slot, payload = event[1], event[2], event[3]
            if action == "remove":
                self.apply_remove(slot)
            elif action == "insert":
                self.apply_insert(slot, payload)
            elif action == "rate":
                self.set_source_rate(payload)
            else:
                raise KernelError(f"unknown hotplug action {action!r}")
        else:
            raise KernelError(f"unknown event {event!r}")

    def schedule_hotplug(self, at_ms: float, action: str, slot: int | None, payload=None) -> None:
        self.queue.schedule(at_ms, ("hotplug", action, slot, payload))

    def run_until(self, t_ms: float) -> None:
        while True:
            nxt = self.queue.peek_time()
            if nxt is None or nxt > t_ms:
                break
            at, event = self.queue.step()
            self._dispatch(event, at)
        if t_ms > self.queue.now:
            self.queue.now = t_ms

    def run_to_quiescence(self) -> None:
        while True:
            popped = self.queue.step()
            if popped is None:
                return
            at, event = popped
            self._dispatch(event, at)

    def route(self, envelopes: list[FrameEnvelope], period_ms: float = 0.0) -> list[FrameEnvelope]:
        """Feed the given envelopes through the pipeline and run to
        completion; returns the sink stream in arrival order."""
        if envelopes:
            self.source_format = envelopes[0].payload_format
        self.start_source(period_ms, len(envelopes), feed=envelopes)
        self.run_to_quiescence()
        return [env for _, env in self.sink]

    # --- accounting --------------------------------------------------------------------

    def sink_sequences(self) -> Counter:
        return Counter(env.sequence for _, env in self.sink)

    def frames_lost(self) -> int:
        """Accepted-minus-delivered by sequence-number multiset, net of
        envelopes still held inside the pipeline. Zero on any drained
        run means true no-loss."""
        undelivered = sum((self.accepted - self.sink_sequences()).values())
        return undelivered - self.pending_frames()

    def pending_frames(self) -> int:
        in_stages = sum(
            len(rt.inbox)
            + rt.transit
            + (1 if rt.busy else 0)
            + (1 if rt.out_pending is not None else 0)
            for rt in self._rt.values()
        )
        in_gaps = sum(len(g) for g in self._gaps.values())
        return in_stages + in_gaps + len(self.holdback)

    def link_depths(self) -> dict[int, int]:
        return {slot: len(rt.inbox) for slot, rt in self._rt.items()}

    def reconfiguring_intervals(self) -> list[tuple[float, float]]:
        """[(start, end)] of every completed reconfiguring phase."""
        out = []
        start = None
        for t, phase, _ in self.phase_log:
            if phase == "reconfiguring" and start is None:
                start = t
            elif phase != "reconfiguring" and start is not None:
                out.append((start, t))
                start = None
        return out
