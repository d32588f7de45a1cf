"""Simulated capability cartridges.

A cartridge is a latency-parameterized stub standing in for a real
accelerator module: it walks the plug / handshake / load / ready / busy
lifecycle, and its outputs are synthetic but fully deterministic — a
pure function of (rng_seed, input envelope). Payloads are canonical
JSON so downstream stubs can parse what upstream stubs produce.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

from . import gallery as gallery_mod
from .protocol import (
    Capability,
    CapabilityDescriptor,
    DataFormat,
    FormatKind,
    FrameEnvelope,
    LatencySpec,
    Mode,
    negotiate,
)


class CartridgeError(Exception):
    pass


class WrongState(CartridgeError):
    pass


class FormatMismatch(CartridgeError):
    pass


class UnknownPreset(CartridgeError):
    pass


class CartridgeState(Enum):
    UNPLUGGED = "unplugged"
    HANDSHAKING = "handshaking"
    LOADING_MODEL = "loading_model"
    READY = "ready"
    BUSY = "busy"
    REMOVED = "removed"


# any state may additionally transition to REMOVED
_TRANSITIONS = {
    CartridgeState.UNPLUGGED: {CartridgeState.HANDSHAKING},
    CartridgeState.HANDSHAKING: {CartridgeState.LOADING_MODEL},
    CartridgeState.LOADING_MODEL: {CartridgeState.READY},
    CartridgeState.READY: {CartridgeState.BUSY},
    CartridgeState.BUSY: {CartridgeState.READY},
    CartridgeState.REMOVED: {CartridgeState.HANDSHAKING},
}


def _unit_interval(*keys: int) -> float:
    """Deterministic value in [0, 1) keyed by a tuple of integers."""
    h = hashlib.blake2b(struct.pack(f">{len(keys)}Q", *(k & 0xFFFFFFFFFFFFFFFF for k in keys)),
                        digest_size=8).digest()
    return int.from_bytes(h, "big") / 2**64


def busy_time_ms(descriptor: CapabilityDescriptor, seed: int, sequence: int) -> float:
    """Per-frame processing time, uniform on [mean - jitter, mean + jitter],
    keyed by (seed, sequence) so replays are bit-identical."""
    spec = descriptor.per_frame_latency
    if spec.jitter_ms == 0:
        return float(spec.mean_ms)
    u = _unit_interval(seed, sequence)
    return spec.mean_ms - spec.jitter_ms + 2.0 * spec.jitter_ms * u


# --- canonical payload codecs -------------------------------------------------


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def boxes_payload(boxes: list[dict]) -> bytes:
    return _dumps({"boxes": boxes})


def parse_boxes(payload: bytes) -> list[dict]:
    return json.loads(payload.decode("utf-8"))["boxes"]


def embeddings_payload(entries: list[dict]) -> bytes:
    return _dumps({"embeddings": entries})


def parse_embeddings(payload: bytes) -> list[dict]:
    return json.loads(payload.decode("utf-8"))["embeddings"]


def matches_payload(results: list[dict]) -> bytes:
    return _dumps({"matches": results})


# --- synthetic stage outputs --------------------------------------------------


def _synth_boxes(seed: int, env: FrameEnvelope, tag_subjects: bool) -> list[dict]:
    count = (seed ^ env.sequence) % 5
    boxes = []
    for i in range(count):
        x = round(_unit_interval(seed, env.sequence, i, 1) * 600, 3)
        y = round(_unit_interval(seed, env.sequence, i, 2) * 440, 3)
        w = round(20 + _unit_interval(seed, env.sequence, i, 3) * 120, 3)
        h = round(20 + _unit_interval(seed, env.sequence, i, 4) * 120, 3)
        box = {"x": x, "y": y, "w": w, "h": h}
        if tag_subjects:
            box["subject_id"] = "s%03d" % (int(_unit_interval(seed, env.sequence, i, 5) * 512),)
        boxes.append(box)
    return boxes


def _embedding_dim(descriptor: CapabilityDescriptor) -> int:
    dims = descriptor.output_format.dims
    return int(dims[0]) if dims else 128


def _synth_output(cartridge: "Cartridge", env: FrameEnvelope) -> bytes:
    cap = cartridge.descriptor.capability
    seed = cartridge.rng_seed
    if cap is Capability.OBJECT_DETECTION:
        return boxes_payload(_synth_boxes(seed, env, tag_subjects=False))
    if cap is Capability.FACE_DETECTION:
        return boxes_payload(_synth_boxes(seed, env, tag_subjects=True))
    if cap is Capability.FACE_QUALITY:
        boxes = parse_boxes(env.payload)
        out = []
        for i, box in enumerate(boxes):
            scored = dict(box)
            scored["quality"] = round(_unit_interval(seed, env.sequence, i, 6), 6)
            out.append(scored)
        return boxes_payload(out)
    if cap in (Capability.FACE_RECOGNITION, Capability.GAIT_RECOGNITION):
        d = _embedding_dim(cartridge.descriptor)
        if env.payload_format.kind is FormatKind.BOUNDING_BOX_SET:
            boxes = parse_boxes(env.payload)
            subjects = [
                box.get("subject_id", f"anon-{env.sequence}-{i}") for i, box in enumerate(boxes)
            ]
        else:
            # whole-frame embedding (gait on raw frames)
            subjects = ["s%03d" % ((seed ^ env.sequence) % 512,)]
        entries = [
            {"subject_id": sid, "vector": list(gallery_mod.embed(sid, d))} for sid in subjects
        ]
        return embeddings_payload(entries)
    if cap is Capability.DATABASE_STORAGE:
        entries = parse_embeddings(env.payload)
        results = []
        for entry in entries:
            probe = gallery_mod.Template(
                subject_id=entry.get("subject_id", "probe"),
                embedding=tuple(entry["vector"]),
            )
            hits = gallery_mod.match(
                probe, cartridge.gallery, top_k=cartridge.top_k, threshold=cartridge.threshold
            )
            results.append(
                {
                    "probe": entry.get("subject_id", "probe"),
                    "hits": [
                        {"subject_id": h.subject_id, "score": round(h.score, 9), "rank": h.rank}
                        for h in hits
                    ],
                }
            )
        return matches_payload(results)
    if cap is Capability.PASS_THROUGH:
        return env.payload
    raise CartridgeError(f"no stub for capability {cap!r}")


@dataclass
class Cartridge:
    """One pluggable module: descriptor + lifecycle state + seed."""

    id: int
    descriptor: CapabilityDescriptor
    rng_seed: int
    state: CartridgeState = CartridgeState.UNPLUGGED
    slot: int | None = None
    # database cartridges only
    gallery: list = field(default_factory=list)
    threshold: float = gallery_mod.DEFAULT_FACE_THRESHOLD
    top_k: int = 3

    def _transition(self, target: CartridgeState) -> None:
        if target is CartridgeState.REMOVED:
            self.state = target
            return
        if target not in _TRANSITIONS[self.state]:
            raise WrongState(f"{self.state.value} -> {target.value} is not a legal transition")
        self.state = target

    def plug(self, slot: int) -> None:
        """Physical insertion: the handshake starts immediately."""
        if self.state not in (CartridgeState.UNPLUGGED, CartridgeState.REMOVED):
            raise WrongState(f"cannot plug a cartridge in state {self.state.value}")
        self._transition(CartridgeState.HANDSHAKING)
        self.slot = slot

    def handshake(self) -> CapabilityDescriptor:
        """Report the descriptor; model loading starts now and takes
        descriptor.model_load_ms of simulated time (the caller schedules
        finish_loading)."""
        if self.state is not CartridgeState.HANDSHAKING:
            raise WrongState(f"handshake requires handshaking state, not {self.state.value}")
        self._transition(CartridgeState.LOADING_MODEL)
        return self.descriptor

    def finish_loading(self) -> None:
        if self.state is not CartridgeState.LOADING_MODEL:
            raise WrongState(f"finish_loading requires loading_model state, not {self.state.value}")
        self._transition(CartridgeState.READY)

    def process(self, env: FrameEnvelope) -> tuple[FrameEnvelope, float]:
        """Consume one envelope, produce the stage output and the busy
        time. The cartridge stays Busy until the caller's clock runs
        busy_for and it calls finish_busy."""
        if self.state is not CartridgeState.READY:
            raise WrongState(f"process requires ready state, not {self.state.value}")
        if self.descriptor.capability is not Capability.PASS_THROUGH:
            compat = negotiate(env.payload_format, self.descriptor.input_format)
            if not compat:
                raise FormatMismatch(compat.reason)
        payload = _synth_output(self, env)
        if self.descriptor.capability is Capability.PASS_THROUGH:
            out_format = env.payload_format
        else:
            out_format = self.descriptor.output_format
        out = FrameEnvelope(
            stream_id=env.stream_id,
            sequence=env.sequence,
            payload_format=out_format,
            payload=payload,
            partition_index=env.partition_index,
            partition_count=env.partition_count,
            hop_trail=env.hop_trail + (int(self.descriptor.capability),),
        )
        self._transition(CartridgeState.BUSY)
        return out, busy_time_ms(self.descriptor, self.rng_seed, env.sequence)

    def finish_busy(self) -> None:
        if self.state is not CartridgeState.BUSY:
            raise WrongState(f"finish_busy requires busy state, not {self.state.value}")
        self._transition(CartridgeState.READY)

    def remove(self) -> None:
        self._transition(CartridgeState.REMOVED)
        self.slot = None


def pass_through(env: FrameEnvelope) -> FrameEnvelope:
    """Default bridge for a bypassed stage: identical payload, zero
    simulated latency, pass-through code appended to the trail."""
    return env.with_hop(Capability.PASS_THROUGH)


# --- catalog -------------------------------------------------------------------

_IMAGE_ANY = DataFormat(FormatKind.IMAGE_FRAME)
_BOXES = DataFormat(FormatKind.BOUNDING_BOX_SET)
_EMB128 = DataFormat(FormatKind.EMBEDDING_VECTOR, (128,))
_EMB_ANY = DataFormat(FormatKind.EMBEDDING_VECTOR)
_MATCHES = DataFormat(FormatKind.MATCH_RESULT_SET)
_OPAQUE = DataFormat(FormatKind.OPAQUE)

# Per-frame latencies and load times are synthetic defaults, not
# measurements: 30 ms / 0 jitter everywhere so serial pipelines add up
# predictably, 1500 ms model load for every model-bearing cartridge.
_CATALOG_PRESETS: dict[str, CapabilityDescriptor] = {
    "object-detect": CapabilityDescriptor(
        capability=Capability.OBJECT_DETECTION,
        input_format=_IMAGE_ANY,
        output_format=_BOXES,
        mode=Mode.STREAMING,
        bypassable=True,
        model_load_ms=1500,
        per_frame_latency=LatencySpec(30, 0),
        output_bytes_per_frame=2048,
    ),
    "face-detect": CapabilityDescriptor(
        capability=Capability.FACE_DETECTION,
        input_format=_IMAGE_ANY,
        output_format=_BOXES,
        mode=Mode.STREAMING,
        bypassable=False,
        model_load_ms=1500,
        per_frame_latency=LatencySpec(30, 0),
        output_bytes_per_frame=2048,
    ),
    "face-quality": CapabilityDescriptor(
        capability=Capability.FACE_QUALITY,
        input_format=_BOXES,
        output_format=_BOXES,
        mode=Mode.STREAMING,
        bypassable=True,
        model_load_ms=1500,
        per_frame_latency=LatencySpec(30, 0),
        output_bytes_per_frame=2304,
    ),
    "face-embed": CapabilityDescriptor(
        capability=Capability.FACE_RECOGNITION,
        input_format=_BOXES,
        output_format=_EMB128,
        mode=Mode.STREAMING,
        bypassable=False,
        model_load_ms=1500,
        per_frame_latency=LatencySpec(30, 0),
        output_bytes_per_frame=128 * 4,
    ),
    "gait-embed": CapabilityDescriptor(
        capability=Capability.GAIT_RECOGNITION,
        input_format=_IMAGE_ANY,
        output_format=_EMB128,
        mode=Mode.STREAMING,
        bypassable=False,
        model_load_ms=1500,
        per_frame_latency=LatencySpec(45, 0),
        output_bytes_per_frame=128 * 4,
    ),
    "database": CapabilityDescriptor(
        capability=Capability.DATABASE_STORAGE,
        input_format=_EMB_ANY,
        output_format=_MATCHES,
        mode=Mode.REQUEST_RESPONSE,
        bypassable=False,
        model_load_ms=100,
        per_frame_latency=LatencySpec(5, 0),
        output_bytes_per_frame=512,
    ),
    "passthrough": CapabilityDescriptor(
        capability=Capability.PASS_THROUGH,
        input_format=_OPAQUE,
        output_format=_OPAQUE,
        mode=Mode.STREAMING,
        bypassable=True,
        model_load_ms=0,
        per_frame_latency=LatencySpec(1, 0),
        output_bytes_per_frame=0,
    ),
}

_next_id = 0


def _fresh_id() -> int:
    global _next_id
    _next_id += 1
    return _next_id


def make_cartridge(
    preset: str,
    seed: int = 0,
    *,
    latency_mean_ms: int | None = None,
    latency_jitter_ms: int | None = None,
    catalog: dict[str, CapabilityDescriptor] | None = None,
) -> Cartridge:
    """Instantiate a cartridge from a catalog preset, optionally
    overriding the per-frame latency (experiment knobs)."""
    presets = catalog if catalog is not None else _CATALOG_PRESETS
    if preset not in presets:
        raise UnknownPreset(f"no preset {preset!r}; known: {sorted(presets)}")
    desc = presets[preset]
    if latency_mean_ms is not None or latency_jitter_ms is not None:
        spec = desc.per_frame_latency
        desc = CapabilityDescriptor(
            capability=desc.capability,
            input_format=desc.input_format,
            output_format=desc.output_format,
            mode=desc.mode,
            bypassable=desc.bypassable,
            model_load_ms=desc.model_load_ms,
            per_frame_latency=LatencySpec(
                latency_mean_ms if latency_mean_ms is not None else spec.mean_ms,
                latency_jitter_ms if latency_jitter_ms is not None else spec.jitter_ms,
            ),
            output_bytes_per_frame=desc.output_bytes_per_frame,
        )
    return Cartridge(id=_fresh_id(), descriptor=desc, rng_seed=seed)


def default_catalog() -> dict[str, CapabilityDescriptor]:
    return dict(_CATALOG_PRESETS)


_FORMAT_KIND_NAMES = {k.name.lower(): k for k in FormatKind}


def _format_to_dict(fmt: DataFormat) -> dict:
    out = {"kind": fmt.kind.name.lower()}
    if fmt.dims is not None:
        out["dims"] = list(fmt.dims)
    return out


def _format_from_dict(obj: dict) -> DataFormat:
    return DataFormat(_FORMAT_KIND_NAMES[obj["kind"]], obj.get("dims"))


def descriptor_to_dict(desc: CapabilityDescriptor) -> dict:
    return {
        "capability": int(desc.capability),
        "input_format": _format_to_dict(desc.input_format),
        "output_format": _format_to_dict(desc.output_format),
        "mode": "request_response" if desc.mode is Mode.REQUEST_RESPONSE else "streaming",
        "bypassable": desc.bypassable,
        "model_load_ms": desc.model_load_ms,
        "per_frame_latency": {
            "mean_ms": desc.per_frame_latency.mean_ms,
            "jitter_ms": desc.per_frame_latency.jitter_ms,
        },
        "output_bytes_per_frame": desc.output_bytes_per_frame,
    }


def descriptor_from_dict(obj: dict) -> CapabilityDescriptor:
    desc = CapabilityDescriptor(
        capability=Capability(obj["capability"]),
        input_format=_format_from_dict(obj["input_format"]),
        output_format=_format_from_dict(obj["output_format"]),
        mode=Mode.REQUEST_RESPONSE if obj["mode"] == "request_response" else Mode.STREAMING,
        bypassable=bool(obj["bypassable"]),
        model_load_ms=int(obj["model_load_ms"]),
        per_frame_latency=LatencySpec(
            int(obj["per_frame_latency"]["mean_ms"]),
            int(obj["per_frame_latency"]["jitter_ms"]),
        ),
        output_bytes_per_frame=int(obj["output_bytes_per_frame"]),
    )
    desc.validate()
    return desc


def save_catalog(path, catalog: dict[str, CapabilityDescriptor] | None = None) -> None:
    presets = catalog if catalog is not None else _CATALOG_PRESETS
    payload = {name: descriptor_to_dict(d) for name, d in sorted(presets.items())}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_catalog(path) -> dict[str, CapabilityDescriptor]:
    with open(path) as fh:
        payload = json.load(fh)
    return {name: descriptor_from_dict(obj) for name, obj in payload.items()}


def packaged_catalog() -> dict[str, CapabilityDescriptor]:
    """The catalog shipped with the package (data/catalog.json)."""
    text = resources.files("champ").joinpath("data/catalog.json").read_text()
    return {name: descriptor_from_dict(obj) for name, obj in json.loads(text).items()}
