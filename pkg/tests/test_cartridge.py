import itertools

import pytest

from champ import gallery
from champ.cartridge import (
    Cartridge,
    CartridgeState,
    FormatMismatch,
    UnknownPreset,
    WrongState,
    busy_time_ms,
    default_catalog,
    load_catalog,
    make_cartridge,
    packaged_catalog,
    parse_boxes,
    parse_embeddings,
    pass_through,
    save_catalog,
)
from champ.protocol import Capability, DataFormat, FormatKind, FrameEnvelope, Mode

IMAGE = DataFormat(FormatKind.IMAGE_FRAME, (640, 480, 3))


def image_env(seq, trail=()):
    return FrameEnvelope(
        stream_id=0,
        sequence=seq,
        payload_format=IMAGE,
        payload=b"frame",
        hop_trail=trail,
    )


def ready_cartridge(preset, seed=1, **kw):
    cart = make_cartridge(preset, seed=seed, **kw)
    cart.plug(0)
    cart.handshake()
    cart.finish_loading()
    return cart


# --- state machine -------------------------------------------------------------

# event name -> (states it is legal in, state it lands in)
_EVENT_MODEL = {
    "plug": ({CartridgeState.UNPLUGGED, CartridgeState.REMOVED}, CartridgeState.HANDSHAKING),
    "handshake": ({CartridgeState.HANDSHAKING}, CartridgeState.LOADING_MODEL),
    "finish_loading": ({CartridgeState.LOADING_MODEL}, CartridgeState.READY),
    "process": ({CartridgeState.READY}, CartridgeState.BUSY),
    "finish_busy": ({CartridgeState.BUSY}, CartridgeState.READY),
    "remove": (set(CartridgeState), CartridgeState.REMOVED),
}


def _fire(cart, event):
    if event == "plug":
        cart.plug(0)
    elif event == "handshake":
        cart.handshake()
    elif event == "finish_loading":
        cart.finish_loading()
    elif event == "process":
        cart.process(
            FrameEnvelope(
                stream_id=0, sequence=1, payload_format=DataFormat(FormatKind.OPAQUE), payload=b"x"
            )
        )
    elif event == "finish_busy":
        cart.finish_busy()
    elif event == "remove":
        cart.remove()


def test_state_machine_exhaustive_event_scripts():
    """Model-check every event script of length <= 6 against the
    legal-transition table."""
    events = list(_EVENT_MODEL)
    checked = 0
    for length in range(1, 7):
        for script in itertools.product(events, repeat=length):
            cart = make_cartridge("passthrough", seed=3)
            state = CartridgeState.UNPLUGGED
            for event in script:
                legal_in, target = _EVENT_MODEL[event]
                if state in legal_in:
                    _fire(cart, event)
                    state = target
                else:
                    with pytest.raises(WrongState):
                        _fire(cart, event)
                assert cart.state is state
                checked += 1
    assert checked > 50_000


def test_slot_present_only_while_attached():
    cart = make_cartridge("face-quality", seed=1)
    assert cart.slot is None
    cart.plug(4)
    assert cart.slot == 4
    cart.remove()
    assert cart.slot is None


def test_handshake_reports_descriptor_and_starts_loading():
    cart = make_cartridge("face-quality", seed=1)
    cart.plug(1)
    desc = cart.handshake()
    assert desc.capability is Capability.FACE_QUALITY
    assert desc.model_load_ms == 1500
    assert cart.state is CartridgeState.LOADING_MODEL


def test_passthrough_loads_instantly():
    assert make_cartridge("passthrough").descriptor.model_load_ms == 0


def test_handshake_on_ready_cartridge_is_wrong_state():
    cart = ready_cartridge("face-quality")
    with pytest.raises(WrongState):
        cart.handshake()


# --- processing stubs ------------------------------------------------------------


def test_object_detect_box_count_follows_seed_xor_sequence():
    seed = 11
    cart = ready_cartridge("object-detect", seed=seed)
    for seq in range(10):
        out, _ = cart.process(image_env(seq))
        cart.finish_busy()
        assert len(parse_boxes(out.payload)) == (seed ^ seq) % 5
        assert out.payload_format.kind is FormatKind.BOUNDING_BOX_SET


def test_process_preserves_sequence_and_appends_hop():
    cart = ready_cartridge("face-detect", seed=2)
    out, busy = cart.process(image_env(41))
    assert out.sequence == 41
    assert out.hop_trail == (int(Capability.FACE_DETECTION),)
    assert busy == 30.0


def test_quality_scores_one_per_box_in_unit_interval():
    detect = ready_cartridge("face-detect", seed=9)
    quality = ready_cartridge("face-quality", seed=10)
    for seq in (1, 2, 3, 6):
        boxes_env, _ = detect.process(image_env(seq))
        detect.finish_busy()
        scored_env, _ = quality.process(boxes_env)
        quality.finish_busy()
        boxes = parse_boxes(boxes_env.payload)
        scored = parse_boxes(scored_env.payload)
        assert len(scored) == len(boxes)
        assert all(0.0 <= b["quality"] <= 1.0 for b in scored)


def test_face_recognition_emits_gallery_embedding_per_subject():
    detect = ready_cartridge("face-detect", seed=5)
    embedder = ready_cartridge("face-embed", seed=6)
    boxes_env, _ = detect.process(image_env(3))
    detect.finish_busy()
    out, _ = embedder.process(boxes_env)
    embedder.finish_busy()
    boxes = parse_boxes(boxes_env.payload)
    entries = parse_embeddings(out.payload)
    assert len(entries) == len(boxes)
    for box, entry in zip(boxes, entries):
        assert entry["subject_id"] == box["subject_id"]
        assert tuple(entry["vector"]) == gallery.embed(box["subject_id"], 128)


def test_database_stage_matches_against_its_gallery():
    detect = ready_cartridge("face-detect", seed=5)
    embedder = ready_cartridge("face-embed", seed=6)
    db = ready_cartridge("database", seed=7)
    boxes_env, _ = detect.process(image_env(6))
    detect.finish_busy()
    emb_env, _ = embedder.process(boxes_env)
    embedder.finish_busy()

    subjects = [e["subject_id"] for e in parse_embeddings(emb_env.payload)]
    assert subjects, "need at least one detected face for this sequence"
    db.gallery = [
        gallery.Template(subject_id=s, embedding=gallery.embed(s, 128)) for s in subjects
    ]
    out, _ = db.process(emb_env)
    results = [r["hits"] for r in __import__("json").loads(out.payload)["matches"]]
    for subject, hits in zip(subjects, results):
        assert hits[0]["subject_id"] == subject
        assert hits[0]["score"] == pytest.approx(1.0)


def test_process_rejects_incompatible_input():
    embedder = ready_cartridge("face-embed", seed=1)
    with pytest.raises(FormatMismatch):
        embedder.process(image_env(0))


def test_process_requires_ready():
    cart = make_cartridge("face-detect", seed=1)
    cart.plug(0)
    with pytest.raises(WrongState):
        cart.process(image_env(0))


# --- pass-through ------------------------------------------------------------------


def test_pass_through_is_identity_on_payload():
    env = image_env(12, trail=(int(Capability.FACE_DETECTION),))
    out = pass_through(env)
    assert out.payload == env.payload
    assert out.sequence == env.sequence
    assert out.hop_trail == env.hop_trail + (int(Capability.PASS_THROUGH),)


def test_pass_through_chain_preserves_payload():
    env = image_env(1)
    twice = pass_through(pass_through(env))
    assert twice.payload == pass_through(env).payload == env.payload


# --- determinism ---------------------------------------------------------------------


def test_equal_seed_cartridges_produce_identical_streams():
    a = ready_cartridge("face-detect", seed=77)
    b = ready_cartridge("face-detect", seed=77)
    for seq in range(20):
        out_a, busy_a = a.process(image_env(seq))
        a.finish_busy()
        out_b, busy_b = b.process(image_env(seq))
        b.finish_busy()
        assert out_a.payload == out_b.payload
        assert busy_a == busy_b


def test_different_seeds_differ():
    a = ready_cartridge("face-detect", seed=1)
    b = ready_cartridge("face-detect", seed=2)
    payloads_a = []
    payloads_b = []
    for seq in range(8):
        out, _ = a.process(image_env(seq))
        a.finish_busy()
        payloads_a.append(out.payload)
        out, _ = b.process(image_env(seq))
        b.finish_busy()
        payloads_b.append(out.payload)
    assert payloads_a != payloads_b


def test_busy_time_realizes_descriptor_mean():
    cart = make_cartridge("face-detect", seed=123, latency_mean_ms=30, latency_jitter_ms=10)
    desc = cart.descriptor
    samples = [busy_time_ms(desc, cart.rng_seed, seq) for seq in range(10_000)]
    mean = sum(samples) / len(samples)
    assert abs(mean - 30.0) / 30.0 < 0.02
    assert all(20.0 <= s <= 40.0 for s in samples)


def test_busy_time_without_jitter_is_exact():
    desc = make_cartridge("face-detect", seed=1).descriptor
    assert busy_time_ms(desc, 99, 5) == 30.0


# --- catalog -----------------------------------------------------------------------------


def test_packaged_catalog_matches_defaults():
    assert packaged_catalog() == default_catalog()


def test_catalog_round_trip(tmp_path):
    path = tmp_path / "catalog.json"
    save_catalog(path)
    assert load_catalog(path) == default_catalog()


def test_catalog_modes():
    catalog = default_catalog()
    for name, desc in catalog.items():
        desc.validate()
        if desc.capability is Capability.DATABASE_STORAGE:
            assert desc.mode is Mode.REQUEST_RESPONSE
        else:
            assert desc.mode is Mode.STREAMING


def test_catalog_bypass_policy():
    catalog = default_catalog()
    assert catalog["face-quality"].bypassable
    assert catalog["object-detect"].bypassable
    assert not catalog["face-detect"].bypassable
    assert not catalog["face-embed"].bypassable
    assert not catalog["database"].bypassable


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        make_cartridge("telepathy")
