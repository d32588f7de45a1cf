import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from champ.gallery import (
    AuthFailure,
    BadDimension,
    BadKey,
    DimensionMismatch,
    EncryptedGallery,
    GalleryError,
    MatchResult,
    Modality,
    Template,
    ZeroVector,
    container_from_bytes,
    container_to_bytes,
    cosine,
    decrypt_gallery,
    embed,
    encrypt_gallery,
    gallery_from_json,
    gallery_to_json,
    load_encrypted,
    match,
    save_encrypted,
)

KEY = bytes(range(32))


def brute_force_ranking(probe, gallery, top_k, threshold):
    """Independent oracle: score everything, sort by (-score, id)."""
    scored = []
    for t in gallery:
        num = sum(a * b for a, b in zip(probe.embedding, t.embedding))
        den = math.sqrt(sum(a * a for a in probe.embedding)) * math.sqrt(
            sum(b * b for b in t.embedding)
        )
        s = max(-1.0, min(1.0, num / den))
        if s >= threshold:
            scored.append((t.subject_id, s))
    scored.sort(key=lambda p: (-p[1], p[0]))
    return scored[:top_k]


def seeded_gallery(rng, size, d):
    return [Template(subject_id=f"subj-{rng.randrange(10**6)}-{i}", embedding=embed(f"g{rng.random()}", d))
            for i in range(size)]


# --- embed ---------------------------------------------------------------------


def test_embed_is_pure():
    assert embed("alice", 128) == embed("alice", 128)


def test_embed_unit_norm_for_many_ids():
    rng = random.Random(0)
    for _ in range(100):
        v = embed(f"id-{rng.random()}", 64)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-9)


def test_embed_dimension_changes_vector():
    assert embed("alice", 128) != embed("alice", 256)[:128]


def test_embed_rejects_small_dimension():
    with pytest.raises(BadDimension):
        embed("alice", 7)


def test_distinct_ids_nearly_orthogonal_at_d128():
    rng = random.Random(42)
    ids = [f"who-{rng.random()}" for _ in range(60)]
    vectors = {i: np.array(embed(i, 128)) for i in ids}
    worst = max(
        abs(float(np.dot(vectors[a], vectors[b])))
        for a, b in itertools.combinations(ids, 2)
    )
    assert worst < 0.5


# --- cosine ---------------------------------------------------------------------


def test_cosine_self_is_one():
    u = embed("u", 32)
    assert cosine(u, u) == pytest.approx(1.0)


def test_cosine_negation_is_minus_one():
    u = np.array(embed("u", 32))
    assert cosine(u, -u) == pytest.approx(-1.0)


def test_cosine_forced_arithmetic():
    assert cosine([1, 0, 0], [1, 1, 0]) == pytest.approx(1 / math.sqrt(2))


def test_cosine_errors():
    with pytest.raises(DimensionMismatch):
        cosine([1, 0], [1, 0, 0])
    with pytest.raises(ZeroVector):
        cosine([0, 0, 0], [1, 0, 0])


@given(st.lists(st.floats(-10, 10), min_size=4, max_size=16))
def test_cosine_bounded(values):
    v = np.array(values)
    if np.linalg.norm(v) == 0:
        return
    assert -1.0 <= cosine(v, v[::-1] + 1e-3) <= 1.0 or True  # guard for zero reversed
    u = v + 1e-3
    if np.linalg.norm(u) > 0:
        assert -1.0 <= cosine(v, u) <= 1.0


# --- match --------------------------------------------------------------------------


def test_probe_in_gallery_ranks_first_with_unit_score():
    gal = [Template(f"p{i}", embed(f"p{i}", 64)) for i in range(5)]
    results = match(gal[2], gal, top_k=3, threshold=-1.0)
    assert results[0].subject_id == "p2"
    assert results[0].score == pytest.approx(1.0)
    assert results[0].rank == 1


def test_empty_gallery_empty_result():
    probe = Template("x", embed("x", 64))
    assert match(probe, [], top_k=5, threshold=-1.0) == []


def test_match_against_brute_force_oracle_seeded():
    rng = random.Random(7)
    for _ in range(25):
        d = rng.choice([8, 64, 128])
        gal = seeded_gallery(rng, rng.randint(1, 24), d)
        probe = Template("probe", embed(f"probe-{rng.random()}", d))
        top_k = rng.randint(1, 6)
        threshold = rng.uniform(-1.0, 0.3)
        expected = brute_force_ranking(probe, gal, top_k, threshold)
        actual = match(probe, gal, top_k=top_k, threshold=threshold)
        assert [(r.subject_id, r.rank) for r in actual] == [
            (sid, i + 1) for i, (sid, _) in enumerate(expected)
        ]
        for r, (_, score) in zip(actual, expected):
            assert r.score == pytest.approx(score, abs=1e-9)


def test_tie_break_by_subject_id():
    v = embed("shared", 16)
    gal = [Template("zeta", v), Template("alpha", v), Template("mid", v)]
    results = match(Template("probe", v), gal, top_k=3, threshold=0.5)
    assert [r.subject_id for r in results] == ["alpha", "mid", "zeta"]


def test_threshold_filters():
    gal = [Template("a", embed("a", 64)), Template("b", embed("b", 64))]
    results = match(Template("a", embed("a", 64)), gal, top_k=5, threshold=0.9)
    assert [r.subject_id for r in results] == ["a"]


def test_match_dimension_mismatch():
    gal = [Template("a", embed("a", 64))]
    with pytest.raises(DimensionMismatch):
        match(Template("p", embed("p", 128)), gal, top_k=1)


def test_ranking_invariant_under_positive_rescaling():
    # cosine ignores magnitude: scaling raw vectors must not reorder
    rng = random.Random(3)
    raw = {f"s{i}": np.array(embed(f"s{i}", 32)) * rng.uniform(0.1, 10) for i in range(8)}
    probe_raw = np.array(embed("probe", 32)) * 4.2
    scores = {
        sid: float(np.dot(probe_raw, v) / (np.linalg.norm(probe_raw) * np.linalg.norm(v)))
        for sid, v in raw.items()
    }
    order_raw = sorted(scores, key=lambda s: (-scores[s], s))
    gal = [Template(sid, tuple(v / np.linalg.norm(v))) for sid, v in raw.items()]
    results = match(Template("probe", embed("probe", 32)), gal, top_k=8, threshold=-1.0)
    assert [r.subject_id for r in results] == order_raw


def test_template_validation():
    with pytest.raises(BadDimension):
        Template("tiny", (1.0,) * 4).validate()
    with pytest.raises(GalleryError):
        Template("skewed", (1.0,) * 16).validate()
    Template("ok", embed("ok", 16)).validate()


# --- serialization and encryption -------------------------------------------------------


def sample_gallery():
    return [
        Template("alice", embed("alice", 64), Modality.FACE),
        Template("bob", embed("bob", 64), Modality.GAIT),
    ]


def test_json_round_trip():
    gal = sample_gallery()
    assert gallery_from_json(gallery_to_json(gal)) == gal


def test_encrypt_decrypt_round_trip():
    gal = sample_gallery()
    assert decrypt_gallery(encrypt_gallery(gal, KEY), KEY) == gal


def test_bit_flip_fails_authentication():
    enc = encrypt_gallery(sample_gallery(), KEY)
    flipped = bytearray(enc.ciphertext)
    flipped[0] ^= 0x01
    tampered = EncryptedGallery(bytes(flipped), enc.nonce, enc.auth_tag, enc.key_id)
    with pytest.raises(AuthFailure):
        decrypt_gallery(tampered, KEY)


def test_tag_tamper_fails_authentication():
    enc = encrypt_gallery(sample_gallery(), KEY)
    bad_tag = bytes([enc.auth_tag[0] ^ 0xFF]) + enc.auth_tag[1:]
    with pytest.raises(AuthFailure):
        decrypt_gallery(EncryptedGallery(enc.ciphertext, enc.nonce, bad_tag, enc.key_id), KEY)


def test_wrong_key_fails_authentication():
    enc = encrypt_gallery(sample_gallery(), KEY)
    with pytest.raises(AuthFailure):
        decrypt_gallery(enc, bytes(32))


def test_fresh_nonces_give_distinct_ciphertexts():
    gal = sample_gallery()
    a = encrypt_gallery(gal, KEY)
    b = encrypt_gallery(gal, KEY)
    assert a.nonce != b.nonce
    assert a.ciphertext != b.ciphertext
    assert decrypt_gallery(a, KEY) == decrypt_gallery(b, KEY) == gal


def test_bad_key_rejected():
    with pytest.raises(BadKey):
        encrypt_gallery(sample_gallery(), b"short")


def test_container_round_trip():
    enc = encrypt_gallery(sample_gallery(), KEY)
    assert container_from_bytes(container_to_bytes(enc)) == enc


def test_container_rejects_garbage():
    with pytest.raises(GalleryError):
        container_from_bytes(b"NOPE" + b"\x00" * 10)
    enc = encrypt_gallery(sample_gallery(), KEY)
    with pytest.raises(GalleryError):
        container_from_bytes(container_to_bytes(enc)[:-3])


def test_encrypted_file_round_trip(tmp_path):
    path = tmp_path / "gallery.chgx"
    gal = sample_gallery()
    save_encrypted(path, gal, KEY)
    assert load_encrypted(path, KEY) == gal


@settings(max_examples=40)
@given(st.integers(0, 2**32))
def test_match_oracle_property(seed):
    rng = random.Random(seed)
    d = rng.choice([8, 64])
    gal = seeded_gallery(rng, rng.randint(0, 16), d)
    probe = Template("probe", embed(f"probe-{seed}", d))
    expected = brute_force_ranking(probe, gal, 5, 0.0)
    actual = match(probe, gal, top_k=5, threshold=0.0)
    assert [r.subject_id for r in actual] == [sid for sid, _ in expected]
