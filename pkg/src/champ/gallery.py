"""Biometric gallery: template enrollment, encrypted-at-rest persistence,
and cosine-similarity probe-vs-gallery matching.

Galleries are desk-scale, so matching is an exhaustive scan; results are
ranked by cosine score with a deterministic subject_id tie-break. Storage
uses AES-GCM at rest: the container authenticates, so any tampered byte
fails decryption outright.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

GALLERY_MAGIC = b"CHGX"
MIN_DIM = 8
NORM_TOLERANCE = 1e-6
DEFAULT_FACE_THRESHOLD = 0.35  # synthetic embeddings; a named config, not a claim


class GalleryError(Exception):
    pass


class BadDimension(GalleryError):
    pass


class DimensionMismatch(GalleryError):
    pass


class ZeroVector(GalleryError):
    pass


class AuthFailure(GalleryError):
    pass


class BadKey(GalleryError):
    pass


class Modality(str, Enum):
    FACE = "face"
    GAIT = "gait"


@dataclass(frozen=True)
class Template:
    """Unit-norm embedding plus subject identity."""

    subject_id: str
    embedding: tuple[float, ...]
    modality: Modality = Modality.FACE

    def validate(self) -> None:
        if len(self.embedding) < MIN_DIM:
            raise BadDimension(f"embedding dimension {len(self.embedding)} < {MIN_DIM}")
        norm = math.sqrt(sum(x * x for x in self.embedding))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise GalleryError(f"embedding of {self.subject_id!r} is not unit-norm (|v|={norm})")


@dataclass(frozen=True)
class MatchResult:
    subject_id: str
    score: float
    rank: int


def embed(subject_id: str, d: int) -> tuple[float, ...]:
    """Deterministic unit vector for a subject id.

    Stands in for a real embedding model: same (subject_id, d) always
    yields the same vector, distinct ids are nearly orthogonal at
    useful dimensions. Gaussian coordinates are derived from a keyed
    hash (Box-Muller), so the output is identical across platforms and
    library versions.
    """
    if d < MIN_DIM:
        raise BadDimension(f"dimension {d} < {MIN_DIM}")
    coords = np.empty(d, dtype=np.float64)
    counter = 0
    i = 0
    while i < d:
        h = hashlib.blake2b(
            subject_id.encode("utf-8") + struct.pack(">II", d, counter), digest_size=16
        ).digest()
        a, b = struct.unpack(">QQ", h)
        u1 = (a + 1) / (2**64 + 1)  # in (0, 1); avoids log(0)
        u2 = b / 2**64
        r = math.sqrt(-2.0 * math.log(u1))
        coords[i] = r * math.cos(2.0 * math.pi * u2)
        if i + 1 < d:
            coords[i + 1] = r * math.sin(2.0 * math.pi * u2)
        i += 2
        counter += 1
    coords /= np.linalg.norm(coords)
    return tuple(float(x) for x in coords)


def cosine(u, v) -> float:
    """Cosine similarity u.v / (|u||v|), clamped into [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"dims {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def match(
    probe: Template,
    gallery: list[Template],
    top_k: int = 1,
    threshold: float = DEFAULT_FACE_THRESHOLD,
) -> list[MatchResult]:
    """Rank the gallery against the probe: the top_k templates by cosine
    with score >= threshold, ties broken by subject_id ascending."""
    if top_k < 1:
        raise GalleryError("top_k must be >= 1")
    d = len(probe.embedding)
    for t in gallery:
        if len(t.embedding) != d:
            raise DimensionMismatch(
                f"gallery entry {t.subject_id!r} has dim {len(t.embedding)}, probe has {d}"
            )
    scored = [(t.subject_id, cosine(probe.embedding, t.embedding)) for t in gallery]
    scored = [(sid, s) for sid, s in scored if s >= threshold]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return [
        MatchResult(subject_id=sid, score=s, rank=i + 1)
        for i, (sid, s) in enumerate(scored[:top_k])
    ]


# --- serialization ----------------------------------------------------------


def gallery_to_json(gallery: list[Template]) -> bytes:
    records = [
        {
            "subject_id": t.subject_id,
            "modality": t.modality.value,
            "embedding": list(t.embedding),
        }
        for t in gallery
    ]
    return json.dumps(records, sort_keys=True, separators=(",", ":")).encode("utf-8")


def gallery_from_json(data: bytes) -> list[Template]:
    try:
        records = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GalleryError(f"not a gallery file: {exc}") from exc
    if not isinstance(records, list):
        raise GalleryError("gallery file must be a JSON array")
    out = []
    for rec in records:
        t = Template(
            subject_id=rec["subject_id"],
            embedding=tuple(float(x) for x in rec["embedding"]),
            modality=Modality(rec.get("modality", "face")),
        )
        t.validate()
        out.append(t)
    return out


# --- encryption at rest ------------------------------------------------------

_KEY_LENGTHS = (16, 24, 32)
_NONCE_LEN = 12
_TAG_LEN = 16


@dataclass(frozen=True)
class EncryptedGallery:
    ciphertext: bytes
    nonce: bytes
    auth_tag: bytes
    key_id: str


def _check_key(key: bytes) -> None:
    if not isinstance(key, (bytes, bytearray)) or len(key) not in _KEY_LENGTHS:
        raise BadKey(f"AES-GCM key must be one of {_KEY_LENGTHS} bytes")


def key_fingerprint(key: bytes) -> str:
    return hashlib.blake2b(key, digest_size=8).hexdigest()


def encrypt_gallery(
    gallery: list[Template], key: bytes, *, nonce: bytes | None = None
) -> EncryptedGallery:
    """AEAD-encrypt a gallery. A fresh random nonce is drawn per call
    unless one is supplied (tests only; never reuse a nonce per key)."""
    _check_key(key)
    if nonce is None:
        nonce = os.urandom(_NONCE_LEN)
    if len(nonce) != _NONCE_LEN:
        raise BadKey(f"nonce must be {_NONCE_LEN} bytes")
    plaintext = gallery_to_json(gallery)
    sealed = AESGCM(bytes(key)).encrypt(nonce, plaintext, GALLERY_MAGIC)
    return EncryptedGallery(
        ciphertext=sealed[:-_TAG_LEN],
        nonce=nonce,
        auth_tag=sealed[-_TAG_LEN:],
        key_id=key_fingerprint(bytes(key)),
    )


def decrypt_gallery(enc: EncryptedGallery, key: bytes) -> list[Template]:
    _check_key(key)
    try:
        plaintext = AESGCM(bytes(key)).decrypt(
            enc.nonce, enc.ciphertext + enc.auth_tag, GALLERY_MAGIC
        )
    except InvalidTag as exc:
        raise AuthFailure("gallery failed authentication (wrong key or tampered bytes)") from exc
    return gallery_from_json(plaintext)


def _lp(buf: bytes) -> bytes:
    return struct.pack(">I", len(buf)) + buf


def container_to_bytes(enc: EncryptedGallery) -> bytes:
    """On-disk container: magic, then length-prefixed key_id, nonce,
    tag, ciphertext."""
    return (
        GALLERY_MAGIC
        + _lp(enc.key_id.encode("ascii"))
        + _lp(enc.nonce)
        + _lp(enc.auth_tag)
        + _lp(enc.ciphertext)
    )


def container_from_bytes(data: bytes) -> EncryptedGallery:
    if data[:4] != GALLERY_MAGIC:
        raise GalleryError(f"bad container magic {data[:4]!r}")
    pos = 4
    fields = []
    for name in ("key_id", "nonce", "auth_tag", "ciphertext"):
        if pos + 4 > len(data):
            raise GalleryError(f"container truncated before {name}")
        (n,) = struct.unpack(">I", data[pos : pos + 4])
        pos += 4
        if pos + n > len(data):
            raise GalleryError(f"container truncated inside {name}")
        fields.append(data[pos : pos + n])
        pos += n
    if pos != len(data):
        raise GalleryError("trailing bytes after container")
    key_id, nonce, tag, ciphertext = fields
    return EncryptedGallery(
        ciphertext=ciphertext, nonce=nonce, auth_tag=tag, key_id=key_id.decode("ascii")
    )


def save_encrypted(path, gallery: list[Template], key: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(container_to_bytes(encrypt_gallery(gallery, key)))


def load_encrypted(path, key: bytes) -> list[Template]:
    with open(path, "rb") as fh:
        return decrypt_gallery(container_from_bytes(fh.read()), key)
