"""Hybrid record envelopes: AES-256-GCM body, CPABE-wrapped content key.

A fresh random GT element ``m`` is encrypted under the policy; the AEAD key is
SHA-256 over a domain tag and ``m``'s canonical encoding.  The policy text, a
digest of the full CPABE header and the record metadata are bound into the
AEAD associated data.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import cpabe, group
from .errors import AuthenticationFailure, DomainError, MalformedArtifact
from .group import GT, b64d, b64e
from .policy import AccessTree

KDF_TAG = b"cpabe:kdf:v1"
AD_TAG = b"ehr.envelope:v1"
NONCE_BYTES = 12
MAX_PLAINTEXT = 64 * 1024 * 1024
ENVELOPE_TYPE = "ehr.envelope"
FILE_EXTENSION = ".ehrx"
_META_KEYS = {"content_type", "created_at", "owner_id"}


def _now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class RecordMeta:
    content_type: str = "application/octet-stream"
    owner_id: str = ""
    created_at: str = field(default_factory=_now_iso)

    def to_json(self) -> dict:
        return {"content_type": self.content_type, "created_at": self.created_at, "owner_id": self.owner_id}


@dataclass(frozen=True)
class RecordEnvelope:
    header: cpabe.CpabeCiphertext
    nonce: bytes
    body: bytes
    meta: RecordMeta


def derive_content_key(m: GT) -> bytes:
    return hashlib.sha256(KDF_TAG + m.encode()).digest()


def _framed(*parts: bytes) -> bytes:
    return b"".join(struct.pack(">I", len(p)) + p for p in parts)


def associated_data(header: cpabe.CpabeCiphertext, meta: RecordMeta) -> bytes:
    """Policy text, a digest of the whole header, and the metadata.

    Hashing the full header also pins the leaf components that a given key
    never touches, so none of them can be swapped for another valid point.
    """
    policy = header.policy_text.encode("utf-8")
    header_digest = hashlib.sha256(cpabe.serialize_artifact(header)).digest()
    meta_bytes = json.dumps(meta.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return AD_TAG + _framed(policy, header_digest, meta_bytes)


def seal(pk: cpabe.PublicKey, tree: AccessTree, plaintext: bytes, meta: RecordMeta | None = None,
         entropy=None, max_size: int = MAX_PLAINTEXT) -> RecordEnvelope:
    if len(plaintext) > max_size:
        raise DomainError(f"plaintext of {len(plaintext)} bytes exceeds the {max_size}-byte limit")
    entropy = group.default_entropy(entropy)
    meta = meta or RecordMeta()
    m = group.random_gt(entropy)
    header = cpabe.encrypt_element(pk, m, tree, entropy)
    nonce = entropy.token_bytes(NONCE_BYTES)
    body = AESGCM(derive_content_key(m)).encrypt(nonce, plaintext, associated_data(header, meta))
    return RecordEnvelope(header=header, nonce=nonce, body=body, meta=meta)


def open_envelope(pk: cpabe.PublicKey, sk: cpabe.PrivateKey, env: RecordEnvelope) -> bytes:
    """Recover the record bytes, or raise; never returns partial plaintext."""
    m = cpabe.decrypt_element(pk, sk, env.header)
    try:
        return AESGCM(derive_content_key(m)).decrypt(
            env.nonce, env.body, associated_data(env.header, env.meta)
        )
    except InvalidTag:
        raise AuthenticationFailure("envelope failed authentication") from None


open = open_envelope  # noqa: A001  module-level name used as envelope.open


# -- wire format -----------------------------------------------------------

def to_json(env: RecordEnvelope) -> dict:
    return {
        "v": 1,
        "type": ENVELOPE_TYPE,
        "header": cpabe.to_json(env.header),
        "nonce": b64e(env.nonce),
        "body": b64e(env.body),
        "meta": env.meta.to_json(),
    }


def serialize_envelope(env: RecordEnvelope) -> bytes:
    return json.dumps(to_json(env), separators=(",", ":"), sort_keys=True).encode("utf-8")


def from_json(doc) -> RecordEnvelope:
    if not isinstance(doc, dict) or doc.get("type") != ENVELOPE_TYPE:
        raise MalformedArtifact("not a record envelope")
    if doc.get("v") != 1 or isinstance(doc.get("v"), bool):
        raise MalformedArtifact(f"unsupported envelope version {doc.get('v')!r}")
    header = cpabe.from_json(doc.get("header"), expect="cpabe.ciphertext")
    nonce_text, body_text, meta = doc.get("nonce"), doc.get("body"), doc.get("meta")
    nonce = b64d(nonce_text)
    if len(nonce) != NONCE_BYTES:
        raise MalformedArtifact("nonce must be 12 bytes")
    body = b64d(body_text)
    if len(body) < 16:
        raise MalformedArtifact("body shorter than the AEAD tag")
    if not isinstance(meta, dict) or set(meta) != _META_KEYS or not all(isinstance(v, str) for v in meta.values()):
        raise MalformedArtifact("meta must hold content_type, created_at and owner_id strings")
    return RecordEnvelope(header=header, nonce=nonce, body=body, meta=RecordMeta(**meta))


def deserialize_envelope(data: bytes | str) -> RecordEnvelope:
    try:
        doc = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedArtifact(f"envelope is not valid JSON: {exc}") from exc
    return from_json(doc)
