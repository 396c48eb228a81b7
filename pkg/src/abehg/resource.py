"""Resource server and attribute authority.

The resource server stores sealed envelopes and hands them to any holder of
an active bearer token with the right scope.  It never evaluates the policy:
whether the bytes can be opened is decided by the caller's CPABE key.  The
attribute authority side holds the master key and issues private keys for a
client's registered attributes.
"""

from __future__ import annotations

import json
import os
import secrets
import tempfile
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

from . import cpabe, group
from .errors import MalformedArtifact, ResourceError
from .envelope import RecordEnvelope, deserialize_envelope, serialize_envelope
from .group import b64e
from .policy import parse_postfix


class TokenDirectory(Protocol):
    """What the resource server needs from the authorization server."""

    def introspect(self, token: str): ...

    def client_attributes(self, client_id: str) -> frozenset | None: ...


@dataclass(frozen=True)
class StoredRecord:
    record_id: str
    owner_client_id: str
    envelope: bytes
    policy_text: str
    created_at: float
    updated_at: float
    seq: int = 0
    meta: dict | None = None

    def to_bytes(self) -> bytes:
        doc = {
            "record_id": self.record_id,
            "owner_client_id": self.owner_client_id,
            "envelope": json.loads(self.envelope),
            "policy_text": self.policy_text,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "seq": self.seq,
            "meta": self.meta or {},
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "StoredRecord":
        doc = json.loads(data)
        env = json.dumps(doc["envelope"], sort_keys=True, separators=(",", ":")).encode("utf-8")
        return cls(
            record_id=doc["record_id"], owner_client_id=doc["owner_client_id"], envelope=env,
            policy_text=doc["policy_text"], created_at=doc["created_at"], updated_at=doc["updated_at"],
            seq=doc.get("seq", 0), meta=doc.get("meta") or {},
        )

    def listing(self) -> dict:
        return {
            "record_id": self.record_id,
            "owner_client_id": self.owner_client_id,
            "policy_text": self.policy_text,
            "meta": self.meta or {},
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }


# -- storage ---------------------------------------------------------------

class StorageBackend(ABC):
    @abstractmethod
    def put(self, record_id: str, data: bytes) -> None: ...

    @abstractmethod
    def get(self, record_id: str) -> bytes | None: ...

    @abstractmethod
    def delete(self, record_id: str) -> bool: ...

    @abstractmethod
    def list(self) -> list[str]: ...


class MemoryBackend(StorageBackend):
    def __init__(self):
        self._data: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def put(self, record_id, data):
        with self._lock:
            self._data[record_id] = bytes(data)

    def get(self, record_id):
        return self._data.get(record_id)

    def delete(self, record_id):
        with self._lock:
            return self._data.pop(record_id, None) is not None

    def list(self):
        return list(self._data)

    def raw_items(self):
        return list(self._data.items())


class DirectoryBackend(StorageBackend):
    """One file per record; writes go through a temp file and ``os.replace``."""

    suffix = ".rec"

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, record_id: str) -> Path:
        if not record_id or not all(c.isalnum() or c in "-_" for c in record_id):
            raise ResourceError(404, "no such record")
        return self.root / (record_id + self.suffix)

    def put(self, record_id, data):
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self._path(record_id))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def get(self, record_id):
        try:
            return self._path(record_id).read_bytes()
        except (FileNotFoundError, ResourceError):
            return None

    def delete(self, record_id):
        try:
            self._path(record_id).unlink()
            return True
        except (FileNotFoundError, ResourceError):
            return False

    def list(self):
        return [p.name[: -len(self.suffix)] for p in self.root.glob("*" + self.suffix)]

    def raw_items(self):
        return [(p.name, p.read_bytes()) for p in self.root.iterdir() if p.is_file()]


# -- server ----------------------------------------------------------------

class ResourceServer:
    def __init__(self, directory: TokenDirectory, public_key: cpabe.PublicKey,
                 master_key: cpabe.MasterKey | None = None, backend: StorageBackend | None = None,
                 clock: Callable[[], float] = time.time, entropy=None):
        self.directory = directory
        self.public_key = public_key
        self.master_key = master_key
        self.backend = backend if backend is not None else MemoryBackend()
        self.clock = clock
        self.entropy = group.default_entropy(entropy)
        self._lock = threading.Lock()
        self._seq = 0
        if master_key is not None:
            cpabe.check_master_key(public_key, master_key)

    def _authorize(self, token: str | None, scope: str | None = None):
        info = self.directory.introspect(token or "")
        if not info.active:
            raise ResourceError(401, "inactive or unknown bearer token")
        if scope is not None and scope not in info.scope:
            raise ResourceError(403, f"token lacks scope {scope}")
        return info

    # -- attribute authority --

    def issue_private_key(self, token: str, client_id: str | None = None) -> bytes:
        info = self._authorize(token)
        if client_id is not None and client_id != info.client_id:
            raise ResourceError(403, "token belongs to a different client")
        if self.master_key is None:
            raise ResourceError(404, "this server does not run the attribute authority")
        attrs = self.directory.client_attributes(info.client_id)
        if attrs is None:
            raise ResourceError(404, "client is not registered")
        if not attrs:
            raise ResourceError(404, "client has no registered attributes")
        key = cpabe.keygen(self.public_key, self.master_key, attrs, self.entropy)
        return cpabe.serialize_artifact(key)

    # -- records --

    def _validate(self, envelope: RecordEnvelope | bytes | str | dict, policy_text: str | None):
        try:
            if isinstance(envelope, dict):
                envelope = json.dumps(envelope)
            if not isinstance(envelope, RecordEnvelope):
                envelope = deserialize_envelope(envelope)
        except (MalformedArtifact, ValueError) as exc:
            raise ResourceError(400, f"malformed envelope: {exc}") from None
        header_text = envelope.header.policy_text
        if policy_text is not None:
            try:
                same = parse_postfix(policy_text) == envelope.header.policy
            except ValueError:
                same = False
            if not same:
                raise ResourceError(400, "policy_text does not match the envelope header")
        return serialize_envelope(envelope), header_text

    def _load(self, record_id: str) -> StoredRecord:
        raw = self.backend.get(record_id)
        if raw is None:
            raise ResourceError(404, "no such record")
        return StoredRecord.from_bytes(raw)

    def put_record(self, token: str, envelope, policy_text: str | None = None, meta: dict | None = None) -> str:
        info = self._authorize(token, "ehr.write")
        data, header_text = self._validate(envelope, policy_text)
        now = self.clock()
        with self._lock:
            self._seq += 1
            record_id = b64e(secrets.token_bytes(16))
            record = StoredRecord(record_id=record_id, owner_client_id=info.client_id, envelope=data,
                                  policy_text=header_text,
                                  created_at=now, updated_at=now, seq=self._seq, meta=meta or {})
            self.backend.put(record_id, record.to_bytes())
        return record_id

    def get_record(self, token: str, record_id: str) -> bytes:
        self._authorize(token, "ehr.read")
        return self._load(record_id).envelope

    def list_records(self, token: str, owner_client_id: str | None = None) -> list[dict]:
        self._authorize(token, "ehr.read")
        records = []
        for rid in self.backend.list():
            raw = self.backend.get(rid)
            if raw is None:
                continue
            rec = StoredRecord.from_bytes(raw)
            if owner_client_id is None or rec.owner_client_id == owner_client_id:
                records.append(rec)
        records.sort(key=lambda r: (r.created_at, r.seq))
        return [r.listing() for r in records]

    def update_record(self, token: str, record_id: str, envelope, policy_text: str | None = None,
                      meta: dict | None = None) -> None:
        info = self._authorize(token, "ehr.write")
        with self._lock:
            rec = self._load(record_id)
            if rec.owner_client_id != info.client_id:
                raise ResourceError(403, "only the owner may modify a record")
            data, header_text = self._validate(envelope, policy_text)
            updated = StoredRecord(
                record_id=record_id, owner_client_id=rec.owner_client_id, envelope=data,
                policy_text=header_text, created_at=rec.created_at,
                updated_at=max(self.clock(), rec.updated_at + 1e-6), seq=rec.seq,
                meta=rec.meta if meta is None else meta,
            )
            self.backend.put(record_id, updated.to_bytes())

    def delete_record(self, token: str, record_id: str) -> None:
        info = self._authorize(token, "ehr.write")
        with self._lock:
            rec = self._load(record_id)
            if rec.owner_client_id != info.client_id:
                raise ResourceError(403, "only the owner may modify a record")
            self.backend.delete(record_id)

    def update_or_delete_record(self, token: str, record_id: str, envelope=None, delete: bool = False) -> None:
        if delete:
            self.delete_record(token, record_id)
        else:
            self.update_record(token, record_id, envelope)
