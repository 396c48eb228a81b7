"""OAuth 2.0 authorization server without a data-owner approval step.

Clients register with a role and their attributes and receive a
``client_id``/``client_secret`` pair.  That pair is the grant: presenting it
to :meth:`AuthorizationServer.issue_token` yields an opaque bearer token plus
a single-use refresh token.  What a token can *decrypt* is not decided here;
CPABE enforces that on the client.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import OAuthError
from .group import b64e
from .policy import attribute_set

ROLE_SCOPES = {
    "owner": frozenset({"ehr.read", "ehr.write"}),
    "user": frozenset({"ehr.read"}),
}
DEFAULT_TOKEN_LIFETIME = 3600
DEFAULT_REFRESH_LIFETIME = 14 * 24 * 3600
PBKDF2_ITERATIONS = 100_000


def hash_secret(secret: str, salt: bytes, iterations: int = PBKDF2_ITERATIONS) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", secret.encode("utf-8"), salt, iterations)


def parse_scope(scope: str | Iterable[str] | None) -> frozenset[str] | None:
    if scope is None:
        return None
    if isinstance(scope, str):
        scope = scope.split()
    return frozenset(scope)


@dataclass(frozen=True)
class ClientRecord:
    client_id: str
    client_secret_hash: bytes
    salt: bytes
    role: str
    registered_attrs: frozenset
    created_at: float
    external_id: str | None = None


@dataclass(frozen=True)
class AccessToken:
    token: str
    client_id: str
    scope: frozenset
    issued_at: float
    expires_in: int
    refresh_token: str

    @property
    def expires_at(self) -> float:
        return self.issued_at + self.expires_in

    def to_response(self) -> dict:
        return {
            "access_token": self.token,
            "token_type": "Bearer",
            "expires_in": self.expires_in,
            "refresh_token": self.refresh_token,
            "scope": " ".join(sorted(self.scope)),
        }


@dataclass(frozen=True)
class TokenInfo:
    active: bool
    client_id: str | None = None
    scope: frozenset = field(default_factory=frozenset)
    expires_at: float | None = None

    def to_json(self) -> dict:
        if not self.active:
            return {"active": False}
        return {
            "active": True,
            "client_id": self.client_id,
            "scope": " ".join(sorted(self.scope)),
            "exp": self.expires_at,
        }


INACTIVE = TokenInfo(active=False)


@dataclass
class _TokenState:
    token: AccessToken
    refresh_expires_at: float
    state: str = "issued"  # issued | revoked | rotated
    refresh_used: bool = False


class AuthorizationServer:
    """In-process authorization server; all mutations hold one lock."""

    def __init__(self, clock: Callable[[], float] = time.time, token_lifetime: int = DEFAULT_TOKEN_LIFETIME,
                 refresh_lifetime: int = DEFAULT_REFRESH_LIFETIME, unique_identities: bool = True,
                 pbkdf2_iterations: int = PBKDF2_ITERATIONS):
        if token_lifetime <= 0:
            raise ValueError("token lifetime must be positive")
        self.clock = clock
        self.token_lifetime = token_lifetime
        self.refresh_lifetime = refresh_lifetime
        self.unique_identities = unique_identities
        self.pbkdf2_iterations = pbkdf2_iterations
        self._clients: dict[str, ClientRecord] = {}
        self._identities: dict[str, str] = {}
        self._tokens: dict[str, _TokenState] = {}
        self._refresh: dict[str, str] = {}
        self._lock = threading.Lock()

    # -- clients --

    def register_client(self, role: str, attrs: Iterable[str] | str = (), external_id: str | None = None
                        ) -> tuple[str, str]:
        if role not in ROLE_SCOPES:
            raise OAuthError("invalid_request", f"unknown role {role!r}")
        try:
            attrs = attribute_set(attrs)
        except ValueError as exc:
            raise OAuthError("invalid_request", str(exc)) from None
        if role == "user" and not attrs:
            raise OAuthError("invalid_request", "data users must register at least one attribute")
        secret = secrets.token_urlsafe(32)
        salt = secrets.token_bytes(16)
        digest = hash_secret(secret, salt, self.pbkdf2_iterations)
        with self._lock:
            if external_id is not None and self.unique_identities and external_id in self._identities:
                raise OAuthError("conflict", "identity already registered", status=409)
            client_id = b64e(secrets.token_bytes(16))
            while client_id in self._clients:
                client_id = b64e(secrets.token_bytes(16))
            self._clients[client_id] = ClientRecord(
                client_id=client_id, client_secret_hash=digest, salt=salt, role=role,
                registered_attrs=attrs, created_at=self.clock(), external_id=external_id,
            )
            if external_id is not None:
                self._identities[external_id] = client_id
        return client_id, secret

    def get_client(self, client_id: str) -> ClientRecord | None:
        return self._clients.get(client_id)

    def authenticate(self, client_id: str, client_secret: str) -> ClientRecord:
        client = self._clients.get(client_id or "")
        if client is None:
            hash_secret(client_secret or "", b"\x00" * 16, self.pbkdf2_iterations)
            raise OAuthError("unauthorized", "invalid client credentials", status=401)
        digest = hash_secret(client_secret or "", client.salt, self.pbkdf2_iterations)
        if not hmac.compare_digest(digest, client.client_secret_hash):
            raise OAuthError("unauthorized", "invalid client credentials", status=401)
        return client

    # -- tokens --

    def _mint(self, client_id: str, scope: frozenset) -> AccessToken:
        now = self.clock()
        token = AccessToken(
            token=b64e(secrets.token_bytes(32)), client_id=client_id, scope=scope,
            issued_at=now, expires_in=self.token_lifetime, refresh_token=b64e(secrets.token_bytes(32)),
        )
        if token.token in self._tokens or token.refresh_token in self._refresh:
            return self._mint(client_id, scope)
        self._tokens[token.token] = _TokenState(token, refresh_expires_at=now + self.refresh_lifetime)
        self._refresh[token.refresh_token] = token.token
        return token

    def issue_token(self, client_id: str, client_secret: str,
                    scope: str | Iterable[str] | None = None) -> AccessToken:
        client = self.authenticate(client_id, client_secret)
        allowed = ROLE_SCOPES[client.role]
        requested = parse_scope(scope)
        if requested is None or not requested:
            requested = allowed
        if not requested <= allowed:
            raise OAuthError("invalid_scope", f"{client.role} may request only {sorted(allowed)}")
        with self._lock:
            return self._mint(client.client_id, frozenset(requested))

    def refresh(self, refresh_token: str) -> AccessToken:
        with self._lock:
            access = self._refresh.get(refresh_token or "")
            state = self._tokens.get(access) if access else None
            if (state is None or state.refresh_used or state.state == "revoked"
                    or self.clock() >= state.refresh_expires_at):
                raise OAuthError("invalid_grant", "unknown, used or expired refresh token")
            state.refresh_used = True
            if state.state == "issued":
                state.state = "rotated"
            return self._mint(state.token.client_id, state.token.scope)

    def introspect(self, token: str) -> TokenInfo:
        state = self._tokens.get(token or "")
        if state is None or state.state != "issued" or self.clock() >= state.token.expires_at:
            return INACTIVE
        t = state.token
        return TokenInfo(active=True, client_id=t.client_id, scope=t.scope, expires_at=t.expires_at)

    def revoke(self, token: str, client_id: str | None = None, admin: bool = False) -> None:
        """Revoke an access or refresh token and its twin.  Always succeeds."""
        with self._lock:
            access = token if token in self._tokens else self._refresh.get(token or "")
            state = self._tokens.get(access) if access else None
            if state is None:
                return
            if not admin and client_id != state.token.client_id:
                return
            state.state = "revoked"
            state.refresh_used = True

    def client_attributes(self, client_id: str) -> frozenset | None:
        client = self._clients.get(client_id)
        return None if client is None else client.registered_attrs
