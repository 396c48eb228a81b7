"""Replay of the owner/user protocol against running servers.

Step labels: DO-1..3 for the data owner, AA for key issuance, DU-5..8 for
the data user.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import httpx

from . import cpabe, envelope
from .errors import AbehgError, PolicyNotSatisfied
from .policy import attribute_set, parse_policy, satisfies

POLICY_T = (
    "Position: Doctor Position: Researcher Position: Professor 1of3 Department: Radiology 2of2 "
    "Position: PhD Position: Postdoc 1of3 University: AMU 2of2"
)
USER_SETS = {
    "S0": ("Position: Doctor", "Department: Radiology", "University: AMU"),
    "S1": ("Position: Student", "University: AMU"),
    "S2": ("Position: PhD", "College: JNMC", "University: AMU"),
}
OWNER_ATTRS = ("Role: Patient",)
SAMPLE_RECORD = json.dumps({
    "patient": "demo-patient-001",
    "study": "chest radiograph",
    "finding": "no acute cardiopulmonary abnormality",
}, sort_keys=True).encode("utf-8")

STEPS = ("DO-1", "DO-2", "DO-3", "AA", "DU-5", "DU-6", "DU-7", "DU-8")


@dataclass
class DemoResult:
    ok: bool = True
    failed_step: str | None = None
    policy_denied: bool = False
    recovered: bytes | None = None
    transcript: list[dict] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        if self.ok:
            return 0
        return 3 if self.policy_denied else 1


class StepFailed(Exception):
    pass


def _check(resp: httpx.Response, what: str) -> dict:
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("error", resp.text)
        except ValueError:
            detail = resp.text
        raise StepFailed(f"{what} failed with HTTP {resp.status_code} ({detail})")
    return resp.json()


def run_demo(authz_url: str, resource_url: str, user_attrs=USER_SETS["S0"], record: bytes = SAMPLE_RECORD,
             policy_text: str = POLICY_T, expire_token: bool = False,
             emit: Callable[[dict], None] | None = None, timeout: float = 30.0) -> DemoResult:
    result = DemoResult()
    user_attrs = sorted(attribute_set(user_attrs))

    def log(step: str, message: str, ok: bool = True, **extra) -> None:
        entry = {"step": step, "ok": ok, "message": message, **extra}
        result.transcript.append(entry)
        if emit:
            emit(entry)

    with httpx.Client(base_url=authz_url.rstrip("/"), timeout=timeout) as az, \
            httpx.Client(base_url=resource_url.rstrip("/"), timeout=timeout) as rs:
        step = "DO-1"
        try:
            owner = _check(az.post("/oauth/register", json={"role": "owner", "attributes": list(OWNER_ATTRS)}),
                           "owner registration")
            owner_tok = _check(az.post("/oauth/token", json={
                "grant_type": "client_credentials", "client_id": owner["client_id"],
                "client_secret": owner["client_secret"], "scope": "ehr.read ehr.write"}), "owner token request")
            log(step, f"data owner registered as {owner['client_id']} (scope {owner_tok['scope']})")

            step = "DO-2"
            pk = cpabe.deserialize_artifact(_check_bytes(rs.get("/aa/public-key"), "public key fetch"),
                                            expect="cpabe.public_key")
            tree = parse_policy(policy_text)
            meta = envelope.RecordMeta(content_type="application/json", owner_id=owner["client_id"])
            env = envelope.seal(pk, tree, record, meta)
            env_bytes = envelope.serialize_envelope(env)
            log(step, f"record F ({len(record)} bytes) sealed under policy T", policy=env.header.policy_text)

            step = "DO-3"
            up = _check(rs.put("/records", headers=_bearer(owner_tok), json={
                "envelope": json.loads(env_bytes), "policy_text": env.header.policy_text}), "record upload")
            record_id = up["record_id"]
            log(step, f"encrypted record uploaded as {record_id}", record_id=record_id)

            step = "AA"
            user = _check(az.post("/oauth/register", json={"role": "user", "attributes": user_attrs}),
                          "user registration")
            aa_tok = _check(az.post("/oauth/token", json={
                "grant_type": "client_credentials", "client_id": user["client_id"],
                "client_secret": user["client_secret"], "scope": "ehr.read"}), "key-request token")
            key_doc = _check(rs.post("/aa/keys", headers=_bearer(aa_tok), json={"client_id": user["client_id"]}),
                             "private key request")
            sk = cpabe.from_json(key_doc["private_key"], expect="cpabe.private_key")
            log(step, f"data user {user['client_id']} registered; private key issued for {user_attrs}",
                attributes=user_attrs)

            step = "DU-5"
            grant = {"client_id": user["client_id"], "client_secret": user["client_secret"]}
            log(step, "authorization grant (client credentials) presented; no owner approval required")

            step = "DU-6"
            tok = _check(az.post("/oauth/token", json={"grant_type": "client_credentials", **grant,
                                                       "scope": "ehr.read"}), "access token request")
            log(step, "access token requested from the authorization server")

            step = "DU-7"
            log(step, f"access token issued: scope {tok['scope']}, expires in {tok['expires_in']} s",
                scope=tok["scope"], expires_in=tok["expires_in"])

            step = "DU-8"
            if expire_token:
                _check(az.post("/oauth/revoke", json={"token": tok["access_token"], **grant}), "token expiry injection")
                log(step, "access token invalidated before the fetch (expiry injection)")
            fetched = _check_bytes(rs.get(f"/records/{record_id}", headers=_bearer(tok)), "record fetch")
            fetched_env = envelope.deserialize_envelope(fetched)
            try:
                plain = envelope.open_envelope(pk, sk, fetched_env)
            except PolicyNotSatisfied:
                result.policy_denied = True
                sat = satisfies(tree, user_attrs)
                raise StepFailed(f"record fetched ({len(fetched)} bytes) but attributes do not satisfy T"
                                 f" (satisfies={sat})") from None
            if plain != record:
                raise StepFailed("decrypted bytes differ from the uploaded record")
            result.recovered = plain
            log(step, f"record fetched and decrypted: {len(plain)} bytes, identical to F")
        except (StepFailed, AbehgError, httpx.HTTPError, ValueError, KeyError) as exc:
            result.ok = False
            result.failed_step = step
            log(step, f"FAILED: {exc}", ok=False)
    return result


def _bearer(tok: dict) -> dict:
    return {"Authorization": f"Bearer {tok['access_token']}"}


def _check_bytes(resp: httpx.Response, what: str) -> bytes:
    if resp.status_code >= 400:
        _check(resp, what)
    return resp.content


def format_entry(entry: dict) -> str:
    mark = "ok " if entry["ok"] else "ERR"
    return f"[{entry['step']:>4}] {mark} {entry['message']}"
