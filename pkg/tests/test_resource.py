import json

import pytest

from abehg import cpabe, envelope
from abehg.authz import AuthorizationServer
from abehg.errors import PolicyNotSatisfied, ResourceError
from abehg.resource import DirectoryBackend, MemoryBackend, ResourceServer, StoredRecord
from abehg.policy import parse_postfix, serialize_policy

from conftest import POLICY_T, USER_ROWS

SENTINEL = b"SENTINEL-7f3a9c-PLAINTEXT-MARKER"


class Clock:
    def __init__(self):
        self.t = 1_700_000_000.0

    def __call__(self):
        return self.t


@pytest.fixture(params=["memory", "directory"])
def env(request, keys, tmp_path):
    clock = Clock()
    authz = AuthorizationServer(clock=clock, pbkdf2_iterations=1000)
    backend = MemoryBackend() if request.param == "memory" else DirectoryBackend(tmp_path / "records")
    rs = ResourceServer(authz, keys[0], keys[1], backend, clock=clock)
    return authz, rs, clock


def client(authz, role, attrs=(), scope=None):
    cid, secret = authz.register_client(role, attrs)
    return cid, authz.issue_token(cid, secret, scope).token


def sealed(pk, policy=POLICY_T, plaintext=SENTINEL + b" record body", owner="o"):
    env = envelope.seal(pk, parse_postfix(policy), plaintext, envelope.RecordMeta("text/plain", owner))
    return envelope.serialize_envelope(env)


def status(fn, *args, **kwargs) -> int:
    with pytest.raises(ResourceError) as exc:
        fn(*args, **kwargs)
    return exc.value.status


class TestKeys:
    def test_row2_key(self, env, keys):
        authz, rs, _ = env
        cid, tok = client(authz, "user", USER_ROWS[1][0])
        sk = cpabe.deserialize_artifact(rs.issue_private_key(tok, cid), expect="cpabe.private_key")
        assert len(sk.components) == 2

    @pytest.mark.parametrize("row", range(8))
    def test_key_decrypts_iff_row_says_yes(self, env, keys, row):
        authz, rs, _ = env
        attrs, expected = USER_ROWS[row]
        _, owner_tok = client(authz, "owner")
        rid = rs.put_record(owner_tok, sealed(keys[0]))
        cid, tok = client(authz, "user", attrs)
        sk = cpabe.deserialize_artifact(rs.issue_private_key(tok, cid))
        fetched = envelope.deserialize_envelope(rs.get_record(tok, rid))
        if expected:
            assert envelope.open_envelope(keys[0], sk, fetched).startswith(SENTINEL)
        else:
            with pytest.raises(PolicyNotSatisfied):
                envelope.open_envelope(keys[0], sk, fetched)

    def test_expired_token(self, env):
        authz, rs, clock = env
        cid, tok = client(authz, "user", ["a"])
        clock.t += 3600
        assert status(rs.issue_private_key, tok, cid) == 401

    def test_other_client_id(self, env):
        authz, rs, _ = env
        _, tok = client(authz, "user", ["a"])
        assert status(rs.issue_private_key, tok, "someone-else") == 403

    def test_owner_without_attributes(self, env):
        authz, rs, _ = env
        _, tok = client(authz, "owner")
        assert status(rs.issue_private_key, tok) == 404

    def test_no_master_key(self, keys):
        authz = AuthorizationServer(pbkdf2_iterations=1000)
        rs = ResourceServer(authz, keys[0])
        _, tok = client(authz, "user", ["a"])
        assert status(rs.issue_private_key, tok) == 404


class TestRecords:
    def test_upload_fetch_verbatim(self, env, keys):
        authz, rs, _ = env
        _, tok = client(authz, "owner")
        data = sealed(keys[0])
        rid = rs.put_record(tok, data)
        assert rs.get_record(tok, rid) == data
        assert len(rid) == 22

    def test_upload_dict_and_object(self, env, keys):
        authz, rs, _ = env
        _, tok = client(authz, "owner")
        data = sealed(keys[0])
        a = rs.put_record(tok, json.loads(data))
        b = rs.put_record(tok, envelope.deserialize_envelope(data))
        assert rs.get_record(tok, a) == rs.get_record(tok, b) == data

    def test_user_cannot_upload(self, env, keys):
        authz, rs, _ = env
        _, tok = client(authz, "user", ["a"])
        assert status(rs.put_record, tok, sealed(keys[0])) == 403

    def test_malformed_envelope(self, env):
        authz, rs, _ = env
        _, tok = client(authz, "owner")
        assert status(rs.put_record, tok, b'{"v":1}') == 400
        assert status(rs.put_record, tok, b"not json") == 400

    def test_policy_text_mismatch(self, env, keys):
        authz, rs, _ = env
        _, tok = client(authz, "owner")
        assert status(rs.put_record, tok, sealed(keys[0], "a b 2of2"), policy_text="a b 1of2") == 400
        assert rs.put_record(tok, sealed(keys[0], "a b 2of2"), policy_text="A B 2of2")

    def test_unknown_and_unauthorized(self, env, keys):
        authz, rs, _ = env
        _, tok = client(authz, "owner")
        rid = rs.put_record(tok, sealed(keys[0]))
        assert status(rs.get_record, tok, "missing") == 404
        assert status(rs.get_record, "bogus", rid) == 401
        authz.revoke(tok, admin=True)
        assert status(rs.get_record, tok, rid) == 401

    def test_refresh_token_rejected_as_bearer(self, env, keys):
        authz, rs, _ = env
        cid, secret = authz.register_client("owner")
        tok = authz.issue_token(cid, secret)
        assert status(rs.list_records, tok.refresh_token) == 401

    def test_listing(self, env, keys):
        authz, rs, clock = env
        a_id, a = client(authz, "owner")
        b_id, b = client(authz, "owner")
        assert rs.list_records(a) == []
        ids = []
        for tok in (a, b, a):
            ids.append(rs.put_record(tok, sealed(keys[0])))
            clock.t += 1
        listing = rs.list_records(a)
        assert [r["record_id"] for r in listing] == ids
        assert all("envelope" not in r and "body" not in r for r in listing)
        assert listing[0]["policy_text"] == serialize_policy(parse_postfix(POLICY_T))
        assert [r["record_id"] for r in rs.list_records(a, owner_client_id=b_id)] == [ids[1]]

    def test_same_instant_keeps_upload_order(self, env, keys):
        authz, rs, _ = env
        _, tok = client(authz, "owner")
        ids = [rs.put_record(tok, sealed(keys[0], "a")) for _ in range(3)]
        assert [r["record_id"] for r in rs.list_records(tok)] == ids

    def test_update_and_delete(self, env, keys):
        authz, rs, _ = env
        _, tok = client(authz, "owner")
        rid = rs.put_record(tok, sealed(keys[0]))
        before = rs.list_records(tok)[0]["updated_at"]
        new = sealed(keys[0], "a")
        rs.update_or_delete_record(tok, rid, new)
        assert rs.get_record(tok, rid) == new
        after = rs.list_records(tok)[0]
        assert after["updated_at"] > before and after["policy_text"] == "a"
        rs.update_or_delete_record(tok, rid, delete=True)
        assert status(rs.get_record, tok, rid) == 404
        assert status(rs.delete_record, tok, rid) == 404

    def test_non_owner_cannot_mutate(self, env, keys):
        authz, rs, _ = env
        _, a = client(authz, "owner")
        _, b = client(authz, "owner")
        rid = rs.put_record(a, sealed(keys[0]))
        assert status(rs.update_record, b, rid, sealed(keys[0])) == 403
        assert status(rs.delete_record, b, rid) == 403
        _, reader = client(authz, "user", ["a"])
        assert status(rs.delete_record, reader, rid) == 403

    def test_token_gates_transport_cpabe_gates_content(self, env, keys):
        authz, rs, _ = env
        _, owner = client(authz, "owner")
        rid = rs.put_record(owner, sealed(keys[0]))
        cid, tok = client(authz, "user", USER_ROWS[0][0])
        sk = cpabe.deserialize_artifact(rs.issue_private_key(tok, cid))
        data = rs.get_record(tok, rid)
        with pytest.raises(PolicyNotSatisfied):
            envelope.open_envelope(keys[0], sk, envelope.deserialize_envelope(data))
        authz.revoke(tok, admin=True)
        assert status(rs.get_record, tok, rid) == 401

    def test_storage_holds_no_plaintext(self, env, keys):
        authz, rs, _ = env
        _, tok = client(authz, "owner")
        for i in range(5):
            rs.put_record(tok, sealed(keys[0], plaintext=SENTINEL * (i + 1)))
        cid, utok = client(authz, "user", USER_ROWS[2][0])
        rs.issue_private_key(utok, cid)
        raw = b"".join(data for _, data in rs.backend.raw_items())
        assert raw and SENTINEL not in raw
        assert b'"pairs"' not in raw  # no private keys persisted


class TestStoredRecord:
    def test_roundtrip(self, keys):
        rec = StoredRecord(record_id="r", owner_client_id="o", envelope=sealed(keys[0], "a"),
                           policy_text="a", created_at=1.0, updated_at=2.0, seq=1, meta={"k": "v"})
        assert StoredRecord.from_bytes(rec.to_bytes()) == rec

    def test_directory_backend_atomic_files(self, tmp_path):
        backend = DirectoryBackend(tmp_path)
        backend.put("abc", b"one")
        backend.put("abc", b"two")
        assert backend.get("abc") == b"two"
        assert backend.list() == ["abc"]
        assert sorted(p.name for p in tmp_path.iterdir()) == ["abc.rec"]
        assert backend.delete("abc") and not backend.delete("abc")
        assert backend.get("abc") is None

    def test_directory_backend_rejects_traversal(self, tmp_path):
        backend = DirectoryBackend(tmp_path)
        with pytest.raises((ValueError, ResourceError)):
            backend.put("../evil", b"x")
