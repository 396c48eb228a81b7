import json
import random

import pytest

from abehg import cpabe, envelope, group
from abehg.errors import AuthenticationFailure, DomainError, MalformedArtifact, PolicyNotSatisfied
from abehg.group import b64d, b64e
from abehg.policy import parse_postfix

from conftest import ATTR_POOL, USER_ROWS, random_tree


def tamper_fails(pk, sk, data: bytes) -> bool:
    """True when tampered wire bytes are refused at decode or open."""
    try:
        env = envelope.deserialize_envelope(data)
        envelope.open_envelope(pk, sk, env)
    except (MalformedArtifact, AuthenticationFailure, PolicyNotSatisfied, ValueError):
        return True
    return False


@pytest.fixture(scope="module")
def sealed(keys, tree_t):
    pk, mk = keys
    sk = cpabe.keygen(pk, mk, USER_ROWS[2][0])
    plaintext = b"chest radiograph, no acute findings " * 8
    env = envelope.seal(pk, tree_t, plaintext, envelope.RecordMeta("text/plain", "owner-1"))
    return sk, plaintext, env


class TestContentKey:
    def test_deterministic_and_sized(self):
        m = group.random_gt(group.SystemEntropy())
        assert envelope.derive_content_key(m) == envelope.derive_content_key(m)
        assert len(envelope.derive_content_key(m)) == 32

    def test_distinct(self):
        entropy = group.SystemEntropy()
        keys = {envelope.derive_content_key(group.random_gt(entropy)) for _ in range(50)}
        assert len(keys) == 50


class TestSealOpen:
    def test_roundtrip(self, keys, sealed):
        sk, plaintext, env = sealed
        assert envelope.open_envelope(keys[0], sk, env) == plaintext
        assert envelope.open is envelope.open_envelope

    def test_empty_plaintext(self, keys):
        tree = parse_postfix("a")
        env = envelope.seal(keys[0], tree, b"")
        assert envelope.open_envelope(keys[0], cpabe.keygen(*keys, ["a"]), env) == b""

    def test_fresh_randomness(self, keys):
        tree = parse_postfix("a")
        a = envelope.seal(keys[0], tree, b"same")
        b = envelope.seal(keys[0], tree, b"same")
        assert a.body != b.body and a.nonce != b.nonce

    def test_oversize(self, keys):
        with pytest.raises(DomainError):
            envelope.seal(keys[0], parse_postfix("a"), b"x" * 11, max_size=10)

    def test_non_satisfying(self, keys, sealed, tree_t):
        _, _, env = sealed
        sk = cpabe.keygen(*keys, USER_ROWS[0][0])
        with pytest.raises(PolicyNotSatisfied):
            envelope.open_envelope(keys[0], sk, env)

    def test_random_roundtrips(self, keys):
        rng = random.Random(77)
        entropy = group.SystemEntropy()
        attrs = set(ATTR_POOL)
        for _ in range(50):
            tree = random_tree(rng, 8)
            size = rng.choice([0, 1, 100, 4096, rng.randint(1, 1 << 20)])
            plaintext = entropy.token_bytes(size)
            env = envelope.seal(keys[0], tree, plaintext)
            wire = envelope.serialize_envelope(env)
            back = envelope.deserialize_envelope(wire)
            assert envelope.open_envelope(keys[0], cpabe.keygen(*keys, attrs), back) == plaintext


class TestTamper:
    def test_flip_body_byte(self, keys, sealed):
        sk, _, env = sealed
        body = bytearray(env.body)
        body[3] ^= 0x01
        bad = envelope.RecordEnvelope(env.header, env.nonce, bytes(body), env.meta)
        with pytest.raises(AuthenticationFailure):
            envelope.open_envelope(keys[0], sk, bad)

    def test_swap_policy(self, keys, sealed):
        sk, _, env = sealed
        # Same leaf components, but a looser policy the key still satisfies.
        loose = parse_postfix(
            "position:doctor position:researcher position:professor 1of3 department:radiology 1of2 "
            "position:phd position:postdoc 1of3 university:amu 2of2")
        header = cpabe.CpabeCiphertext(loose, env.header.c_tilde, env.header.c, env.header.leaves)
        with pytest.raises(AuthenticationFailure):
            envelope.open_envelope(keys[0], sk, envelope.RecordEnvelope(header, env.nonce, env.body, env.meta))

    def test_swap_meta(self, keys, sealed):
        sk, _, env = sealed
        meta = envelope.RecordMeta("text/plain", "owner-2", env.meta.created_at)
        with pytest.raises(AuthenticationFailure):
            envelope.open_envelope(keys[0], sk, envelope.RecordEnvelope(env.header, env.nonce, env.body, meta))

    def test_header_moved_onto_other_body(self, keys, sealed, tree_t):
        sk, _, env = sealed
        other = envelope.seal(keys[0], tree_t, b"another record", env.meta)
        moved = envelope.RecordEnvelope(env.header, other.nonce, other.body, env.meta)
        with pytest.raises(AuthenticationFailure):
            envelope.open_envelope(keys[0], sk, moved)

    def test_unused_leaf_negated(self, keys, sealed):
        """A leaf the key never uses is still pinned by the associated data."""
        sk, _, env = sealed
        leaves = list(env.header.leaves)
        c_y, cp_y = leaves[4]  # position:phd, not on row 3's decryption path
        leaves[4] = (c_y.inverse(), cp_y.inverse())
        header = cpabe.CpabeCiphertext(env.header.policy, env.header.c_tilde, env.header.c, tuple(leaves))
        with pytest.raises(AuthenticationFailure):
            envelope.open_envelope(keys[0], sk, envelope.RecordEnvelope(header, env.nonce, env.body, env.meta))

    def test_sign_bit_flip_on_wire(self, keys, sealed):
        sk, _, env = sealed
        doc = json.loads(envelope.serialize_envelope(env))
        raw = bytearray(b64d(doc["header"]["leaves"][5][0]))
        raw[1] ^= 0x01  # 0x02 <-> 0x03 compression prefix
        doc["header"]["leaves"][5][0] = b64e(bytes(raw))
        assert tamper_fails(keys[0], sk, json.dumps(doc).encode())

    def test_single_byte_flips(self, keys, sealed):
        sk, _, env = sealed
        wire = envelope.serialize_envelope(env)
        rng = random.Random(5)
        for _ in range(100):
            data = bytearray(wire)
            pos = rng.randrange(len(data))
            data[pos] = (data[pos] + rng.randint(1, 255)) % 256
            assert tamper_fails(keys[0], sk, bytes(data)), pos


class TestWireFormat:
    def test_shape(self, sealed):
        doc = json.loads(envelope.serialize_envelope(sealed[2]))
        assert set(doc) == {"v", "type", "header", "nonce", "body", "meta"}
        assert doc["type"] == "ehr.envelope" and doc["v"] == 1
        assert set(doc["meta"]) == {"content_type", "created_at", "owner_id"}
        assert len(b64d(doc["nonce"])) == 12

    def test_roundtrip_bytes(self, sealed):
        wire = envelope.serialize_envelope(sealed[2])
        assert envelope.serialize_envelope(envelope.deserialize_envelope(wire)) == wire

    @pytest.mark.parametrize("mutate", [
        lambda d: d.update(v=2),
        lambda d: d.update(type="other"),
        lambda d: d.update(nonce=b64e(b"\x00" * 11)),
        lambda d: d.update(body=b64e(b"short")),
        lambda d: d["meta"].update(extra="x"),
        lambda d: d["meta"].pop("owner_id"),
        lambda d: d["meta"].update(created_at=1.5),
        lambda d: d.pop("header"),
    ])
    def test_rejects(self, sealed, mutate):
        doc = json.loads(envelope.serialize_envelope(sealed[2]))
        mutate(doc)
        with pytest.raises(MalformedArtifact):
            envelope.deserialize_envelope(json.dumps(doc))

    def test_not_json(self):
        with pytest.raises(MalformedArtifact):
            envelope.deserialize_envelope(b"{")
