"""Ciphertext-policy ABE: setup, keygen, encrypt and decrypt of GT elements.

This is the classic threshold-tree construction.  Setup draws ``alpha`` and
``beta``; a key for attribute set S is

    d    = g^((alpha + r) / beta)
    d_j  = g^r * H(j)^(r_j),   dp_j = g^(r_j)        for every j in S

and a ciphertext under tree T with root secret s is

    c_tilde = m * e(g, g)^(alpha s),   c = h^s,
    c_y = g^(q_y(0)),   cp_y = H(att(y))^(q_y(0))     for every leaf y

where each gate x carries a random polynomial q_x of degree k_x - 1 and
children are indexed 1..n left to right.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping

from . import group
from .errors import DomainError, MalformedArtifact, PolicyNotSatisfied
from .group import G0, GT, b64d, b64e, hash_to_group, lagrange_coeff, pairing
from .policy import (
    AccessTree,
    Leaf,
    attribute_set,
    leaf_count,
    min_satisfying_assignment,
    parse_postfix,
    serialize_policy,
    walk_leaves,
)

VERSION = 1


@dataclass(frozen=True)
class PublicKey:
    g: G0
    h: G0
    egg_alpha: GT
    group_id: str = group.GROUP_ID


@dataclass(frozen=True)
class MasterKey:
    beta: int
    g_alpha: G0
    group_id: str = group.GROUP_ID


@dataclass(frozen=True)
class PrivateKey:
    attrs: frozenset
    d: G0
    components: Mapping[str, tuple[G0, G0]]
    group_id: str = group.GROUP_ID

    def __post_init__(self):
        if not self.attrs:
            raise DomainError("private key needs at least one attribute")
        if set(self.components) != set(self.attrs):
            raise MalformedArtifact("need exactly one component pair per attribute")


@dataclass(frozen=True)
class CpabeCiphertext:
    policy: AccessTree
    c_tilde: GT
    c: G0
    leaves: tuple[tuple[G0, G0], ...]
    group_id: str = group.GROUP_ID

    def __post_init__(self):
        if len(self.leaves) != leaf_count(self.policy):
            raise MalformedArtifact("leaf component count does not match the policy")

    @property
    def policy_text(self) -> str:
        return serialize_policy(self.policy)


# -- the four algorithms ---------------------------------------------------

def setup(entropy=None) -> tuple[PublicKey, MasterKey]:
    entropy = group.default_entropy(entropy)
    alpha = group.random_scalar(entropy)
    beta = group.random_nonzero_scalar(entropy)
    g = G0.generator()
    pk = PublicKey(g=g, h=g ** beta, egg_alpha=group.EGG ** alpha)
    mk = MasterKey(beta=beta, g_alpha=g ** alpha)
    return pk, mk


def keygen(pk: PublicKey, mk: MasterKey, attrs: Iterable[str], entropy=None) -> PrivateKey:
    entropy = group.default_entropy(entropy)
    attrs = attribute_set(attrs)
    if not attrs:
        raise DomainError("cannot issue a key for an empty attribute set")
    r = group.random_scalar(entropy)
    g_r = pk.g ** r
    d = (mk.g_alpha * g_r) ** group.inverse(mk.beta)
    components = {}
    for j in sorted(attrs):
        r_j = group.random_scalar(entropy)
        components[j] = (g_r * hash_to_group(j) ** r_j, pk.g ** r_j)
    return PrivateKey(attrs=attrs, d=d, components=components)


def _share(node: AccessTree, secret: int, entropy, out: list[int]) -> None:
    if isinstance(node, Leaf):
        out.append(secret)
        return
    poly = group.sample_polynomial(node.threshold - 1, secret, entropy)
    for i, child in enumerate(node.children, start=1):
        _share(child, poly(i), entropy, out)


def encrypt_element(pk: PublicKey, m: GT, tree: AccessTree, entropy=None) -> CpabeCiphertext:
    entropy = group.default_entropy(entropy)
    s = group.random_scalar(entropy)
    shares: list[int] = []
    _share(tree, s, entropy, shares)
    leaves = tuple(
        (pk.g ** q, hash_to_group(leaf.attribute) ** q)
        for (_, leaf), q in zip(walk_leaves(tree), shares)
    )
    return CpabeCiphertext(
        policy=tree,
        c_tilde=m * pk.egg_alpha ** s,
        c=pk.h ** s,
        leaves=leaves,
    )


def decrypt_element(pk: PublicKey, sk: PrivateKey, ct: CpabeCiphertext) -> GT:
    if len(ct.leaves) != leaf_count(ct.policy):
        raise MalformedArtifact("leaf component count does not match the policy")
    plan = min_satisfying_assignment(ct.policy, sk.attrs)
    if plan is None:
        raise PolicyNotSatisfied()
    leaf_index = {path: i for i, (path, _) in enumerate(walk_leaves(ct.policy))}

    def node_value(node: AccessTree, path: tuple) -> GT:
        if isinstance(node, Leaf):
            d_j, dp_j = sk.components[node.attribute]
            c_y, cp_y = ct.leaves[leaf_index[path]]
            return pairing(d_j, c_y) / pairing(dp_j, cp_y)
        chosen = plan.chosen[path]
        acc = GT.identity()
        for i in chosen:
            acc = acc * node_value(node.children[i - 1], path + (i,)) ** lagrange_coeff(i, chosen)
        return acc

    a = node_value(ct.policy, ())
    return ct.c_tilde * a / pairing(ct.c, sk.d)


# -- consistency checks ----------------------------------------------------

def check_public_key(pk: PublicKey) -> None:
    if pk.group_id != group.GROUP_ID:
        raise MalformedArtifact(f"group id {pk.group_id!r} is not {group.GROUP_ID!r}")
    if not (pk.g.is_full and pk.h.is_full):
        raise MalformedArtifact("public key elements must carry both halves")
    if pairing(pk.g, pk.h) == GT.identity():
        raise MalformedArtifact("degenerate public key")


def check_master_key(pk: PublicKey, mk: MasterKey) -> None:
    if not 0 < mk.beta < group.ORDER:
        raise MalformedArtifact("beta must be invertible")
    if pairing(mk.g_alpha, pk.g) != pk.egg_alpha or pk.g ** mk.beta != pk.h:
        raise MalformedArtifact("master key does not match the public key")


# -- serialization ---------------------------------------------------------

KINDS = {
    PublicKey: "cpabe.public_key",
    MasterKey: "cpabe.master_key",
    PrivateKey: "cpabe.private_key",
    CpabeCiphertext: "cpabe.ciphertext",
}
FILE_EXTENSIONS = {
    "cpabe.public_key": ".gpk",
    "cpabe.master_key": ".msk",
    "cpabe.private_key": ".prk",
    "cpabe.ciphertext": ".cpct",
}


def to_json(artifact) -> dict:
    kind = KINDS.get(type(artifact))
    if kind is None:
        raise DomainError(f"not a CPABE artifact: {type(artifact).__name__}")
    doc = {"v": VERSION, "type": kind, "group_id": artifact.group_id}
    if isinstance(artifact, PublicKey):
        doc.update(g=b64e(artifact.g.encode()), h=b64e(artifact.h.encode()),
                   egg_alpha=b64e(artifact.egg_alpha.encode()))
    elif isinstance(artifact, MasterKey):
        doc.update(beta=b64e(group.encode_scalar(artifact.beta)),
                   g_alpha=b64e(artifact.g_alpha.encode()))
    elif isinstance(artifact, PrivateKey):
        attrs = sorted(artifact.attrs)
        doc.update(
            attrs=attrs,
            d=b64e(artifact.d.encode()),
            pairs=[[b64e(artifact.components[a][0].encode()), b64e(artifact.components[a][1].encode())]
                   for a in attrs],
        )
    else:
        doc.update(
            policy=artifact.policy_text,
            c_tilde=b64e(artifact.c_tilde.encode()),
            c=b64e(artifact.c.encode()),
            leaves=[[b64e(cy.encode()), b64e(cpy.encode())] for cy, cpy in artifact.leaves],
        )
    return doc


def serialize_artifact(artifact) -> bytes:
    return json.dumps(to_json(artifact), separators=(",", ":"), sort_keys=True).encode("utf-8")


def _g0(doc: dict, key: str) -> G0:
    return G0.decode(b64d(_field(doc, key, str)))


def _field(doc: dict, key: str, typ):
    if key not in doc:
        raise MalformedArtifact(f"missing field {key!r}")
    value = doc[key]
    if not isinstance(value, typ):
        raise MalformedArtifact(f"field {key!r} has the wrong type")
    return value


def _pairs(doc: dict, key: str) -> list[tuple[G0, G0]]:
    out = []
    for item in _field(doc, key, list):
        if not (isinstance(item, list) and len(item) == 2 and all(isinstance(x, str) for x in item)):
            raise MalformedArtifact(f"bad entry in {key!r}")
        out.append((G0.decode(b64d(item[0])), G0.decode(b64d(item[1]))))
    return out


def _canonical_policy(text: str) -> AccessTree:
    try:
        tree = parse_postfix(text)
    except ValueError as exc:
        raise MalformedArtifact(f"embedded policy does not parse: {exc}") from exc
    if serialize_policy(tree) != text:
        raise MalformedArtifact("embedded policy is not in canonical form")
    return tree


def from_json(doc, expect: str | None = None):
    if not isinstance(doc, dict):
        raise MalformedArtifact("artifact must be a JSON object")
    if doc.get("v") != VERSION or isinstance(doc.get("v"), bool):
        raise MalformedArtifact(f"unsupported artifact version {doc.get('v')!r}")
    kind = _field(doc, "type", str)
    if expect is not None and kind != expect:
        raise MalformedArtifact(f"expected {expect}, got {kind}")
    if _field(doc, "group_id", str) != group.GROUP_ID:
        raise MalformedArtifact(f"group id mismatch: {doc['group_id']!r}")

    if kind == "cpabe.public_key":
        pk = PublicKey(g=_g0(doc, "g"), h=_g0(doc, "h"),
                       egg_alpha=GT.decode(b64d(_field(doc, "egg_alpha", str))))
        check_public_key(pk)
        return pk
    if kind == "cpabe.master_key":
        beta = group.decode_scalar(b64d(_field(doc, "beta", str)))
        if beta == 0:
            raise MalformedArtifact("beta must be invertible")
        mk = MasterKey(beta=beta, g_alpha=_g0(doc, "g_alpha"))
        if not mk.g_alpha.is_full:
            raise MalformedArtifact("g_alpha must carry both halves")
        return mk
    if kind == "cpabe.private_key":
        attrs = _field(doc, "attrs", list)
        if not all(isinstance(a, str) for a in attrs) or not attrs:
            raise MalformedArtifact("attrs must be a nonempty list of strings")
        normalized = attribute_set(attrs)
        if sorted(normalized) != attrs:
            raise MalformedArtifact("attrs must be sorted, normalized and distinct")
        pairs = _pairs(doc, "pairs")
        if len(pairs) != len(attrs):
            raise MalformedArtifact("one component pair per attribute required")
        d = _g0(doc, "d")
        if not d.is_full or any(dp.g1 is None for _, dp in pairs) or any(dj.g2 is None for dj, _ in pairs):
            raise MalformedArtifact("key components are missing a required half")
        return PrivateKey(attrs=normalized, d=d, components=dict(zip(attrs, pairs)))
    if kind == "cpabe.ciphertext":
        tree = _canonical_policy(_field(doc, "policy", str))
        leaves = _pairs(doc, "leaves")
        if len(leaves) != leaf_count(tree):
            raise MalformedArtifact("leaf component count does not match the policy")
        c = _g0(doc, "c")
        if c.g1 is None or any(cy.g1 is None or cpy.g2 is None for cy, cpy in leaves):
            raise MalformedArtifact("ciphertext components are missing a required half")
        return CpabeCiphertext(policy=tree, c_tilde=GT.decode(b64d(_field(doc, "c_tilde", str))),
                               c=c, leaves=tuple(leaves))
    raise MalformedArtifact(f"unknown artifact type {kind!r}")


def deserialize_artifact(data: bytes | str, expect: str | None = None):
    try:
        doc = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedArtifact(f"artifact is not valid JSON: {exc}") from exc
    return from_json(doc, expect)
