"""Pairing group substrate: scalars, the symmetric-model source group, GT,
hashing into the group, and threshold sharing polynomials.

The curve is BLS12-381 (RELIC via ``petrelic``).  The pairing there is
asymmetric, ``G1 x G2 -> GT``; :class:`G0` hides that by carrying a G1 half
and a G2 half produced from the same exponent, so ``g ** x`` is the pair
``(g1 ** x, g2 ** x)`` and ``pairing(a, b)`` is ``e(a.g1, b.g2)``.

Attribute hashes are the one place where a same-exponent pair cannot be
produced without knowing the discrete log, so :func:`hash_to_group` returns a
G2-only element.  Every product involving it is G2-only too, and
:func:`pairing` takes its G1 side from whichever operand has one.
"""

from __future__ import annotations

import base64
import hashlib
import random
import re
import secrets
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from petrelic.multiplicative.pairing import (
    G1,
    G2,
    GT as _GT,
    G1Element,
    G2Element,
    GTElement,
)

from .errors import DomainError, MalformedArtifact

GROUP_ID = "bls12-381:g0pair:v1"
ORDER = int(G1.order())
SCALAR_BYTES = 32
HASH_DST = b"cpabe:attr:v1"

_G1_LEN = 49
_G2_LEN = 97
_GT_LEN = 384
_HAS_G1 = 0x01
_HAS_G2 = 0x02
G0_ENCODED_LEN = 1 + _G1_LEN + _G2_LEN
GT_ENCODED_LEN = _GT_LEN

_B64URL = re.compile(r"[A-Za-z0-9_-]*")


# -- base64url -------------------------------------------------------------

def b64e(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64d(text: str) -> bytes:
    """Strict base64url decode: unpadded, urlsafe alphabet, canonical bits."""
    if not isinstance(text, str) or not _B64URL.fullmatch(text) or len(text) % 4 == 1:
        raise MalformedArtifact("malformed base64url")
    raw = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    if b64e(raw) != text:
        raise MalformedArtifact("non-canonical base64url")
    return raw


# -- entropy ---------------------------------------------------------------

class SystemEntropy:
    """OS CSPRNG.  The only source service code accepts."""

    deterministic = False

    def randbelow(self, n: int) -> int:
        return secrets.randbelow(n)

    def token_bytes(self, n: int) -> bytes:
        return secrets.token_bytes(n)


class SeededEntropy:
    """Reproducible entropy for tests.  Never use outside a test suite."""

    deterministic = True

    def __init__(self, seed: int | str | bytes = 0):
        self._rng = random.Random(seed)

    def randbelow(self, n: int) -> int:
        return self._rng.randrange(n)

    def token_bytes(self, n: int) -> bytes:
        return self._rng.randbytes(n)


def default_entropy(entropy=None):
    return SystemEntropy() if entropy is None else entropy


def require_secure(entropy) -> None:
    if getattr(entropy, "deterministic", True):
        raise DomainError("deterministic entropy is refused outside tests")


def random_scalar(entropy) -> int:
    return entropy.randbelow(ORDER)


def random_nonzero_scalar(entropy) -> int:
    return 1 + entropy.randbelow(ORDER - 1)


# -- scalars ---------------------------------------------------------------

def scalar(value: int) -> int:
    return value % ORDER


def encode_scalar(value: int) -> bytes:
    return (value % ORDER).to_bytes(SCALAR_BYTES, "big")


def decode_scalar(data: bytes) -> int:
    if len(data) != SCALAR_BYTES:
        raise MalformedArtifact("scalar must be 32 bytes")
    value = int.from_bytes(data, "big")
    if value >= ORDER:
        raise MalformedArtifact("scalar not reduced modulo the group order")
    return value


def inverse(value: int) -> int:
    if value % ORDER == 0:
        raise DomainError("zero has no inverse")
    return pow(value, -1, ORDER)


# -- source group ----------------------------------------------------------

def _decode_half(data: bytes, cls, group, size: int):
    if not any(data):
        return group.neutral_element()
    if data[0] not in (2, 3):
        raise MalformedArtifact("bad point prefix")
    point = cls.from_binary(data)
    if not point.is_valid() or point ** ORDER != group.neutral_element():
        raise MalformedArtifact("point not in the prime-order subgroup")
    if point.to_binary().ljust(size, b"\x00") != data:
        raise MalformedArtifact("non-canonical point encoding")
    return point


class G0:
    """Element of the symmetric-model source group (see module docstring)."""

    __slots__ = ("g1", "g2")

    def __init__(self, g1: Optional[G1Element], g2: Optional[G2Element]):
        if g1 is None and g2 is None:
            raise DomainError("G0 element needs at least one half")
        self.g1 = g1
        self.g2 = g2

    @classmethod
    def generator(cls) -> "G0":
        return _GENERATOR

    @classmethod
    def identity(cls) -> "G0":
        return cls(G1.neutral_element(), G2.neutral_element())

    @property
    def is_full(self) -> bool:
        return self.g1 is not None and self.g2 is not None

    def __mul__(self, other: "G0") -> "G0":
        g1 = None if self.g1 is None or other.g1 is None else self.g1 * other.g1
        g2 = None if self.g2 is None or other.g2 is None else self.g2 * other.g2
        return G0(g1, g2)

    def __truediv__(self, other: "G0") -> "G0":
        return self * other.inverse()

    def inverse(self) -> "G0":
        return G0(
            None if self.g1 is None else self.g1.inverse(),
            None if self.g2 is None else self.g2.inverse(),
        )

    def __pow__(self, exponent: int) -> "G0":
        e = exponent % ORDER
        base = self
        if e > ORDER // 2:
            base, e = self.inverse(), ORDER - e
        return G0(
            None if base.g1 is None else base.g1 ** e,
            None if base.g2 is None else base.g2 ** e,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, G0):
            return NotImplemented
        return self.encode() == other.encode()

    def __hash__(self) -> int:
        return hash(self.encode())

    def __repr__(self) -> str:
        return f"G0({self.encode()[:9].hex()}...)"

    def encode(self) -> bytes:
        flags = (_HAS_G1 if self.g1 is not None else 0) | (_HAS_G2 if self.g2 is not None else 0)
        s1 = b"" if self.g1 is None else self.g1.to_binary()
        s2 = b"" if self.g2 is None else self.g2.to_binary()
        return bytes([flags]) + s1.ljust(_G1_LEN, b"\x00") + s2.ljust(_G2_LEN, b"\x00")

    @classmethod
    def decode(cls, data: bytes) -> "G0":
        if len(data) != G0_ENCODED_LEN:
            raise MalformedArtifact("G0 encoding has the wrong length")
        flags = data[0]
        if flags not in (_HAS_G1, _HAS_G2, _HAS_G1 | _HAS_G2):
            raise MalformedArtifact("bad G0 flags")
        raw1, raw2 = data[1:1 + _G1_LEN], data[1 + _G1_LEN:]
        g1 = g2 = None
        if flags & _HAS_G1:
            g1 = _decode_half(raw1, G1Element, G1, _G1_LEN)
        elif any(raw1):
            raise MalformedArtifact("absent G1 half must be zero")
        if flags & _HAS_G2:
            g2 = _decode_half(raw2, G2Element, G2, _G2_LEN)
        elif any(raw2):
            raise MalformedArtifact("absent G2 half must be zero")
        return cls(g1, g2)


_GENERATOR = G0(G1.generator(), G2.generator())


class GT:
    """Element of the pairing target group, written multiplicatively."""

    __slots__ = ("value",)

    def __init__(self, value: GTElement):
        self.value = value

    @classmethod
    def identity(cls) -> "GT":
        return cls(_GT.neutral_element())

    def __mul__(self, other: "GT") -> "GT":
        return GT(self.value * other.value)

    def __truediv__(self, other: "GT") -> "GT":
        return GT(self.value * other.value.inverse())

    def __pow__(self, exponent: int) -> "GT":
        e = exponent % ORDER
        if e > ORDER // 2:
            return GT(self.value.inverse() ** (ORDER - e))
        return GT(self.value ** e)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GT):
            return NotImplemented
        return self.value == other.value

    def __hash__(self) -> int:
        return hash(self.encode())

    def __repr__(self) -> str:
        return f"GT({self.encode()[:8].hex()}...)"

    def encode(self) -> bytes:
        return self.value.to_binary()

    @classmethod
    def decode(cls, data: bytes) -> "GT":
        if len(data) != _GT_LEN:
            raise MalformedArtifact("GT encoding has the wrong length")
        value = GTElement.from_binary(data)
        if not value.is_valid() or value ** ORDER != _GT.neutral_element():
            raise MalformedArtifact("GT element not in the prime-order subgroup")
        if value.to_binary() != data:
            raise MalformedArtifact("non-canonical GT encoding")
        return cls(value)


def pairing(a: G0, b: G0) -> GT:
    """Bilinear map on the symmetric model; ``pairing(a, b) == pairing(b, a)``."""
    if a.g1 is not None and b.g2 is not None:
        return GT(a.g1.pair(b.g2))
    if b.g1 is not None and a.g2 is not None:
        return GT(b.g1.pair(a.g2))
    raise DomainError("cannot pair two G2-only elements")


EGG = pairing(_GENERATOR, _GENERATOR)


def random_gt(entropy) -> GT:
    return EGG ** random_nonzero_scalar(entropy)


def hash_to_group(label: bytes | str) -> G0:
    if isinstance(label, str):
        label = label.encode("utf-8")
    return G0(None, G2.hash_to_point(HASH_DST + label))


# -- sharing ---------------------------------------------------------------

def lagrange_coeff(i: int, indices: Sequence[int], x: int = 0) -> int:
    """Lagrange basis coefficient for index ``i`` over ``indices`` at ``x``."""
    index_list = list(indices)
    if len(set(index_list)) != len(index_list):
        raise DomainError("duplicate interpolation indices")
    if any(j % ORDER == 0 for j in index_list):
        raise DomainError("interpolation indices must be nonzero")
    if i not in index_list:
        raise DomainError(f"index {i} not in the interpolation set")
    num, den = 1, 1
    for j in index_list:
        if j == i:
            continue
        num = num * (x - j) % ORDER
        den = den * (i - j) % ORDER
    return num * pow(den, -1, ORDER) % ORDER


@dataclass(frozen=True)
class SharePolynomial:
    coefficients: tuple[int, ...]

    def __post_init__(self):
        if not self.coefficients:
            raise DomainError("polynomial needs at least a constant term")

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x: int) -> int:
        return eval_polynomial(self, x)


def sample_polynomial(degree: int, secret: int, entropy) -> SharePolynomial:
    if degree < 0:
        raise DomainError("degree must be nonnegative")
    coeffs = [secret % ORDER] + [random_scalar(entropy) for _ in range(degree)]
    return SharePolynomial(tuple(coeffs))


def eval_polynomial(poly: SharePolynomial, x: int) -> int:
    acc = 0
    for c in reversed(poly.coefficients):
        acc = (acc * x + c) % ORDER
    return acc


def reconstruct(shares: dict[int, int] | Iterable[tuple[int, int]]) -> int:
    """Interpolate the constant term from ``{index: share}``."""
    items = list(shares.items() if isinstance(shares, dict) else shares)
    idx = [i for i, _ in items]
    return sum(y * lagrange_coeff(i, idx) for i, y in items) % ORDER
