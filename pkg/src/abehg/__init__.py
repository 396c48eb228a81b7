"""Ciphertext-policy ABE fused with an OAuth 2.0 authorization layer for
sharing encrypted health records."""

from .cpabe import decrypt_element, encrypt_element, keygen, setup
from .envelope import open_envelope, seal
from .policy import parse_infix, parse_policy, parse_postfix, satisfies, serialize_policy

__version__ = "0.1.0"

__all__ = [
    "decrypt_element", "encrypt_element", "keygen", "open_envelope", "parse_infix",
    "parse_policy", "parse_postfix", "satisfies", "seal", "serialize_policy", "setup",
]
