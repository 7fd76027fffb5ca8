"""
Concrete instantiations of the primitives the exchange protocol needs.

- Symmetric scheme (Gen, Enc, Dec): ChaCha20-Poly1305 with 256-bit keys and
  96-bit random nonces. Authentication makes wrong-key decryption detectable.
- Hash H: SHA-256. Preimage resistance is what makes publishing H(K) safe.
- Signatures: Ed25519. Signing is deterministic, so runs stay reproducible.

All randomness is drawn from an injected ``random.Random`` owned by the
caller. That source is NOT cryptographically strong: it exists so that two
runs with the same seed are octet-identical. This module is for simulation.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from fairex.criteria import AttributeSet
from fairex.errors import AuthenticationFailure, MalformedKey, PlaintextTooLarge

KEY_LENGTH = 32
NONCE_LENGTH = 12
TAG_LENGTH = 16
DIGEST_LENGTH = 32
SIGNING_KEY_LENGTH = 32
VERIFY_KEY_LENGTH = 32
SIGNATURE_LENGTH = 64
MAX_PLAINTEXT_LENGTH = 2**20


@dataclass(frozen=True)
class SymKey:
    """Symmetric key K."""

    raw: bytes

    def __post_init__(self) -> None:
        if len(self.raw) != KEY_LENGTH:
            raise ValueError(f"SymKey must be {KEY_LENGTH} octets, got {len(self.raw)}")


@dataclass(frozen=True)
class Ciphertext:
    """Authenticated ciphertext C; ``body`` includes the tag."""

    nonce: bytes
    body: bytes

    def __post_init__(self) -> None:
        if len(self.nonce) != NONCE_LENGTH:
            raise ValueError(f"nonce must be {NONCE_LENGTH} octets")
        if len(self.body) < TAG_LENGTH:
            raise ValueError("ciphertext body shorter than the authentication tag")

    def to_bytes(self) -> bytes:
        """Canonical form of C (nonce followed by body), the input of Y = H(C)."""
        return self.nonce + self.body


@dataclass(frozen=True)
class Digest:
    """Output of H."""

    raw: bytes

    def __post_init__(self) -> None:
        if len(self.raw) != DIGEST_LENGTH:
            raise ValueError(f"Digest must be {DIGEST_LENGTH} octets")

    def hex(self) -> str:
        return self.raw.hex()


@dataclass(frozen=True)
class Signature:
    """Ed25519 signature."""

    raw: bytes

    def __post_init__(self) -> None:
        if len(self.raw) != SIGNATURE_LENGTH:
            raise ValueError(f"Signature must be {SIGNATURE_LENGTH} octets")


@dataclass(frozen=True)
class SigKeyPair:
    """Signing seed plus the verify key derived from it."""

    signing_key: bytes
    verify_key: bytes

    def __repr__(self) -> str:
        return f"SigKeyPair(verify_key={self.verify_key.hex()})"


@dataclass(frozen=True)
class CertBody:
    """The triple (s, Y, X) that the notary signs, and nothing else."""

    attributes: AttributeSet
    ciphertext_hash: Digest
    key_hash: Digest


def gen_key(rng: random.Random) -> SymKey:
    """
    Draw a fresh symmetric key.

    Args:
        rng: Seeded randomness source owned by the caller

    Returns:
        A key of KEY_LENGTH octets
    """
    return SymKey(rng.randbytes(KEY_LENGTH))


def encrypt(key: SymKey, plaintext: bytes, rng: random.Random) -> Ciphertext:
    """
    Encrypt under a fresh random nonce.

    Args:
        key: Symmetric key
        plaintext: Data to encrypt, at most MAX_PLAINTEXT_LENGTH octets
        rng: Seeded randomness source used for the nonce

    Returns:
        Ciphertext whose body is len(plaintext) + TAG_LENGTH octets

    Raises:
        PlaintextTooLarge: If the plaintext exceeds the configured maximum
    """
    if len(plaintext) > MAX_PLAINTEXT_LENGTH:
        raise PlaintextTooLarge(
            f"plaintext of {len(plaintext)} octets exceeds {MAX_PLAINTEXT_LENGTH}"
        )
    nonce = rng.randbytes(NONCE_LENGTH)
    body = ChaCha20Poly1305(key.raw).encrypt(nonce, plaintext, None)
    return Ciphertext(nonce=nonce, body=body)


def decrypt(key: SymKey, ciphertext: Ciphertext) -> bytes:
    """
    Decrypt and authenticate.

    Raises:
        AuthenticationFailure: On a wrong key or a tampered ciphertext
    """
    try:
        return ChaCha20Poly1305(key.raw).decrypt(ciphertext.nonce, ciphertext.body, None)
    except InvalidTag as e:
        raise AuthenticationFailure("ciphertext does not authenticate") from e


def hash_data(data: bytes) -> Digest:
    """SHA-256 of ``data``."""
    return Digest(hashlib.sha256(data).digest())


def derive_verify_key(signing_key: bytes) -> bytes:
    """
    Derive the public verify key from a signing seed.

    Raises:
        MalformedKey: If the seed has the wrong length
    """
    return _public_bytes(_load_signing_key(signing_key).public_key())


def gen_signing_keypair(rng: random.Random) -> SigKeyPair:
    """
    Draw an Ed25519 key pair from the seeded source.

    Args:
        rng: Seeded randomness source owned by the caller

    Returns:
        A key pair whose verify key is derived from its signing seed
    """
    seed = rng.randbytes(SIGNING_KEY_LENGTH)
    return SigKeyPair(signing_key=seed, verify_key=derive_verify_key(seed))


def sign(signing_key: bytes, message: bytes) -> Signature:
    """
    Sign ``message``.

    Raises:
        MalformedKey: If the signing key is not a 32-octet seed
    """
    return Signature(_load_signing_key(signing_key).sign(message))


def verify(verify_key: bytes, message: bytes, signature: Signature) -> bool:
    """
    Check a signature.

    Returns:
        True exactly when ``signature`` was produced over ``message`` by the
        signing key matching ``verify_key``

    Raises:
        MalformedKey: If the verify key is not a well-formed public key
    """
    if len(verify_key) != VERIFY_KEY_LENGTH:
        raise MalformedKey(f"verify key must be {VERIFY_KEY_LENGTH} octets")
    try:
        public = Ed25519PublicKey.from_public_bytes(verify_key)
    except ValueError as e:
        raise MalformedKey(f"invalid verify key: {e}") from e
    try:
        public.verify(signature.raw, message)
    except InvalidSignature:
        return False
    return True


def _load_signing_key(signing_key: bytes) -> Ed25519PrivateKey:
    if len(signing_key) != SIGNING_KEY_LENGTH:
        raise MalformedKey(f"signing key must be {SIGNING_KEY_LENGTH} octets")
    return Ed25519PrivateKey.from_private_bytes(signing_key)


def _public_bytes(public: Ed25519PublicKey) -> bytes:
    return public.public_bytes(
        encoding=serialization.Encoding.Raw, format=serialization.PublicFormat.Raw
    )
