"""Key pairs, signatures, and actor identity.

Ed25519 throughout: 32-byte seeds and public keys, 64-byte deterministic
signatures. An actor id is the SHA-256 fingerprint of the raw public key,
used as the compact identity in logs, peer tables, and anchor transactions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import HybridLedgerError, MalformedInputError

SEED_BYTES = 32
PUBLIC_KEY_BYTES = 32
SIGNATURE_BYTES = 64

PublicKey = bytes
Signature = bytes
ActorId = bytes


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    secret: bytes


def generate_keypair(seed: bytes) -> KeyPair:
    """Derive a key pair from 32 bytes of entropy; same seed, same pair."""
    if len(seed) != SEED_BYTES:
        raise ValueError(f"seed must be {SEED_BYTES} bytes, got {len(seed)}")
    private = Ed25519PrivateKey.from_private_bytes(seed)
    return KeyPair(public=private.public_key().public_bytes_raw(), secret=seed)


def sign(secret: bytes, message: bytes) -> Signature:
    if len(secret) != SEED_BYTES:
        raise HybridLedgerError("INVALID_KEY", "secret key must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(secret).sign(message)


def verify(public: PublicKey, message: bytes, signature: Signature) -> bool:
    """True iff ``signature`` is valid for ``message`` under ``public``.

    Raises MalformedInputError when the key or signature bytes cannot even
    be decoded (wrong width); plain invalidity is a False return, not an
    error.
    """
    if len(public) != PUBLIC_KEY_BYTES:
        raise MalformedInputError("undecodable public key")
    if len(signature) != SIGNATURE_BYTES:
        raise MalformedInputError("undecodable signature")
    try:
        key = Ed25519PublicKey.from_public_bytes(public)
    except ValueError as exc:
        raise MalformedInputError(str(exc)) from exc
    try:
        key.verify(signature, message)
    except InvalidSignature:
        return False
    return True


def actor_id(public: PublicKey) -> ActorId:
    return hashlib.sha256(public).digest()


def save_keypair(keypair: KeyPair, path: str | Path) -> None:
    """Write the seed as one hex line at ``path`` and the public key at ``path + '.pub'``."""
    path = Path(path)
    path.write_text(keypair.secret.hex() + "\n")
    path.with_name(path.name + ".pub").write_text(keypair.public.hex() + "\n")


def load_keypair(path: str | Path) -> KeyPair:
    seed = _read_hex(path, SEED_BYTES)
    return generate_keypair(seed)


def load_public_key(path: str | Path) -> PublicKey:
    return _read_hex(path, PUBLIC_KEY_BYTES)


def _read_hex(path: str | Path, width: int) -> bytes:
    text = Path(path).read_text().strip()
    try:
        data = bytes.fromhex(text)
    except ValueError as exc:
        raise MalformedInputError(f"{path}: not hex") from exc
    if len(data) != width:
        raise MalformedInputError(f"{path}: expected {width} bytes, got {len(data)}")
    return data
