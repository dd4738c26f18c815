"""Canonical message formats: requests, receipts, and their wire encoding.

Every message encodes to a single deterministic byte sequence: a 1-byte tag,
fixed-width big-endian integers, 4-byte length prefixes for variable fields,
fields in declaration order. The signing input of a signed message is its
encoding with the signature fields omitted, so signatures bind the tag and
every prior field. decode() accepts exactly the image of encode() and
raises MALFORMED for anything else, including trailing bytes and invariant
violations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Union

from . import identity
from .errors import MalformedError, MalformedInputError
from .hashtree import DIGEST_BYTES, ConsistencyProof, Digest, InclusionProof
from .identity import PublicKey, Signature
from .wire import Reader, Writer

LEDGER_ID_BYTES = 16

TAG_CREATION = 0x01
TAG_EXTENSION = 0x02
TAG_RECEIPT = 0x03

KIND_CREATION = "creation"
KIND_EXTENSION = "extension"

# Receipt.anchor_ref sentinel on the wire; in Python the pending marker is None.
_ANCHOR_PENDING = 2**64 - 1

# verify_receipt rejection reasons
BAD_NOTARY_SIG = "BAD_NOTARY_SIG"
BAD_AUTHOR_SIG = "BAD_AUTHOR_SIG"
AUTHOR_NOT_IN_SET = "AUTHOR_NOT_IN_SET"
MALFORMED = "MALFORMED"

LedgerId = bytes


def new_ledger_id(creator_key: PublicKey, nonce: bytes) -> LedgerId:
    """Client-side id allocation: first 16 bytes of H(creator key || nonce)."""
    return hashlib.sha256(creator_key + nonce).digest()[:LEDGER_ID_BYTES]


@dataclass(frozen=True)
class AuthorSet:
    """Deduplicated public keys in ascending byte order (canonical form)."""

    keys: tuple[PublicKey, ...]

    def __post_init__(self) -> None:
        if not self.keys:
            raise ValueError("author set must be nonempty")
        if any(len(k) != identity.PUBLIC_KEY_BYTES for k in self.keys):
            raise ValueError("author keys must be 32 bytes")
        if list(self.keys) != sorted(set(self.keys)):
            raise ValueError("author keys must be sorted and unique")

    @classmethod
    def from_keys(cls, keys) -> "AuthorSet":
        return cls(tuple(sorted(set(keys))))

    def __contains__(self, key: PublicKey) -> bool:
        return key in self.keys

    def __len__(self) -> int:
        return len(self.keys)


@dataclass(frozen=True)
class CreationRequest:
    ledger_id: LedgerId
    authors: AuthorSet
    initial_digest: Digest
    initial_size: int
    creator_key: PublicKey
    creator_sig: Signature = b""


@dataclass(frozen=True)
class ExtensionRequest:
    ledger_id: LedgerId
    prev_digest: Digest
    prev_size: int
    new_digest: Digest
    new_size: int
    proof: ConsistencyProof
    author_keys: tuple[PublicKey, ...]
    author_sigs: tuple[Signature, ...] = ()


Request = Union[CreationRequest, ExtensionRequest]


@dataclass(frozen=True)
class Receipt:
    kind: str
    request: Request
    timestamp_ms: int
    anchor_ref: int | None  # anchor txn index; None while anchoring is pending
    notary_seq: int
    notary_sig: Signature = b""

    @property
    def ledger_id(self) -> LedgerId:
        return self.request.ledger_id

    def new_state(self) -> tuple[Digest, int]:
        """The (digest, size) this receipt makes official."""
        if self.kind == KIND_CREATION:
            return self.request.initial_digest, self.request.initial_size
        return self.request.new_digest, self.request.new_size

    def prev_state(self) -> tuple[Digest, int] | None:
        """The (digest, size) this receipt extends, None for creation."""
        if self.kind == KIND_CREATION:
            return None
        return self.request.prev_digest, self.request.prev_size


def write_consistency_proof(w: Writer, proof: ConsistencyProof) -> None:
    w.u64(proof.old_size)
    w.u64(proof.new_size)
    w.u32(len(proof.path))
    for digest in proof.path:
        w.fixed(digest, DIGEST_BYTES)


def read_consistency_proof(r: Reader) -> ConsistencyProof:
    old_size = r.u64()
    new_size = r.u64()
    path = tuple(r.fixed(DIGEST_BYTES) for _ in range(r.u32()))
    if old_size > new_size:
        raise MalformedError(MALFORMED, "proof old_size exceeds new_size")
    if (old_size == new_size or old_size == 0) and path:
        raise MalformedError(MALFORMED, "proof path must be empty")
    return ConsistencyProof(old_size, new_size, path)


def write_inclusion_proof(w: Writer, proof: InclusionProof) -> None:
    w.u64(proof.leaf_index)
    w.u64(proof.tree_size)
    w.u32(len(proof.path))
    for digest in proof.path:
        w.fixed(digest, DIGEST_BYTES)


def read_inclusion_proof(r: Reader) -> InclusionProof:
    leaf_index = r.u64()
    tree_size = r.u64()
    path = tuple(r.fixed(DIGEST_BYTES) for _ in range(r.u32()))
    if leaf_index >= tree_size:
        raise MalformedError(MALFORMED, "inclusion index beyond tree size")
    return InclusionProof(leaf_index, tree_size, path)


def _write_creation(w: Writer, req: CreationRequest, with_sigs: bool) -> None:
    w.u8(TAG_CREATION)
    w.fixed(req.ledger_id, LEDGER_ID_BYTES)
    w.u32(len(req.authors.keys))
    for key in req.authors.keys:
        w.fixed(key, identity.PUBLIC_KEY_BYTES)
    w.fixed(req.initial_digest, DIGEST_BYTES)
    w.u64(req.initial_size)
    w.fixed(req.creator_key, identity.PUBLIC_KEY_BYTES)
    if with_sigs:
        w.fixed(req.creator_sig, identity.SIGNATURE_BYTES)


def _read_creation(r: Reader) -> CreationRequest:
    ledger_id = r.fixed(LEDGER_ID_BYTES)
    keys = tuple(r.fixed(identity.PUBLIC_KEY_BYTES) for _ in range(r.u32()))
    try:
        authors = AuthorSet(keys)
    except ValueError as exc:
        raise MalformedError(MALFORMED, str(exc)) from exc
    initial_digest = r.fixed(DIGEST_BYTES)
    initial_size = r.u64()
    creator_key = r.fixed(identity.PUBLIC_KEY_BYTES)
    creator_sig = r.fixed(identity.SIGNATURE_BYTES)
    if initial_size < 1:
        raise MalformedError(MALFORMED, "initial size must be >= 1")
    if creator_key not in authors:
        raise MalformedError(MALFORMED, "creator key not in author set")
    return CreationRequest(
        ledger_id, authors, initial_digest, initial_size, creator_key, creator_sig
    )


def _write_extension(w: Writer, req: ExtensionRequest, with_sigs: bool) -> None:
    w.u8(TAG_EXTENSION)
    w.fixed(req.ledger_id, LEDGER_ID_BYTES)
    w.fixed(req.prev_digest, DIGEST_BYTES)
    w.u64(req.prev_size)
    w.fixed(req.new_digest, DIGEST_BYTES)
    w.u64(req.new_size)
    write_consistency_proof(w, req.proof)
    w.u32(len(req.author_keys))
    for key in req.author_keys:
        w.fixed(key, identity.PUBLIC_KEY_BYTES)
    if with_sigs:
        w.u32(len(req.author_sigs))
        for sig in req.author_sigs:
            w.fixed(sig, identity.SIGNATURE_BYTES)


def _read_extension(r: Reader) -> ExtensionRequest:
    ledger_id = r.fixed(LEDGER_ID_BYTES)
    prev_digest = r.fixed(DIGEST_BYTES)
    prev_size = r.u64()
    new_digest = r.fixed(DIGEST_BYTES)
    new_size = r.u64()
    proof = read_consistency_proof(r)
    author_keys = tuple(r.fixed(identity.PUBLIC_KEY_BYTES) for _ in range(r.u32()))
    author_sigs = tuple(r.fixed(identity.SIGNATURE_BYTES) for _ in range(r.u32()))
    req = ExtensionRequest(
        ledger_id, prev_digest, prev_size, new_digest, new_size, proof,
        author_keys, author_sigs,
    )
    _check_extension_invariants(req)
    return req


def _check_extension_invariants(req: ExtensionRequest) -> None:
    if req.new_size <= req.prev_size:
        raise MalformedError(MALFORMED, "extension must grow the ledger")
    if req.proof.old_size != req.prev_size or req.proof.new_size != req.new_size:
        raise MalformedError(MALFORMED, "proof sizes do not match request")
    if not req.author_keys or len(req.author_keys) != len(req.author_sigs):
        raise MalformedError(MALFORMED, "signer keys and signatures must pair up")
    if len(set(req.author_keys)) != len(req.author_keys):
        raise MalformedError(MALFORMED, "duplicate signer keys")


def _write_receipt(w: Writer, receipt: Receipt, with_sig: bool) -> None:
    w.u8(TAG_RECEIPT)
    if receipt.kind == KIND_CREATION:
        w.u8(0)
        _write_creation(w, receipt.request, with_sigs=True)
    elif receipt.kind == KIND_EXTENSION:
        w.u8(1)
        _write_extension(w, receipt.request, with_sigs=True)
    else:
        raise ValueError(f"unknown receipt kind {receipt.kind!r}")
    w.u64(receipt.timestamp_ms)
    w.u64(_ANCHOR_PENDING if receipt.anchor_ref is None else receipt.anchor_ref)
    w.u64(receipt.notary_seq)
    if with_sig:
        w.fixed(receipt.notary_sig, identity.SIGNATURE_BYTES)


def _read_receipt(r: Reader) -> Receipt:
    kind_byte = r.u8()
    if kind_byte == 0:
        if r.u8() != TAG_CREATION:
            raise MalformedError(MALFORMED, "receipt kind does not match request tag")
        request: Request = _read_creation(r)
        kind = KIND_CREATION
    elif kind_byte == 1:
        if r.u8() != TAG_EXTENSION:
            raise MalformedError(MALFORMED, "receipt kind does not match request tag")
        request = _read_extension(r)
        kind = KIND_EXTENSION
    else:
        raise MalformedError(MALFORMED, f"unknown receipt kind byte {kind_byte}")
    timestamp_ms = r.u64()
    anchor_raw = r.u64()
    notary_seq = r.u64()
    notary_sig = r.fixed(identity.SIGNATURE_BYTES)
    return Receipt(
        kind=kind,
        request=request,
        timestamp_ms=timestamp_ms,
        anchor_ref=None if anchor_raw == _ANCHOR_PENDING else anchor_raw,
        notary_seq=notary_seq,
        notary_sig=notary_sig,
    )


def encode(message) -> bytes:
    w = Writer()
    if isinstance(message, CreationRequest):
        _write_creation(w, message, with_sigs=True)
    elif isinstance(message, ExtensionRequest):
        _write_extension(w, message, with_sigs=True)
    elif isinstance(message, Receipt):
        _write_receipt(w, message, with_sig=True)
    else:
        raise TypeError(f"cannot encode {type(message).__name__}")
    return w.getvalue()


def decode(data: bytes):
    r = Reader(data)
    message = read_message(r)
    r.expect_end()
    return message


def read_message(r: Reader):
    """Decode one message from the reader, leaving any following bytes."""
    tag = r.u8()
    if tag == TAG_CREATION:
        return _read_creation(r)
    if tag == TAG_EXTENSION:
        return _read_extension(r)
    if tag == TAG_RECEIPT:
        return _read_receipt(r)
    raise MalformedError(MALFORMED, f"unknown message tag {tag:#x}")


def signing_bytes(message) -> bytes:
    """Encoding with signature fields omitted: the input digital signatures cover."""
    w = Writer()
    if isinstance(message, CreationRequest):
        _write_creation(w, message, with_sigs=False)
    elif isinstance(message, ExtensionRequest):
        _write_extension(w, message, with_sigs=False)
    elif isinstance(message, Receipt):
        _write_receipt(w, message, with_sig=False)
    else:
        raise TypeError(f"cannot sign {type(message).__name__}")
    return w.getvalue()


def sign_creation(req: CreationRequest, secret: bytes) -> CreationRequest:
    return replace(req, creator_sig=identity.sign(secret, signing_bytes(req)))


def sign_extension(req: ExtensionRequest, secrets) -> ExtensionRequest:
    """Attach one signature per signer key, in key order."""
    message = signing_bytes(req)
    return replace(req, author_sigs=tuple(identity.sign(s, message) for s in secrets))


def request_signers(request: Request) -> tuple[PublicKey, ...]:
    if isinstance(request, CreationRequest):
        return (request.creator_key,)
    return request.author_keys


def _verify_request_sigs(request: Request) -> str | None:
    message = signing_bytes(request)
    if isinstance(request, CreationRequest):
        pairs = [(request.creator_key, request.creator_sig)]
    else:
        pairs = list(zip(request.author_keys, request.author_sigs))
    if not pairs or any(not sig for _, sig in pairs):
        return MALFORMED
    for key, sig in pairs:
        try:
            if not identity.verify(key, message, sig):
                return BAD_AUTHOR_SIG
        except MalformedInputError:
            return MALFORMED
    return None


def verify_receipt(
    receipt: Receipt, notary_key: PublicKey, authors: AuthorSet
) -> str | None:
    """None when the receipt is valid, otherwise a rejection reason code.

    Valid means: the notary signature checks out, every request signature
    checks out, every request signer belongs to ``authors``, and the
    request's internal size and proof invariants hold.
    """
    try:
        reason = _structural_check(receipt)
        if reason:
            return reason
        if not identity.verify(notary_key, signing_bytes(receipt), receipt.notary_sig):
            return BAD_NOTARY_SIG
    except MalformedInputError:
        return MALFORMED
    for key in request_signers(receipt.request):
        if key not in authors:
            return AUTHOR_NOT_IN_SET
    return _verify_request_sigs(receipt.request)


def _structural_check(receipt: Receipt) -> str | None:
    request = receipt.request
    if receipt.kind == KIND_CREATION:
        if not isinstance(request, CreationRequest) or request.initial_size < 1:
            return MALFORMED
        if request.creator_key not in request.authors:
            return MALFORMED
    elif receipt.kind == KIND_EXTENSION:
        if not isinstance(request, ExtensionRequest):
            return MALFORMED
        try:
            _check_extension_invariants(request)
        except MalformedError:
            return MALFORMED
    else:
        return MALFORMED
    if not receipt.notary_sig:
        return BAD_NOTARY_SIG
    return None


def notary_signed(receipt: Receipt, notary_key: PublicKey) -> bool:
    """Signature-only check, used where the author set is not yet known."""
    if not receipt.notary_sig or len(receipt.notary_sig) != identity.SIGNATURE_BYTES:
        return False
    try:
        return identity.verify(notary_key, signing_bytes(receipt), receipt.notary_sig)
    except (MalformedInputError, MalformedError, ValueError):
        return False


def to_json_dict(message) -> dict:
    """Debug rendering: digests, keys, and signatures as lowercase hex."""
    if isinstance(message, CreationRequest):
        return {
            "type": "creation_request",
            "ledger_id": message.ledger_id.hex(),
            "authors": [k.hex() for k in message.authors.keys],
            "initial_digest": message.initial_digest.hex(),
            "initial_size": message.initial_size,
            "creator_key": message.creator_key.hex(),
            "creator_sig": message.creator_sig.hex(),
        }
    if isinstance(message, ExtensionRequest):
        return {
            "type": "extension_request",
            "ledger_id": message.ledger_id.hex(),
            "prev_digest": message.prev_digest.hex(),
            "prev_size": message.prev_size,
            "new_digest": message.new_digest.hex(),
            "new_size": message.new_size,
            "proof": {
                "old_size": message.proof.old_size,
                "new_size": message.proof.new_size,
                "path": [d.hex() for d in message.proof.path],
            },
            "author_keys": [k.hex() for k in message.author_keys],
            "author_sigs": [s.hex() for s in message.author_sigs],
        }
    if isinstance(message, Receipt):
        return {
            "type": "receipt",
            "kind": message.kind,
            "request": to_json_dict(message.request),
            "timestamp_ms": message.timestamp_ms,
            "anchor_ref": message.anchor_ref,
            "notary_seq": message.notary_seq,
            "notary_sig": message.notary_sig.hex(),
        }
    raise TypeError(f"cannot render {type(message).__name__}")
