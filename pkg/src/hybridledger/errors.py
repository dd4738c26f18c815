"""Domain errors. Every error carries a stable machine-readable code."""

from __future__ import annotations


class HybridLedgerError(Exception):
    """Base class; ``code`` is the stable identifier tests and callers match on."""

    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(message or code)
        self.code = code


class MalformedError(HybridLedgerError):
    """Undecodable bytes or files (codes: MALFORMED, MALFORMED_FILE)."""


class MalformedInputError(HybridLedgerError):
    """Signature-verification inputs that cannot even be decoded."""

    def __init__(self, message: str = "") -> None:
        super().__init__("MALFORMED_INPUT", message)


class ProofError(HybridLedgerError):
    """Out-of-range proof requests (INDEX_OUT_OF_RANGE, SIZE_OUT_OF_RANGE)."""


class StoreError(HybridLedgerError):
    """Ledger replica violations (EMPTY_APPEND, RECEIPT_MISMATCH, ...)."""


class NotaryError(HybridLedgerError):
    """Request rejections issued by the notary (ID_IN_USE, STALE_DIGEST, ...)."""


class NodeError(HybridLedgerError):
    """Node-local preconditions (SELF_NOT_AUTHOR, NOT_PARTICIPANT, ...)."""
