"""Private per-group ledgers with notarized, publicly anchored histories.

Nodes in a permissioned network keep ordered block lists whose histories a
central notary makes tamper-evident: every creation or extension is checked
against a Merkle consistency proof, anchored to an append-only public log,
and acknowledged with a signed receipt that gossips through the network.
Blocks themselves never leave the authoring sub-group, single blocks can be
erased without breaking any proof, and external parties can audit the
anchored histories or verify exported block selections offline.
"""

__version__ = "0.1.0"
