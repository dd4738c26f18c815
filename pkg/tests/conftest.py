import sys
from pathlib import Path

import pytest

# make the oracle helper importable from test modules
sys.path.insert(0, str(Path(__file__).parent))

from hybridledger import identity
from hybridledger.anchor import AnchorLog
from hybridledger.node import Node
from hybridledger.notary import Notary, NotaryConfig


class ManualClock:
    def __init__(self, start=0):
        self.now = start

    def tick(self, ms=1):
        self.now += ms
        return self.now

    def __call__(self):
        return self.now


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def notary_keypair():
    return identity.generate_keypair(b"notary-seed".ljust(32, b"\x00"))


@pytest.fixture
def anchor_log():
    return AnchorLog()


@pytest.fixture
def notary(notary_keypair, anchor_log, clock):
    return Notary(NotaryConfig(keypair=notary_keypair), anchor_log, clock)


@pytest.fixture
def author_keypairs():
    return [identity.generate_keypair(bytes([0x41 + i]) * 32) for i in range(3)]


@pytest.fixture
def make_node(notary, notary_keypair, author_keypairs):
    registry = {identity.actor_id(kp.public): kp.public for kp in author_keypairs}

    def factory(index=0, with_notary=True):
        return Node(
            author_keypairs[index],
            notary_keypair.public,
            notary=notary if with_notary else None,
            registry=registry,
            peers=tuple(sorted(registry)),
        )

    return factory
