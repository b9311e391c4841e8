import random
import sys

import pytest

from wksp.membership import (
    Identity,
    MembershipModel,
    bootstrap_initiator,
    bootstrap_member,
    create_invitation,
    create_workspace,
)
from wksp.naming import Name
from wksp.security import generate_keypair, self_sign

WS = Name.parse("yourworkspaces.app/MeetRoom")
DOMAIN = Name.parse("yourworkspaces.app")
YEAR = 365 * 24 * 3600 * 1000


def seeded_bytes(seed):
    rng = random.Random(seed)
    return lambda n: rng.randbytes(n)


def keypair(label: str):
    return generate_keypair(random.Random(label).randbytes(32))


def personal_cert(user: str, now: int = 0):
    kp = keypair(user)
    return kp, self_sign(kp, Name([user]), now, now + YEAR)


def make_root():
    kp = keypair("root")
    return Identity(kp, self_sign(kp, DOMAIN, 0, 10 * YEAR))


class World:
    """A workspace with its root, initiator and helpers to add members."""

    def __init__(self, model=MembershipModel.INITIATOR_ONLY, initiator="alice@x.org"):
        self.root = make_root()
        self.rand = seeded_bytes("world")
        self.instance = create_workspace(WS, self.root, model, 0, self.rand)
        self.members = {}
        kp, _ = personal_cert(initiator)
        self.members[initiator] = bootstrap_initiator(self.instance, initiator, kp, 0)

    def invite(self, inviter, invitee, now=0, lifetime=YEAR):
        kp, cert = personal_cert(invitee)
        inv = create_invitation(self.members[inviter], cert, lifetime, now, self.rand)
        self.members[invitee] = bootstrap_member(invitee, kp, inv, self.root.cert, now)
        return inv


@pytest.fixture
def world():
    return World()


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.RESULTS:
        terminalreporter.write_line(line)
