"""Seeded generators shared by property tests and the acceptance run."""

import random

from hypothesis import strategies as st

from wksp.naming import Name
from wksp.tlv import ContentType, DataPacket, InterestPacket, SigInfo, encode_data, encode_interest

components = st.binary(min_size=1, max_size=12)
names = st.lists(components, min_size=1, max_size=6).map(Name)
uints = st.integers(min_value=0, max_value=2**64 - 1)


@st.composite
def sig_infos(draw):
    a, b = sorted(draw(st.lists(uints, min_size=2, max_size=2)))
    return SigInfo(draw(names), a, b)


data_packets = st.builds(
    DataPacket,
    names,
    st.binary(max_size=64),
    st.sampled_from(list(ContentType)),
    sig_infos(),
    st.binary(max_size=64),
)
interests = st.builds(InterestPacket, names, st.booleans(), st.none() | st.binary(max_size=64))


def _bytes(rng: random.Random, lo: int, hi: int) -> bytes:
    return rng.randbytes(rng.randint(lo, hi))


def random_name(rng: random.Random) -> Name:
    return Name(_bytes(rng, 1, 10) for _ in range(rng.randint(1, 6)))


def _uint(rng: random.Random) -> int:
    # spread over every varnum width
    return rng.getrandbits(rng.choice((7, 16, 32, 64)))


def random_packet(rng: random.Random) -> DataPacket | InterestPacket:
    if rng.random() < 0.5:
        params = None if rng.random() < 0.3 else _bytes(rng, 0, 300)
        return InterestPacket(random_name(rng), rng.random() < 0.5, params)
    a, b = sorted((_uint(rng), _uint(rng)))
    return DataPacket(
        random_name(rng),
        _bytes(rng, 0, 300),
        rng.choice(list(ContentType)),
        SigInfo(random_name(rng), a, b),
        _bytes(rng, 0, 64),
    )


def encode_any(p) -> bytes:
    return encode_data(p) if isinstance(p, DataPacket) else encode_interest(p)


def mutate(rng: random.Random, seed: bytes) -> bytes:
    """Flip, insert, delete, truncate or splice bytes of a valid encoding."""
    buf = bytearray(seed)
    for _ in range(rng.randint(1, 4)):
        kind = rng.randrange(5)
        pos = rng.randrange(len(buf) + 1)
        if kind == 0 and buf:
            buf[min(pos, len(buf) - 1)] ^= 1 << rng.randrange(8)
        elif kind == 1:
            buf[pos:pos] = rng.randbytes(rng.randint(1, 4))
        elif kind == 2:
            del buf[pos : pos + rng.randint(1, 8)]
        elif kind == 3:
            del buf[pos:]
        else:
            buf[pos : pos + 1] = bytes([rng.choice((0xFD, 0xFE, 0xFF, 0x00, 0x05, 0x06, 0x07))])
    return bytes(buf)
