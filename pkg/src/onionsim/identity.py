"""Hidden-service identity math: onion names, descriptor IDs, HSDir ring placement
and the per-period address rotation shared between a node and its controller.

Byte layouts are fixed here rather than copied from the Tor wire format:

* ``descriptor_id``: secret part is SHA-1(period u32 BE | cookie (16 bytes, or
  nothing) | replica u8); the descriptor ID is SHA-1(fingerprint | secret part).
* ``derive_period_key``: fingerprint is the first 10 bytes of
  SHA-1(master key digest | SHA-256(shared key | period u64 BE)).
"""

from __future__ import annotations

import base64
import bisect
import hashlib
import random
import struct
from dataclasses import dataclass

from .errors import ParameterError

SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class ServiceIdentifier:
    fingerprint: bytes

    def __post_init__(self):
        if len(self.fingerprint) != 10:
            raise ParameterError("fingerprint must be 10 bytes")

    @property
    def onion_name(self) -> str:
        return base64.b32encode(self.fingerprint).decode("ascii").lower()

    @property
    def value(self) -> int:
        return int.from_bytes(self.fingerprint, "big")

    @classmethod
    def from_public_key(cls, public_key: bytes) -> "ServiceIdentifier":
        return cls(hashlib.sha1(public_key).digest()[:10])

    @classmethod
    def from_onion(cls, name: str) -> "ServiceIdentifier":
        if len(name) != 16 or name != name.lower():
            raise ParameterError(f"not a lowercase 16 character onion name: {name!r}")
        try:
            return cls(base64.b32decode(name.upper()))
        except ValueError as exc:
            raise ParameterError(f"bad onion name {name!r}: {exc}") from None


@dataclass(frozen=True)
class DescriptorId:
    value: int
    replica: int = 0
    period: int = 0

    def __post_init__(self):
        if self.replica not in (0, 1):
            raise ParameterError("replica must be 0 or 1")
        if not 0 <= self.value < 1 << 160:
            raise ParameterError("descriptor id must fit in 160 bits")

    @property
    def digest(self) -> bytes:
        return self.value.to_bytes(20, "big")


@dataclass(frozen=True)
class HsdirRing:
    """Relays sorted by 160-bit fingerprint, read as a circle."""

    relays: tuple

    def __post_init__(self):
        fps = [fp for fp, _ in self.relays]
        if len(fps) < 3:
            raise ParameterError("an HSDir ring needs at least 3 relays")
        if any(a >= b for a, b in zip(fps, fps[1:])):
            raise ParameterError("relay fingerprints must be strictly ascending")

    @classmethod
    def from_relays(cls, relays) -> "HsdirRing":
        return cls(tuple(sorted((int(fp), label) for fp, label in relays)))

    @property
    def fingerprints(self) -> list[int]:
        return [fp for fp, _ in self.relays]


@dataclass(frozen=True)
class SharedBotKey:
    key: bytes
    master_public_key_digest: bytes

    def __post_init__(self):
        if len(self.key) != 32:
            raise ParameterError("shared key must be 32 bytes")
        if len(self.master_public_key_digest) != 20:
            raise ParameterError("master key digest must be 20 bytes")

    @classmethod
    def generate(cls, rng: random.Random, master_public_key_digest: bytes) -> "SharedBotKey":
        return cls(rng.randbytes(32), master_public_key_digest)


def time_period(current_time: int, permanent_id_byte: int) -> int:
    if current_time < 0:
        raise ParameterError("current_time must be non-negative")
    if not 0 <= permanent_id_byte <= 255:
        raise ParameterError("permanent_id_byte must be in 0..255")
    return (current_time + (permanent_id_byte * SECONDS_PER_DAY) // 256) // SECONDS_PER_DAY


def secret_id_part(period: int, cookie: bytes | None, replica: int) -> bytes:
    if not 0 <= period < 1 << 32:
        raise ParameterError("period must fit in an unsigned 32-bit integer")
    if cookie is not None and len(cookie) != 16:
        raise ParameterError("descriptor cookie must be 16 bytes")
    return hashlib.sha1(struct.pack(">I", period) + (cookie or b"") + bytes([replica])).digest()


def descriptor_id(identifier: ServiceIdentifier, period: int, cookie: bytes | None = None,
                  replica: int = 0) -> DescriptorId:
    if replica not in (0, 1):
        raise ParameterError("replica must be 0 or 1")
    secret = secret_id_part(period, cookie, replica)
    digest = hashlib.sha1(identifier.fingerprint + secret).digest()
    return DescriptorId(int.from_bytes(digest, "big"), replica, period)


def responsible_hsdirs(ring: HsdirRing, desc: DescriptorId) -> list:
    """Labels of the three relays at or after the descriptor position."""
    fps = ring.fingerprints
    k = bisect.bisect_left(fps, desc.value) % len(fps)
    return [ring.relays[(k + j) % len(fps)][1] for j in range(3)]


def derive_period_key(shared: SharedBotKey, period: int) -> ServiceIdentifier:
    if not 0 <= period < 1 << 64:
        raise ParameterError("period must fit in an unsigned 64-bit integer")
    inner = hashlib.sha256(shared.key + period.to_bytes(8, "big")).digest()
    return ServiceIdentifier(hashlib.sha1(shared.master_public_key_digest + inner).digest()[:10])
