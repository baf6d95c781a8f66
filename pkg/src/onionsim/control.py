"""C&C messaging over the overlay and the rental-token scheme.

Every message travels as fixed-size cells whose payload is opaque to relays,
so a relay can only ever observe (cell size, next hop).

Rental token wire format (all integers big-endian), fields in order, each
prefixed by its byte length as u32:

    renter_key_digest   20 bytes, SHA-1 of the renter public key
    expiry              u64 seconds since epoch
    whitelist           u32 count, then per name: u32 length + UTF-8, names sorted
    signature           master signature over b"onionsim-token-v1" + the three
                        encoded fields above
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import random
import struct
from collections import deque
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import NodeNotFound, ParameterError
from .overlay import NodeId

CELL_SIZE = 512
_NONCE = 12
_TAG = 16  # Poly1305
FRAGMENT_SIZE = CELL_SIZE - _NONCE - _TAG
_NO_GROUP = 0xFFFFFFFF
_TOKEN_DOMAIN = b"onionsim-token-v1"
_COMMAND_DOMAIN = b"onionsim-command-v1"


class MessageKind(enum.IntEnum):
    BROADCAST = 0
    DIRECTED = 1
    GROUP = 2
    MAINTENANCE = 3


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    body: bytes
    origin: NodeId
    targets: frozenset = frozenset()
    group: int | None = None

    def encode(self) -> bytes:
        targets = sorted(self.targets)
        group = _NO_GROUP if self.group is None else self.group
        head = struct.pack(">B10sIH", self.kind, NodeId(self.origin).to_bytes(10, "big"),
                           group, len(targets))
        tail = b"".join(NodeId(t).to_bytes(10, "big") for t in targets)
        return head + tail + struct.pack(">I", len(self.body)) + self.body

    @classmethod
    def decode(cls, raw: bytes) -> "Message":
        kind, origin, group, count = struct.unpack_from(">B10sIH", raw)
        pos = struct.calcsize(">B10sIH")
        targets = []
        for _ in range(count):
            targets.append(NodeId(int.from_bytes(raw[pos:pos + 10], "big")))
            pos += 10
        (size,) = struct.unpack_from(">I", raw, pos)
        pos += 4
        return cls(MessageKind(kind), raw[pos:pos + size], NodeId(int.from_bytes(origin, "big")),
                   frozenset(targets), None if group == _NO_GROUP else group)


@dataclass(frozen=True)
class Cell:
    payload: bytes
    hop_hint: NodeId

    def __post_init__(self):
        if len(self.payload) != CELL_SIZE:
            raise ParameterError(f"cell payload must be exactly {CELL_SIZE} bytes")


@dataclass(frozen=True)
class ObservableRecord:
    size: int
    hop_hint: NodeId

    def to_bytes(self) -> bytes:
        return struct.pack(">H", self.size) + NodeId(self.hop_hint).to_bytes(10, "big")


def relay_view(cell: Cell) -> ObservableRecord:
    """Everything a relaying node can learn from a cell."""
    return ObservableRecord(CELL_SIZE, cell.hop_hint)


def _aead(key: bytes) -> ChaCha20Poly1305:
    # keys of any length are accepted; the cipher wants exactly 32 bytes
    return ChaCha20Poly1305(key if len(key) == 32 else hashlib.sha256(key).digest())


def _seal(key: bytes, plain: bytes, rng: random.Random) -> bytes:
    nonce = rng.randbytes(_NONCE)
    return nonce + _aead(key).encrypt(nonce, plain, None)


def _open(key: bytes, sealed: bytes) -> bytes | None:
    try:
        return _aead(key).decrypt(sealed[:_NONCE], sealed[_NONCE:], None)
    except InvalidTag:
        return None


def wrap_message(msg: Message, next_hop, link_key: bytes, rng: random.Random) -> list[Cell]:
    """Fragment, pad and encrypt a message into whole cells for one link."""
    raw = msg.encode()
    framed = struct.pack(">I", len(raw)) + raw
    count = max(1, -(-len(framed) // FRAGMENT_SIZE))
    framed = framed.ljust(count * FRAGMENT_SIZE, b"\0")
    hop = NodeId(next_hop)
    return [Cell(_seal(link_key, framed[i * FRAGMENT_SIZE:(i + 1) * FRAGMENT_SIZE], rng), hop)
            for i in range(count)]


def unwrap_cells(cells: list[Cell], link_key: bytes) -> Message:
    parts = []
    for cell in cells:
        plain = _open(link_key, cell.payload)
        if plain is None:
            raise ParameterError("cell does not authenticate under this link key")
        parts.append(plain)
    framed = b"".join(parts)
    (size,) = struct.unpack_from(">I", framed)
    return Message.decode(framed[4:4 + size])


def seal_group_body(body: bytes, group_key: bytes, rng: random.Random) -> bytes:
    """Encrypt a group message body; only holders of ``group_key`` can read it."""
    return _seal(group_key, body, rng)


def open_group_body(sealed: bytes, group_key: bytes) -> bytes | None:
    return _open(group_key, sealed)


@dataclass
class DeliveryReport:
    reached: set = field(default_factory=set)
    hops: dict = field(default_factory=dict)
    steps: int = 0


def propagate(graph, msg: Message, start, ttl: int, clones_relay: bool = False,
              host_relay: bool = False) -> DeliveryReport:
    """Synchronous flood from ``start`` for at most ``ttl`` rounds.

    Each informed node forwards once to all its peers.  Attacker clones take
    delivery but do not forward unless ``clones_relay`` is set.  With
    ``host_relay`` a physical host that receives the message on one virtual
    hands it to its other virtuals at no hop cost; the sender's own host does
    not, so probes between siblings still have to cross the overlay.
    """
    if start not in graph.nodes:
        raise NodeNotFound(f"no alive node {start!r}")
    if ttl < 1:
        raise ParameterError("ttl must be at least 1")
    members = {}
    if host_relay:
        for v, g in graph.groups.items():
            members.setdefault(g, []).append(v)
    own_group = graph.groups.get(start)
    hops = {start: 0}
    frontier = deque([start])
    while frontier:
        u = frontier.popleft()
        if hops[u] >= ttl:
            continue
        if u != start and u in graph.clones and not clones_relay:
            continue
        for v in sorted(graph.nodes[u].peers):
            if v in hops:
                continue
            hops[v] = hops[u] + 1
            frontier.append(v)
            g = graph.groups.get(v)
            if host_relay and g is not None and g != own_group and v not in graph.clones:
                for w in sorted(members[g]):
                    if w not in hops:
                        hops[w] = hops[v]
                        frontier.append(w)
    return DeliveryReport(set(hops), hops, max(hops.values()))


# -- signatures ---------------------------------------------------------------

@dataclass(frozen=True)
class KeyPair:
    private: bytes
    public: bytes


class SignatureScheme:
    """Deterministic signing behind one small interface."""

    name = "abstract"

    def generate(self, seed: bytes) -> KeyPair:
        raise NotImplementedError

    def sign(self, private: bytes, data: bytes) -> bytes:
        raise NotImplementedError

    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool:
        raise NotImplementedError


class Ed25519Scheme(SignatureScheme):
    name = "ed25519"

    def generate(self, seed: bytes) -> KeyPair:
        private = hashlib.sha256(b"ed25519-seed" + seed).digest()
        public = Ed25519PrivateKey.from_private_bytes(private).public_key().public_bytes(
            Encoding.Raw, PublicFormat.Raw)
        return KeyPair(private, public)

    def sign(self, private: bytes, data: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(private).sign(data)

    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public).verify(signature, data)
        except (InvalidSignature, ValueError):
            return False
        return True


class KeyedHashScheme(SignatureScheme):
    """HMAC test double: the "public" key is the secret itself.  Tests only."""

    name = "keyed-hash"

    def generate(self, seed: bytes) -> KeyPair:
        secret = hashlib.sha256(b"keyed-hash-seed" + seed).digest()
        return KeyPair(secret, secret)

    def sign(self, private: bytes, data: bytes) -> bytes:
        return hmac.new(private, data, hashlib.sha256).digest()

    def verify(self, public: bytes, data: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(hmac.new(public, data, hashlib.sha256).digest(), signature)


def key_digest(public: bytes) -> bytes:
    return hashlib.sha1(public).digest()


# -- rental tokens ------------------------------------------------------------

class RejectReason(str, enum.Enum):
    EXPIRED = "expired"
    NOT_WHITELISTED = "not-whitelisted"
    BAD_TOKEN_SIGNATURE = "bad-token-signature"
    BAD_COMMAND_SIGNATURE = "bad-command-signature"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: RejectReason | None = None


def _field(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def _encode_whitelist(names) -> bytes:
    names = sorted(names)
    return struct.pack(">I", len(names)) + b"".join(_field(n.encode("utf-8")) for n in names)


@dataclass(frozen=True)
class RentalToken:
    renter_key_digest: bytes
    expiry: int
    whitelist: frozenset
    signature: bytes

    def signed_part(self) -> bytes:
        return (_field(self.renter_key_digest)
                + _field(struct.pack(">Q", self.expiry))
                + _field(_encode_whitelist(self.whitelist)))

    def to_bytes(self) -> bytes:
        return self.signed_part() + _field(self.signature)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "RentalToken":
        """Strict decoder: anything that does not re-encode identically is rejected."""
        fields = []
        pos = 0
        try:
            for _ in range(4):
                (size,) = struct.unpack_from(">I", raw, pos)
                pos += 4
                if pos + size > len(raw):
                    raise ParameterError("truncated token field")
                fields.append(raw[pos:pos + size])
                pos += size
            digest, expiry_raw, wl_raw, signature = fields
            if pos != len(raw) or len(digest) != 20 or len(expiry_raw) != 8:
                raise ParameterError("malformed token")
            (expiry,) = struct.unpack(">Q", expiry_raw)
            (count,) = struct.unpack_from(">I", wl_raw)
            names, wpos = [], 4
            for _ in range(count):
                (size,) = struct.unpack_from(">I", wl_raw, wpos)
                wpos += 4
                names.append(wl_raw[wpos:wpos + size].decode("utf-8"))
                wpos += size
            token = cls(digest, expiry, frozenset(names), signature)
        except (struct.error, UnicodeDecodeError) as exc:
            raise ParameterError(f"malformed token: {exc}") from None
        if token.to_bytes() != raw:
            raise ParameterError("token encoding is not canonical")
        return token


@dataclass(frozen=True)
class RentalCommand:
    name: str
    body: bytes
    renter_public_key: bytes
    signature: bytes

    def signed_part(self) -> bytes:
        return _COMMAND_DOMAIN + _field(self.name.encode("utf-8")) + _field(self.body)


def sign_command(scheme: SignatureScheme, renter: KeyPair, name: str, body: bytes) -> RentalCommand:
    unsigned = RentalCommand(name, body, renter.public, b"")
    return RentalCommand(name, body, renter.public, scheme.sign(renter.private, unsigned.signed_part()))


def issue_token(master_signing_key: bytes, renter_key_digest: bytes, expiry: int, whitelist,
                now: int, scheme: SignatureScheme | None = None) -> RentalToken:
    scheme = scheme or Ed25519Scheme()
    if expiry <= now:
        raise ParameterError(f"token expiry {expiry} is not after issuance time {now}")
    if len(renter_key_digest) != 20:
        raise ParameterError("renter key digest must be 20 bytes")
    unsigned = RentalToken(renter_key_digest, int(expiry), frozenset(whitelist), b"")
    signature = scheme.sign(master_signing_key, _TOKEN_DOMAIN + unsigned.signed_part())
    return RentalToken(unsigned.renter_key_digest, unsigned.expiry, unsigned.whitelist, signature)


def verify_token(token: RentalToken, master_public_key: bytes,
                 scheme: SignatureScheme | None = None) -> bool:
    scheme = scheme or Ed25519Scheme()
    return scheme.verify(master_public_key, _TOKEN_DOMAIN + token.signed_part(), token.signature)


def verify_command(token: RentalToken, command: RentalCommand, now: int, master_public_key: bytes,
                   scheme: SignatureScheme | None = None) -> Verdict:
    """Accept iff the token, its expiry, the whitelist and the command signature all check out.

    Checks run in that order and the first failure names the reason.
    """
    scheme = scheme or Ed25519Scheme()
    if not verify_token(token, master_public_key, scheme):
        return Verdict(False, RejectReason.BAD_TOKEN_SIGNATURE)
    if now >= token.expiry:
        return Verdict(False, RejectReason.EXPIRED)
    if command.name not in token.whitelist:
        return Verdict(False, RejectReason.NOT_WHITELISTED)
    if key_digest(command.renter_public_key) != token.renter_key_digest or not scheme.verify(
            command.renter_public_key, command.signed_part(), command.signature):
        return Verdict(False, RejectReason.BAD_COMMAND_SIGNATURE)
    return Verdict(True)
