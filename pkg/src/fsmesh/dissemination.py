"""Flooding with smart broadcast and implicit addressing.

Nodes advertise the ids of payloads they can forward, neighbours request
the ones they have not seen, and every fresh payload is forwarded and
trial-decrypted.  Nothing on the wire names a recipient.

Datagrams are ``type:u8 | body``.  Inventory and request bodies are
``count:u16 | id*count`` with 32-byte ids; a payload body is the raw
ciphertext wire format.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional

from . import ratchet

MESSAGE_ID_BYTES = 32
PAYLOAD_RETENTION_EPOCHS = 1  # payloads stay forwardable while in {s, s-1}
ID_RETENTION_EPOCHS = 2  # ids outlive their payload by this many epochs

TYPE_INVENTORY = 0x01
TYPE_REQUEST = 0x02
TYPE_PAYLOAD = 0x03
_COUNT = struct.Struct(">H")


class DatagramError(ValueError):
    pass


def message_id(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


@dataclass
class SeenCache:
    ids: dict = field(default_factory=dict)  # id -> insertion epoch
    payloads: dict = field(default_factory=dict)  # id -> payload bytes

    def __contains__(self, mid: bytes) -> bool:
        return mid in self.ids

    def __len__(self) -> int:
        return len(self.ids)

    def add(self, mid: bytes, payload: bytes, epoch: int) -> bool:
        if mid in self.ids:
            return False
        self.ids[mid] = epoch
        self.payloads[mid] = payload
        return True

    def forwardable(self) -> list[bytes]:
        return list(self.payloads)

    def expire(self, current_epoch: int) -> None:
        """Drop payloads outside the decryptable window, then stale ids."""
        payload_floor = current_epoch - PAYLOAD_RETENTION_EPOCHS
        id_floor = payload_floor - ID_RETENTION_EPOCHS
        for mid in [m for m in self.payloads if self.ids[m] < payload_floor]:
            del self.payloads[mid]
        for mid in [m for m, e in self.ids.items() if e < id_floor]:
            del self.ids[mid]
            self.payloads.pop(mid, None)


@dataclass(frozen=True)
class InventoryMsg:
    ids: tuple = ()

    def to_bytes(self) -> bytes:
        return _encode_ids(TYPE_INVENTORY, self.ids)


@dataclass(frozen=True)
class RequestMsg:
    ids: tuple = ()

    def to_bytes(self) -> bytes:
        return _encode_ids(TYPE_REQUEST, self.ids)


@dataclass(frozen=True)
class PayloadMsg:
    payload: bytes

    @property
    def message_id(self) -> bytes:
        return message_id(self.payload)

    def to_bytes(self) -> bytes:
        return bytes([TYPE_PAYLOAD]) + self.payload


def _encode_ids(kind: int, ids) -> bytes:
    if len(ids) > 0xFFFF:
        raise DatagramError("too many ids for one datagram")
    out = bytearray([kind])
    out += _COUNT.pack(len(ids))
    for mid in ids:
        if len(mid) != MESSAGE_ID_BYTES:
            raise DatagramError("message ids are 32 bytes")
        out += mid
    return bytes(out)


def id_list_size(count: int) -> int:
    return 1 + _COUNT.size + MESSAGE_ID_BYTES * count


def parse_datagram(data: bytes):
    if not data:
        raise DatagramError("empty datagram")
    kind = data[0]
    if kind == TYPE_PAYLOAD:
        return PayloadMsg(bytes(data[1:]))
    if kind not in (TYPE_INVENTORY, TYPE_REQUEST):
        raise DatagramError(f"unknown datagram type {kind:#x}")
    if len(data) < 3:
        raise DatagramError("truncated id list")
    (count,) = _COUNT.unpack_from(data, 1)
    if len(data) != id_list_size(count):
        raise DatagramError("id list length does not match its count")
    ids = tuple(bytes(data[3 + i * MESSAGE_ID_BYTES:3 + (i + 1) * MESSAGE_ID_BYTES]) for i in range(count))
    return InventoryMsg(ids) if kind == TYPE_INVENTORY else RequestMsg(ids)


def announce(cache: SeenCache) -> InventoryMsg:
    return InventoryMsg(tuple(cache.payloads))


def diff_request(inventory: InventoryMsg, cache: SeenCache) -> RequestMsg:
    return RequestMsg(tuple(mid for mid in inventory.ids if mid not in cache))


def answer_request(request: RequestMsg, cache: SeenCache) -> list[PayloadMsg]:
    return [PayloadMsg(cache.payloads[mid]) for mid in request.ids if mid in cache.payloads]


class RatchetCrypto:
    """Real-crypto backend: ratchet encryption and keyring trial decryption."""

    def __init__(self, keyring: ratchet.EpochKeyring, rng=None):
        self.keyring = keyring
        self.rng = rng

    def advance_to(self, epoch: int) -> None:
        self.keyring.advance_to(epoch)

    def encrypt(self, recipient_pk: ratchet.FsPublicKey, epoch: int, m: bytes) -> bytes:
        return ratchet.fs_encrypt(epoch, recipient_pk, m, self.rng).to_bytes()

    def try_decrypt(self, payload: bytes, epochs) -> Optional[bytes]:
        c = ratchet.FsCiphertext.from_bytes(payload)
        try:
            return self.keyring.decrypt(c, epochs)
        except ratchet.DecryptionError:
            return None


@dataclass(frozen=True)
class PayloadOutcome:
    message_id: bytes
    forward: bool
    plaintext: Optional[bytes] = None
    duplicate: bool = False
    malformed: bool = False

    @property
    def delivered(self) -> bool:
        return self.plaintext is not None


class MeshNode:
    """Protocol endpoint: seen cache, epoch keyring, and the payload path.

    ``now`` arguments are the node's local clock in seconds.
    """

    def __init__(self, crypto, rule: ratchet.EpochClockRule):
        self.crypto = crypto
        self.rule = rule
        self.cache = SeenCache()
        self.fresh: list[bytes] = []
        self.malformed = 0
        self.duplicates = 0

    def epochs(self, now: float):
        return ratchet.current_epochs(now, self.rule)

    def take_fresh(self) -> InventoryMsg:
        """Ids added since the last call, for event-driven announces."""
        ids, self.fresh = tuple(self.fresh), []
        return InventoryMsg(ids)

    def send(self, recipient_pk, m: bytes, now: float) -> PayloadMsg:
        enc, _ = self.epochs(now)
        payload = self.crypto.encrypt(recipient_pk, enc, m)
        mid = message_id(payload)
        self.cache.add(mid, payload, enc)
        self.fresh.append(mid)
        return PayloadMsg(payload)

    def on_payload(self, payload: bytes, now: float, mid: Optional[bytes] = None) -> PayloadOutcome:
        if mid is None:
            mid = message_id(payload)
        if mid in self.cache:
            self.duplicates += 1
            return PayloadOutcome(mid, forward=False, duplicate=True)
        try:
            ratchet.peek_epoch(payload)
        except ratchet.MalformedCiphertext:
            self.malformed += 1
            return PayloadOutcome(mid, forward=False, malformed=True)
        enc, decryptable = self.epochs(now)
        self.crypto.advance_to(enc)
        try:
            plaintext = self.crypto.try_decrypt(payload, decryptable)
        except ratchet.MalformedCiphertext:
            self.malformed += 1
            return PayloadOutcome(mid, forward=False, malformed=True)
        self.cache.add(mid, payload, enc)
        self.fresh.append(mid)
        return PayloadOutcome(mid, forward=True, plaintext=plaintext)
