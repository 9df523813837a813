"""Key-evolving public-key encryption built from the HIBE.

Epochs are the nodes of a binary identity tree numbered in depth-first
preorder.  The secret key is a stack of HIBE user keys: the top belongs to
the current epoch, the rest are the roots of the subtrees still ahead.
Advancing pushes the two children (right first, so left ends on top) and
drops the parent, or simply pops at a leaf.

Wire layouts (integers big-endian):

* public key:  ``0x11 | epoch:u64 | hibe master public key``
* secret key:  ``0x12 | epoch:u64 | L:u8 | count:u8 | (len:u32 | user key)*``
  listed bottom of stack first
* ciphertext:  ``0x13 | epoch:u64 | n:u8 | C (2+n G1 elements) | nonce:12 |
  AES-256-GCM body | tag:16``; everything before the nonce is bound as
  associated data.
"""

from __future__ import annotations

import hashlib
import math
import secrets
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import hibe

DEFAULT_DEPTH = 20

TAG_PUBLIC_KEY = 0x11
TAG_SECRET_KEY = 0x12
TAG_CIPHERTEXT = 0x13

NONCE_BYTES = 12
AEAD_TAG_BYTES = 16
SYMMETRIC_KEY_BYTES = 32
_HEADER = struct.Struct(">BQB")
_KDF_LABEL = b"fsmesh/h(K)/v1"

# QR version 40, binary mode
QR_PAYLOAD_LIMIT = 2953


class RatchetError(Exception):
    pass


class EpochRangeError(RatchetError, ValueError):
    pass


class KeyExhausted(RatchetError):
    """The secret key has reached the last epoch of its tree."""


class DecryptionError(RatchetError):
    """Not addressed to this key, or not decryptable in this epoch."""


class MalformedCiphertext(RatchetError, ValueError):
    pass


def last_epoch(depth: int) -> int:
    return 2 ** (depth + 1) - 2


def subtree_size(height: int) -> int:
    """Number of epochs in a subtree whose root sits ``height`` levels above the leaves."""
    return 2 ** (height + 1) - 1


def _check_epoch(t: int, depth: int) -> None:
    if not 0 <= t <= last_epoch(depth):
        raise EpochRangeError(f"epoch {t} outside 0..{last_epoch(depth)} for depth {depth}")


def epoch_to_identity(t: int, depth: int) -> hibe.Identity:
    """Preorder position ``t`` -> bit path from the root."""
    _check_epoch(t, depth)
    path = []
    height = depth
    while t:
        t -= 1
        half = subtree_size(height - 1)
        if t < half:
            path.append(0)
        else:
            path.append(1)
            t -= half
        height -= 1
    return tuple(path)


def identity_to_epoch(identity: Iterable[int], depth: int) -> int:
    t = 0
    height = depth
    for bit in identity:
        t += 1 if bit == 0 else 1 + subtree_size(height - 1)
        height -= 1
    return t


def epoch_depth(t: int, depth: int) -> int:
    return len(epoch_to_identity(t, depth))


@dataclass
class FsPublicKey:
    t: int
    mpk: hibe.MasterPublicKey

    @property
    def depth(self) -> int:
        return self.mpk.depth

    def ratchet(self) -> None:
        """Public-key ratchet: only the advisory epoch counter moves."""
        self.t += 1

    def to_bytes(self) -> bytes:
        return struct.pack(">BQ", TAG_PUBLIC_KEY, self.t) + self.mpk.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FsPublicKey":
        if len(data) < 9 or data[0] != TAG_PUBLIC_KEY:
            raise RatchetError("not a public key encoding")
        (t,) = struct.unpack_from(">Q", data, 1)
        return cls(t, hibe.MasterPublicKey.from_bytes(data[9:]))


def public_key_size(depth: int) -> int:
    return 9 + hibe.mpk_size(depth)


@dataclass
class FsSecretKey:
    t: int
    depth: int
    stack: list[hibe.UserKey] = field(default_factory=list)

    @property
    def top(self) -> hibe.UserKey:
        if not self.stack:
            raise KeyExhausted("secret key has no remaining epochs")
        return self.stack[-1]

    @property
    def exhausted(self) -> bool:
        return self.t >= last_epoch(self.depth)

    def to_bytes(self) -> bytes:
        out = bytearray(struct.pack(">BQBB", TAG_SECRET_KEY, self.t, self.depth, len(self.stack)))
        for key in self.stack:
            blob = key.to_bytes()
            out += struct.pack(">I", len(blob)) + blob
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FsSecretKey":
        if len(data) < 11 or data[0] != TAG_SECRET_KEY:
            raise RatchetError("not a secret key encoding")
        _, t, depth, count = struct.unpack_from(">BQBB", data, 0)
        offset = 11
        stack = []
        for _ in range(count):
            if offset + 4 > len(data):
                raise RatchetError("truncated secret key")
            (length,) = struct.unpack_from(">I", data, offset)
            offset += 4
            stack.append(hibe.UserKey.from_bytes(data[offset:offset + length]))
            offset += length
        if offset != len(data):
            raise RatchetError("trailing bytes after secret key")
        sk = cls(t, depth, stack)
        _check_epoch(t, depth)
        if stack and stack[-1].identity != epoch_to_identity(t, depth):
            raise RatchetError("top key does not match the stored epoch")
        return sk


def fs_keygen(depth: int = DEFAULT_DEPTH, security: int = hibe.SECURITY_BITS, rng=None):
    """Fresh key pair at epoch 0; the HIBE master secret is wiped before returning."""
    rng = rng if rng is not None else secrets.SystemRandom()
    mpk, msk = hibe.setup(depth, security, rng)
    root = hibe.usk_gen(msk, (), rng)
    msk.wipe()
    return FsPublicKey(0, mpk), FsSecretKey(0, depth, [root])


def fs_update(sk: FsSecretKey, rng=None) -> FsSecretKey:
    """Advance ``sk`` to the next epoch in place and return it."""
    if sk.exhausted:
        raise KeyExhausted(f"epoch {sk.t} is the last epoch of a depth-{sk.depth} tree")
    rng = rng if rng is not None else secrets.SystemRandom()
    current = sk.stack.pop()
    ident = current.identity
    if len(ident) < sk.depth:
        right = hibe.delegate(current, ident + (1,), rng)
        left = hibe.delegate(current, ident + (0,), rng)
        sk.stack.append(right)
        sk.stack.append(left)
    current.wipe()
    sk.t += 1
    return sk


def fs_advance(sk: FsSecretKey, target: int, rng=None) -> FsSecretKey:
    """Move ``sk`` forward to epoch ``target``, skipping whole subtrees where possible."""
    _check_epoch(target, sk.depth)
    if target < sk.t:
        raise RatchetError(f"cannot move back from epoch {sk.t} to {target}")
    while sk.t < target:
        height = sk.depth - len(sk.top.identity)
        span = subtree_size(height)
        if target < sk.t + span:
            fs_update(sk, rng)
        else:
            sk.stack.pop().wipe()
            sk.t += span
    return sk


def _symmetric_key(k) -> bytes:
    return hashlib.sha256(_KDF_LABEL + hibe.gt_to_bytes(k)).digest()[:SYMMETRIC_KEY_BYTES]


@dataclass(frozen=True)
class FsCiphertext:
    epoch: int
    encapsulation: tuple
    nonce: bytes
    body: bytes  # AEAD output, tag included

    @property
    def arity(self) -> int:
        return len(self.encapsulation)

    def header(self) -> bytes:
        n = len(self.encapsulation) - (hibe.MDDH_K + 1)
        out = bytearray(_HEADER.pack(TAG_CIPHERTEXT, self.epoch, n))
        for elem in self.encapsulation:
            out += elem.serialize()
        return bytes(out)

    def to_bytes(self) -> bytes:
        return self.header() + self.nonce + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "FsCiphertext":
        if len(data) < _HEADER.size:
            raise MalformedCiphertext("ciphertext shorter than its header")
        tag, epoch, n = _HEADER.unpack_from(data, 0)
        if tag != TAG_CIPHERTEXT:
            raise MalformedCiphertext(f"unexpected format tag {tag:#x}")
        c_len = hibe.G1_BYTES * (hibe.MDDH_K + 1 + n)
        start = _HEADER.size
        if len(data) < start + c_len + NONCE_BYTES + AEAD_TAG_BYTES:
            raise MalformedCiphertext("ciphertext truncated")
        try:
            elems = hibe._read_points(hibe.G1, data[start:start + c_len], hibe.G1_BYTES)
        except hibe.HibeError as exc:
            raise MalformedCiphertext(str(exc)) from exc
        pos = start + c_len
        return cls(epoch, tuple(elems), data[pos:pos + NONCE_BYTES], data[pos + NONCE_BYTES:])


def peek_epoch(data: bytes) -> int:
    """Epoch of a wire ciphertext without parsing group elements."""
    if len(data) < _HEADER.size + NONCE_BYTES + AEAD_TAG_BYTES or data[0] != TAG_CIPHERTEXT:
        raise MalformedCiphertext("not a ciphertext")
    return _HEADER.unpack_from(data, 0)[1]


def ciphertext_size(identity_length: int, message_length: int) -> int:
    return (_HEADER.size + hibe.G1_BYTES * (hibe.MDDH_K + 1 + identity_length)
            + NONCE_BYTES + message_length + AEAD_TAG_BYTES)


def fs_encrypt(t: int, pk: FsPublicKey, m: bytes, rng=None) -> FsCiphertext:
    """Encrypt ``m`` for epoch ``t``; ``pk.t`` is advisory and ignored here."""
    rng = rng if rng is not None else secrets.SystemRandom()
    ident = epoch_to_identity(t, pk.depth)
    enc = hibe.encaps(pk.mpk, ident, rng)
    nonce = rng.getrandbits(8 * NONCE_BYTES).to_bytes(NONCE_BYTES, "big")
    draft = FsCiphertext(t, enc.ciphertext, nonce, b"")
    body = AESGCM(_symmetric_key(enc.key)).encrypt(nonce, bytes(m), draft.header())
    return FsCiphertext(t, enc.ciphertext, nonce, body)


def _open(key: hibe.UserKey, t: int, c: FsCiphertext) -> bytes:
    ident = epoch_to_identity(t, key.depth)
    if len(c.encapsulation) != hibe.MDDH_K + 1 + len(ident):
        raise MalformedCiphertext("encapsulation arity does not match the epoch")
    k = hibe.decaps(key, ident, c.encapsulation)
    try:
        return AESGCM(_symmetric_key(k)).decrypt(c.nonce, c.body, c.header())
    except InvalidTag:
        raise DecryptionError("authentication failed") from None


def fs_decrypt(t: int, sk: FsSecretKey, c: FsCiphertext) -> bytes:
    if c.epoch != t or sk.t != t or not sk.stack:
        raise DecryptionError(f"no key for epoch {t}")
    return _open(sk.top, t, c)


@dataclass(frozen=True)
class EpochClockRule:
    epoch_seconds: float = 60.0
    genesis: float = 0.0
    rollover: bool = True

    def __post_init__(self):
        if self.epoch_seconds <= 0:
            raise ValueError("epoch duration must be positive")

    @property
    def period(self) -> float:
        """Seconds between private-key ratchets."""
        return self.epoch_seconds / 2 if self.rollover else self.epoch_seconds


def current_epochs(clock: float, rule: EpochClockRule) -> tuple[int, frozenset]:
    """Epoch to encrypt for and the set of epochs still decryptable at ``clock`` seconds."""
    s = math.floor((clock - rule.genesis) / rule.period)
    if rule.rollover and s > 0:
        return s, frozenset((s, s - 1))
    return s, frozenset((s,))


class EpochKeyring:
    """A secret key plus the decapsulation-only key of the previous epoch.

    Implements smooth rollover: the ratchet runs at half the epoch length and
    the key one step behind stays usable until the next advance.
    """

    def __init__(self, sk: FsSecretKey, rng=None):
        self.sk = sk
        self.previous: Optional[tuple[int, hibe.UserKey]] = None
        self._rng = rng

    @property
    def epoch(self) -> int:
        return self.sk.t

    def held_epochs(self) -> frozenset:
        held = {self.sk.t}
        if self.previous is not None:
            held.add(self.previous[0])
        return frozenset(held)

    def advance_to(self, target: int) -> None:
        if target <= self.sk.t:
            return
        if target - 1 > self.sk.t:
            fs_advance(self.sk, target - 1, self._rng)
        snapshot = self.sk.top.without_delegation()
        fs_update(self.sk, self._rng)
        if self.previous is not None:
            self.previous[1].wipe()
        self.previous = (target - 1, snapshot)

    def decrypt(self, c: FsCiphertext, decryptable: Iterable[int]) -> bytes:
        if c.epoch not in set(decryptable):
            raise DecryptionError(f"epoch {c.epoch} outside the decryptable window")
        if c.epoch == self.sk.t and self.sk.stack:
            return _open(self.sk.top, c.epoch, c)
        if self.previous is not None and c.epoch == self.previous[0]:
            return _open(self.previous[1], c.epoch, c)
        raise DecryptionError(f"no key for epoch {c.epoch}")
