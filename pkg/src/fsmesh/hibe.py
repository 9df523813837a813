"""Anonymous hierarchical identity-based key encapsulation over BLS12-381.

The scheme follows the affine-MAC design: with ``A = (1, a)^T`` and a
secret row vector ``(y | x)`` per (level, bit), the public key publishes
``[z]_1 = [(y | x) A]_1 = [y + a x]_1``.  An encapsulation to identity
``id`` of length ``n`` is::

    C = ([r]_1, [a r]_1, [z_{1,id_1} r]_1, ..., [z_{n,id_n} r]_1)
    K = e([z0 r]_1, [1]_2)

and a user key carries ``[t_j]_2`` per level together with
``[u]_2 = [sum x t + x0]_2`` and ``[v]_2 = [sum y t + y0]_2``, so that::

    K = e(C_0, v) * e(C_1, u) / prod_j e(C_{j+1}, t_j)

Ciphertexts live in ``G1^2 x G1^n``, keys live in ``G2``, session keys in
``GT``.  Delegation keys hold re-randomisers ``([w]_2, [x w]_2, [y w]_2)``:
one per fixed level of the identity, two (one per bit) for every level
still free below it.

Encodings (all group elements use mcl's compressed form, scalars are
32-byte big-endian):

* master public key: ``0x01 | L | a | z0 | z[1][0] z[1][1] ... z[L][1]``
* master secret:     ``0x02 | L | x0 y0 | (x[j][0] x[j][1] y[j][0] y[j][1])*L``
* user key:          ``0x03 | L | n | id bits | t_1..t_n | u | v |
  fixed n*(w, xw, yw) | free (L-n)*2*(w, xw, yw)``
* encapsulation:     ``0x04 | n | C_0 .. C_{n+1}``
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import Sequence

from pymcl import Fr, G1, G2, GT, g1 as _G1_GEN, g2 as _G2_GEN, pairing, r as _ORDER

SECURITY_BITS = 128
MDDH_K = 1
MAX_DEPTH = 32

G1_BYTES = 48
G2_BYTES = 96
GT_BYTES = 576
SCALAR_BYTES = 32

TAG_MPK = 0x01
TAG_MSK = 0x02
TAG_USER_KEY = 0x03
TAG_ENCAPSULATION = 0x04

Identity = tuple[int, ...]


class HibeError(ValueError):
    """Invalid HIBE input: bad identity, depth, or malformed encoding."""


@dataclass(frozen=True)
class GroupParams:
    order: int
    g1: G1
    g2: G2
    gt: GT
    security: int = SECURITY_BITS
    k: int = MDDH_K

    def pair(self, u: G1, v: G2) -> GT:
        return pairing(u, v)


BLS12_381 = GroupParams(order=_ORDER, g1=_G1_GEN, g2=_G2_GEN, gt=pairing(_G1_GEN, _G2_GEN))
_ZERO = Fr("0")
_G1_ZERO = _G1_GEN * _ZERO
_G2_ZERO = _G2_GEN * _ZERO


def scalar(value: int) -> Fr:
    return Fr(str(value % _ORDER))


def random_scalar(rng) -> Fr:
    return Fr(str(rng.randrange(1, _ORDER)))


def scalar_to_bytes(s: Fr) -> bytes:
    return int(str(s)).to_bytes(SCALAR_BYTES, "big")


def scalar_from_bytes(data: bytes) -> Fr:
    value = int.from_bytes(data, "big")
    if value >= _ORDER:
        raise HibeError("scalar out of range")
    return Fr(str(value))


def gt_to_bytes(k: GT) -> bytes:
    return bytes(k.serialize())


def check_identity(identity: Sequence[int], depth: int) -> Identity:
    ident = tuple(identity)
    if len(ident) > depth:
        raise HibeError(f"identity length {len(ident)} exceeds depth {depth}")
    if any(bit not in (0, 1) for bit in ident):
        raise HibeError("identity components must be bits")
    return ident


def _default_rng(rng):
    return rng if rng is not None else secrets.SystemRandom()


@dataclass(frozen=True)
class MasterPublicKey:
    depth: int
    a: G1
    z0: G1
    z: tuple[tuple[G1, G1], ...]  # z[level][bit], level 0-based

    def to_bytes(self) -> bytes:
        out = bytearray([TAG_MPK, self.depth])
        out += self.a.serialize()
        out += self.z0.serialize()
        for pair in self.z:
            out += pair[0].serialize()
            out += pair[1].serialize()
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MasterPublicKey":
        if len(data) < 2 or data[0] != TAG_MPK:
            raise HibeError("not a master public key encoding")
        depth = data[1]
        _check_depth(depth)
        if len(data) != mpk_size(depth):
            raise HibeError("master public key has wrong length")
        elems = _read_points(G1, data[2:], G1_BYTES)
        z = tuple((elems[2 + 2 * j], elems[3 + 2 * j]) for j in range(depth))
        return cls(depth, elems[0], elems[1], z)


def mpk_size(depth: int) -> int:
    return 2 + G1_BYTES * (2 + 2 * depth)


@dataclass
class MasterSecret:
    depth: int
    x0: Fr
    y0: Fr
    x: list[list[Fr]]  # x[level][bit]
    y: list[list[Fr]]

    def wipe(self) -> None:
        """Overwrite every secret scalar with zero."""
        self.x0 = self.y0 = _ZERO
        for row in self.x + self.y:
            row[0] = row[1] = _ZERO
        self.x.clear()
        self.y.clear()

    def to_bytes(self) -> bytes:
        out = bytearray([TAG_MSK, self.depth])
        out += scalar_to_bytes(self.x0) + scalar_to_bytes(self.y0)
        for j in range(self.depth):
            for s in (self.x[j][0], self.x[j][1], self.y[j][0], self.y[j][1]):
                out += scalar_to_bytes(s)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MasterSecret":
        if len(data) < 2 or data[0] != TAG_MSK:
            raise HibeError("not a master secret encoding")
        depth = data[1]
        _check_depth(depth)
        if len(data) != 2 + SCALAR_BYTES * (2 + 4 * depth):
            raise HibeError("master secret has wrong length")
        s = [scalar_from_bytes(data[i:i + SCALAR_BYTES]) for i in range(2, len(data), SCALAR_BYTES)]
        x = [[s[2 + 4 * j], s[3 + 4 * j]] for j in range(depth)]
        y = [[s[4 + 4 * j], s[5 + 4 * j]] for j in range(depth)]
        return cls(depth, s[0], s[1], x, y)


Rerandomizer = tuple[G2, G2, G2]  # ([w]_2, [x w]_2, [y w]_2)


@dataclass
class UserKey:
    """Secret key (``t``, ``u``, ``v``) plus delegation key for one identity.

    ``fixed[j]`` re-randomises level ``j`` of the key's own identity;
    ``free[j - n]`` holds one re-randomiser per bit for every level below it.
    """

    depth: int
    identity: Identity
    t: list[G2]
    u: G2
    v: G2
    fixed: list[Rerandomizer]
    free: list[tuple[Rerandomizer, Rerandomizer]]

    @property
    def can_delegate(self) -> bool:
        n = len(self.identity)
        return len(self.fixed) == n and len(self.free) == self.depth - n

    def without_delegation(self) -> "UserKey":
        """Copy that can decapsulate but no longer derive descendants."""
        return UserKey(self.depth, self.identity, list(self.t), self.u, self.v, [], [])

    def wipe(self) -> None:
        """Overwrite all key material with the group identity."""
        for i in range(len(self.t)):
            self.t[i] = _G2_ZERO
        self.u = self.v = _G2_ZERO
        for i in range(len(self.fixed)):
            self.fixed[i] = (_G2_ZERO, _G2_ZERO, _G2_ZERO)
        for i in range(len(self.free)):
            self.free[i] = ((_G2_ZERO,) * 3, (_G2_ZERO,) * 3)
        self.t.clear()
        self.fixed.clear()
        self.free.clear()

    def to_bytes(self) -> bytes:
        if (self.fixed or self.free) and not self.can_delegate:
            raise HibeError("partially stripped key cannot be encoded")
        n = len(self.identity)
        out = bytearray([TAG_USER_KEY, self.depth, n])
        out += bytes(self.identity)
        for elem in self.t:
            out += elem.serialize()
        out += self.u.serialize()
        out += self.v.serialize()
        for triple in self.fixed:
            for elem in triple:
                out += elem.serialize()
        for pair in self.free:
            for triple in pair:
                for elem in triple:
                    out += elem.serialize()
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "UserKey":
        if len(data) < 3 or data[0] != TAG_USER_KEY:
            raise HibeError("not a user key encoding")
        depth, n = data[1], data[2]
        _check_depth(depth)
        ident = check_identity(data[3:3 + n], depth)
        body = data[3 + n:]
        with_delegation = user_key_size(depth, n, delegation=True) - 3 - n
        without = user_key_size(depth, n, delegation=False) - 3 - n
        if len(body) not in (with_delegation, without):
            raise HibeError("user key has wrong length")
        elems = _read_points(G2, body, G2_BYTES)
        t = elems[:n]
        u, v = elems[n], elems[n + 1]
        rest = elems[n + 2:]
        fixed, free = [], []
        if rest:
            fixed = [tuple(rest[3 * j:3 * j + 3]) for j in range(n)]
            rest = rest[3 * n:]
            free = [(tuple(rest[6 * j:6 * j + 3]), tuple(rest[6 * j + 3:6 * j + 6]))
                    for j in range(depth - n)]
        return cls(depth, ident, t, u, v, fixed, free)


def user_key_size(depth: int, n: int, delegation: bool = True) -> int:
    count = n + 2
    if delegation:
        count += 3 * n + 6 * (depth - n)
    return 3 + n + G2_BYTES * count


@dataclass(frozen=True)
class Encapsulation:
    key: GT
    ciphertext: tuple[G1, ...]


def encapsulation_to_bytes(ciphertext: Sequence[G1]) -> bytes:
    n = len(ciphertext) - (MDDH_K + 1)
    if n < 0:
        raise HibeError("encapsulation too short")
    out = bytearray([TAG_ENCAPSULATION, n])
    for elem in ciphertext:
        out += elem.serialize()
    return bytes(out)


def encapsulation_from_bytes(data: bytes) -> tuple[G1, ...]:
    if len(data) < 2 or data[0] != TAG_ENCAPSULATION:
        raise HibeError("not an encapsulation encoding")
    n = data[1]
    if len(data) != encapsulation_size(n):
        raise HibeError("encapsulation has wrong length")
    return tuple(_read_points(G1, data[2:], G1_BYTES))


def encapsulation_size(n: int) -> int:
    return 2 + G1_BYTES * (MDDH_K + 1 + n)


def _read_points(cls, data: bytes, width: int) -> list:
    if len(data) % width:
        raise HibeError("truncated group element")
    out = []
    for i in range(0, len(data), width):
        try:
            out.append(cls.deserialize(data[i:i + width]))
        except Exception as exc:  # mcl raises a bare exception type
            raise HibeError(f"invalid group element at offset {i}") from exc
    return out


def _check_depth(depth: int) -> None:
    if not 1 <= depth <= MAX_DEPTH:
        raise HibeError(f"depth must be in 1..{MAX_DEPTH}, got {depth}")


def setup(depth: int, security: int = SECURITY_BITS, rng=None) -> tuple[MasterPublicKey, MasterSecret]:
    """Generate a master key pair for identities of length at most ``depth``."""
    if security != SECURITY_BITS:
        raise HibeError(f"unsupported security level {security}")
    _check_depth(depth)
    rng = _default_rng(rng)
    g1 = BLS12_381.g1
    a = random_scalar(rng)
    x0, y0 = random_scalar(rng), random_scalar(rng)
    x = [[random_scalar(rng), random_scalar(rng)] for _ in range(depth)]
    y = [[random_scalar(rng), random_scalar(rng)] for _ in range(depth)]
    z = tuple(
        (g1 * (y[j][0] + a * x[j][0]), g1 * (y[j][1] + a * x[j][1]))
        for j in range(depth)
    )
    mpk = MasterPublicKey(depth, g1 * a, g1 * (y0 + a * x0), z)
    return mpk, MasterSecret(depth, x0, y0, x, y)


def _rerandomizer(x: Fr, y: Fr, rng) -> Rerandomizer:
    w = BLS12_381.g2 * random_scalar(rng)
    return (w, w * x, w * y)


def usk_gen(msk: MasterSecret, identity: Sequence[int], rng=None) -> UserKey:
    """Derive the secret and delegation key of ``identity`` from the master secret."""
    if not msk.x:
        raise HibeError("master secret has been wiped")
    ident = check_identity(identity, msk.depth)
    rng = _default_rng(rng)
    g2 = BLS12_381.g2
    u_exp, v_exp = msk.x0, msk.y0
    t = []
    for j, bit in enumerate(ident):
        tj = random_scalar(rng)
        t.append(g2 * tj)
        u_exp = u_exp + msk.x[j][bit] * tj
        v_exp = v_exp + msk.y[j][bit] * tj
    fixed = [_rerandomizer(msk.x[j][bit], msk.y[j][bit], rng) for j, bit in enumerate(ident)]
    free = [
        (_rerandomizer(msk.x[j][0], msk.y[j][0], rng), _rerandomizer(msk.x[j][1], msk.y[j][1], rng))
        for j in range(len(ident), msk.depth)
    ]
    return UserKey(msk.depth, ident, t, g2 * u_exp, g2 * v_exp, fixed, free)


def _scale(triple: Rerandomizer, s: Fr) -> Rerandomizer:
    return (triple[0] * s, triple[1] * s, triple[2] * s)


def delegate(parent: UserKey, child: Sequence[int], rng=None) -> UserKey:
    """Derive a fresh key for a strict descendant of ``parent.identity``."""
    if not parent.can_delegate:
        raise HibeError("key carries no delegation material")
    ident = check_identity(child, parent.depth)
    n = len(parent.identity)
    if len(ident) <= n or ident[:n] != parent.identity:
        raise HibeError(f"{ident} is not a strict descendant of {parent.identity}")
    rng = _default_rng(rng)

    t = list(parent.t)
    u, v = parent.u, parent.v
    # re-randomise the inherited levels so siblings share no t_j
    for j in range(n):
        w, xw, yw = parent.fixed[j]
        s = random_scalar(rng)
        t[j] = t[j] + w * s
        u = u + xw * s
        v = v + yw * s
    fixed = [_scale(parent.fixed[j], random_scalar(rng)) for j in range(n)]
    for j in range(n, len(ident)):
        w, xw, yw = parent.free[j - n][ident[j]]
        s = random_scalar(rng)
        t.append(w * s)
        u = u + xw * s
        v = v + yw * s
        fixed.append(_scale(parent.free[j - n][ident[j]], random_scalar(rng)))
    free = [
        (_scale(pair[0], random_scalar(rng)), _scale(pair[1], random_scalar(rng)))
        for pair in parent.free[len(ident) - n:]
    ]
    return UserKey(parent.depth, ident, t, u, v, fixed, free)


def encaps(mpk: MasterPublicKey, identity: Sequence[int], rng=None) -> Encapsulation:
    ident = check_identity(identity, mpk.depth)
    rng = _default_rng(rng)
    r = random_scalar(rng)
    ciphertext = [BLS12_381.g1 * r, mpk.a * r]
    ciphertext.extend(mpk.z[j][bit] * r for j, bit in enumerate(ident))
    key = pairing(mpk.z0 * r, BLS12_381.g2)
    return Encapsulation(key, tuple(ciphertext))


def decaps(key: UserKey, identity: Sequence[int], ciphertext: Sequence[G1]) -> GT:
    ident = check_identity(identity, key.depth)
    if ident != key.identity:
        raise HibeError("key does not belong to this identity")
    if len(ciphertext) != MDDH_K + 1 + len(ident):
        raise HibeError(
            f"encapsulation has {len(ciphertext)} components, expected {MDDH_K + 1 + len(ident)}"
        )
    k = pairing(ciphertext[0], key.v) * pairing(ciphertext[1], key.u)
    for cj, tj in zip(ciphertext[2:], key.t):
        k = k * pairing(-cj, tj)
    return k


def is_descendant(child: Sequence[int], ancestor: Sequence[int], strict: bool = False) -> bool:
    child, ancestor = tuple(child), tuple(ancestor)
    if strict and len(child) == len(ancestor):
        return False
    return child[:len(ancestor)] == ancestor
