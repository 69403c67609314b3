"""Cryptographic primitives: collision-resistant hash, chameleon hash, signatures.

The chameleon hash is the discrete-log construction h = g^e(m) * pk^r over a
prime-order subgroup of Z_p^*, with the trapdoor collision
r' = r + (e(m) - e(m')) * sk^-1 mod q. Two parameter sets ship with the
package: a 256-bit production group (smallest safe prime above 2^255,
generator 4, see docs/encoding.md) and a tiny q=23 group used only by tests,
where exhaustive search over all scalars is feasible.

Signatures are ECDSA over secp256k1 with RFC 6979 deterministic nonces.
Determinism matters here: the simulator derives every key from a seeded rng
and asserts byte-identical transcripts across runs, so neither key generation
nor signing may touch OS randomness.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass

from .encoding import enc_scalar

__all__ = [
    "CryptoError",
    "GroupParams",
    "ChameleonKeyPair",
    "ChameleonDigest",
    "SignatureKeyPair",
    "digest",
    "ch_pgen",
    "ch_kgen",
    "hash_to_scalar",
    "ch_hash",
    "ch_verify",
    "ch_adapt",
    "ds_kgen",
    "ds_sign",
    "ds_verify",
]


class CryptoError(ValueError):
    """Invalid key material or violated operation precondition."""


def digest(data: bytes) -> bytes:
    """32-byte collision-resistant digest (SHA-256)."""
    return hashlib.sha256(data).digest()


def digest_int(data: bytes) -> int:
    return int.from_bytes(digest(data), "big")


# ---------------------------------------------------------------------------
# Chameleon hash over a prime-order subgroup of Z_p^*
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupParams:
    """Subgroup of order q generated by g inside Z_p^*, p = 2q + 1."""

    p: int
    q: int
    g: int
    security_level: str

    def element_bytes(self, x: int) -> bytes:
        return enc_scalar(x)

    def contains(self, x: int) -> bool:
        return 0 < x < self.p


# Smallest safe prime above 2^255; q = (p-1)/2 is prime, 4 generates the
# order-q subgroup of quadratic residues.
_STANDARD_P = (1 << 255) + 0x2FF7F
_STANDARD = GroupParams(
    p=_STANDARD_P,
    q=(_STANDARD_P - 1) // 2,
    g=4,
    security_level="standard",
)

# q=23 subgroup of Z_47^*; small enough for exhaustive oracles. Tests only.
_TOY = GroupParams(p=47, q=23, g=2, security_level="toy")


def ch_pgen(security_level: str) -> GroupParams:
    """Public parameters for the chameleon hash; "standard" or "toy"."""
    if security_level == "standard":
        return _STANDARD
    if security_level == "toy":
        return _TOY
    raise CryptoError(f"unsupported security level: {security_level!r}")


@dataclass(frozen=True)
class ChameleonKeyPair:
    pk: int
    sk: int  # trapdoor; public by design in this protocol


@dataclass(frozen=True)
class ChameleonDigest:
    h: int
    r: int


def ch_kgen(pp: GroupParams, rng: random.Random) -> ChameleonKeyPair:
    sk = rng.randrange(1, pp.q)
    return ChameleonKeyPair(pk=pow(pp.g, sk, pp.p), sk=sk)


def hash_to_scalar(pp: GroupParams, m: bytes) -> int:
    """e(m): digest interpreted big-endian, reduced mod q."""
    return digest_int(m) % pp.q


def ch_hash(pp: GroupParams, pk: int, m: bytes, rng: random.Random) -> ChameleonDigest:
    if not pp.contains(pk):
        raise CryptoError("chameleon public key outside group")
    r = rng.randrange(0, pp.q)
    e = hash_to_scalar(pp, m)
    h = (pow(pp.g, e, pp.p) * pow(pk, r, pp.p)) % pp.p
    return ChameleonDigest(h=h, r=r)


def ch_verify(pp: GroupParams, pk: int, h: int, r: int, m: bytes) -> bool:
    """Accept iff h = g^e(m) * pk^r. Malformed values reject, never raise."""
    if not pp.contains(pk) or not pp.contains(h):
        return False
    if not 0 <= r < pp.q:
        return False
    e = hash_to_scalar(pp, m)
    return (pow(pp.g, e, pp.p) * pow(pk, r, pp.p)) % pp.p == h


def ch_adapt(pp: GroupParams, sk: int, h: int, r: int, m: bytes, m_new: bytes) -> int:
    """Collision: new randomness r' such that (h, r') verifies for m_new."""
    if not 0 < sk < pp.q:
        raise CryptoError("trapdoor outside [1, q-1]")
    pk = pow(pp.g, sk, pp.p)
    if not ch_verify(pp, pk, h, r, m):
        raise CryptoError("adapt precondition failed: (h, r) does not verify for m")
    e_old = hash_to_scalar(pp, m)
    e_new = hash_to_scalar(pp, m_new)
    return (r + (e_old - e_new) * pow(sk, -1, pp.q)) % pp.q


# ---------------------------------------------------------------------------
# secp256k1 point arithmetic (Jacobian coordinates, a = 0)
# ---------------------------------------------------------------------------

_P = 2**256 - 2**32 - 977
_N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
_GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
_GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8

# Jacobian triple (X, Y, Z); Z = 0 encodes the point at infinity.
_INF = (0, 1, 0)
_G_JAC = (_GX, _GY, 1)


def _jac_double(pt):
    x, y, z = pt
    if z == 0 or y == 0:
        return _INF
    a = x * x % _P
    b = y * y % _P
    c = b * b % _P
    d = 2 * ((x + b) * (x + b) - a - c) % _P
    e = 3 * a % _P
    f = e * e % _P
    x3 = (f - 2 * d) % _P
    y3 = (e * (d - x3) - 8 * c) % _P
    z3 = 2 * y * z % _P
    return (x3, y3, z3)


def _jac_add(p1, p2):
    x1, y1, z1 = p1
    x2, y2, z2 = p2
    if z1 == 0:
        return p2
    if z2 == 0:
        return p1
    z1z1 = z1 * z1 % _P
    z2z2 = z2 * z2 % _P
    u1 = x1 * z2z2 % _P
    u2 = x2 * z1z1 % _P
    s1 = y1 * z2 * z2z2 % _P
    s2 = y2 * z1 * z1z1 % _P
    if u1 == u2:
        if s1 != s2:
            return _INF
        return _jac_double(p1)
    h = (u2 - u1) % _P
    i = 4 * h * h % _P
    j = h * i % _P
    r = 2 * (s2 - s1) % _P
    v = u1 * i % _P
    x3 = (r * r - j - 2 * v) % _P
    y3 = (r * (v - x3) - 2 * s1 * j) % _P
    z3 = ((z1 + z2) * (z1 + z2) - z1z1 - z2z2) * h % _P
    return (x3, y3, z3)


def _jac_to_affine(pt):
    x, y, z = pt
    if z == 0:
        return None
    zi = pow(z, -1, _P)
    zi2 = zi * zi % _P
    return (x * zi2 % _P, y * zi2 * zi % _P)


def _scalar_mult(k: int, pt) -> tuple:
    """k * pt in Jacobian form, 4-bit sliding window."""
    k %= _N
    if k == 0 or pt[2] == 0:
        return _INF
    table = [_INF, pt]
    for _ in range(14):
        table.append(_jac_add(table[-1], pt))
    acc = _INF
    for shift in range(k.bit_length() + (-k.bit_length()) % 4 - 4, -4, -4):
        acc = _jac_double(_jac_double(_jac_double(_jac_double(acc))))
        nib = (k >> shift) & 0xF
        if nib:
            acc = _jac_add(acc, table[nib])
    return acc


_BASE_TABLE: list | None = None


def _base_table():
    """table[j][d-1] = d * 16^j * G for d in 1..15, j in 0..63."""
    global _BASE_TABLE
    if _BASE_TABLE is None:
        rows = []
        base = _G_JAC
        for _ in range(64):
            row = [base]
            for _ in range(14):
                row.append(_jac_add(row[-1], base))
            rows.append(row)
            base = _jac_double(_jac_double(_jac_double(_jac_double(row[0]))))
        _BASE_TABLE = rows
    return _BASE_TABLE


def _base_mult(k: int) -> tuple:
    k %= _N
    if k == 0:
        return _INF
    table = _base_table()
    acc = _INF
    j = 0
    while k:
        nib = k & 0xF
        if nib:
            acc = _jac_add(acc, table[j][nib - 1])
        k >>= 4
        j += 1
    return acc


def _on_curve(x: int, y: int) -> bool:
    return (y * y - (x * x * x + 7)) % _P == 0


def _point_to_bytes(pt) -> bytes:
    if pt is None:
        raise CryptoError("cannot encode point at infinity")
    x, y = pt
    return bytes([2 + (y & 1)]) + x.to_bytes(32, "big")


def _point_from_bytes(data: bytes):
    """Decode compressed SEC1; raises CryptoError on malformed input."""
    if len(data) != 33 or data[0] not in (2, 3):
        raise CryptoError("malformed compressed point")
    x = int.from_bytes(data[1:], "big")
    if x >= _P:
        raise CryptoError("point x out of field range")
    y_sq = (pow(x, 3, _P) + 7) % _P
    y = pow(y_sq, (_P + 1) // 4, _P)
    if y * y % _P != y_sq:
        raise CryptoError("x is not on the curve")
    if y & 1 != data[0] & 1:
        y = _P - y
    return (x, y)


# ---------------------------------------------------------------------------
# ECDSA with RFC 6979 deterministic nonces
# ---------------------------------------------------------------------------

SIGNATURE_WIDTH = 64


@dataclass(frozen=True)
class SignatureKeyPair:
    pk: bytes  # 33-byte compressed point
    sk: int


def ds_kgen(rng: random.Random) -> SignatureKeyPair:
    sk = rng.randrange(1, _N)
    pk = _jac_to_affine(_base_mult(sk))
    return SignatureKeyPair(pk=_point_to_bytes(pk), sk=sk)


def _rfc6979_nonce(z: int, sk: int) -> int:
    h1 = z.to_bytes(32, "big")
    x = sk.to_bytes(32, "big")
    v = b"\x01" * 32
    k = b"\x00" * 32
    k = hmac.new(k, v + b"\x00" + x + h1, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    k = hmac.new(k, v + b"\x01" + x + h1, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    while True:
        v = hmac.new(k, v, hashlib.sha256).digest()
        cand = int.from_bytes(v, "big")
        if 1 <= cand < _N:
            return cand
        k = hmac.new(k, v + b"\x00", hashlib.sha256).digest()
        v = hmac.new(k, v, hashlib.sha256).digest()


def ds_sign(message: bytes, sk: int) -> bytes:
    """64-byte r||s signature; deterministic for a given (message, key)."""
    if not 0 < sk < _N:
        raise CryptoError("signing key outside [1, n-1]")
    z = digest_int(message) % _N
    k = _rfc6979_nonce(z, sk)
    while True:
        pt = _jac_to_affine(_base_mult(k))
        r = pt[0] % _N
        s = pow(k, -1, _N) * (z + r * sk) % _N
        if r != 0 and s != 0:
            break
        k = (k + 1) % _N or 1  # astronomically unlikely; keep deterministic
    if s > _N // 2:
        s = _N - s
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def ds_verify(sig: bytes, message: bytes, pk: bytes) -> bool:
    """Accept iff sig verifies for message under pk; malformed inputs reject."""
    if len(sig) != SIGNATURE_WIDTH:
        return False
    r = int.from_bytes(sig[:32], "big")
    s = int.from_bytes(sig[32:], "big")
    if not (0 < r < _N and 0 < s < _N):
        return False
    try:
        point = _point_from_bytes(pk)
    except CryptoError:
        return False
    z = digest_int(message) % _N
    s_inv = pow(s, -1, _N)
    u1 = z * s_inv % _N
    u2 = r * s_inv % _N
    acc = _jac_add(_base_mult(u1), _scalar_mult(u2, (point[0], point[1], 1)))
    affine = _jac_to_affine(acc)
    if affine is None:
        return False
    return affine[0] % _N == r
