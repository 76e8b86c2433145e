"""Pedersen commitments and non-interactive bit-decomposition range proofs.

Commitments live in the prime-order subgroup of quadratic residues mod a
safe prime p = 2q + 1. The second base h is derived from g by a
domain-separated hash, so no party knows log_g(h). Range proofs decompose
the committed value into bits, prove each bit is 0 or 1 with a Fiat-Shamir
OR-proof, and tie the weighted bit-commitment product back to the main
commitment with a revealed blinding offset.

The proven range is [0, 2^W - 1] with W = bit width of the bound; this is
a power-of-two relaxation of [0, bound] and is surfaced to callers via
proven_bound().
"""

from __future__ import annotations

import hashlib
import json
import random
import struct
from dataclasses import dataclass

from .crypto import is_probable_prime, powmod, invert

# Fixed published test-vector group: 1024-bit safe prime (p = 2q + 1).
# Part of the wire spec together with the domain-separation tags below.
TEST_GROUP_P = int(
    "a40fc666808042cf770f67049618f1893dc22d98fa03fc10c4e8392d82b27a67"
    "6e9ec89b34619cb35dd42964babf6e1ec1f04796d14e9cf6e5abecc68fb435da"
    "56e64669b7fef113cecdc3f04f30fbee2cbc2ec1c61d13697639aaaa04772b54"
    "5628c0c5b89a1124c3c1790c95962fb852a5d24a374ccfb09ad9775f434cd91b",
    16,
)

DS_BASE_H = b"fairaudit/pedersen/base-h/v1"
DS_RANGE_BIT = b"fairaudit/range-proof/bit-challenge/v1"


class CommitmentError(Exception):
    """Commitment or proof construction failure."""


@dataclass(frozen=True)
class CommitmentKey:
    group_modulus: int  # safe prime p
    group_order: int    # prime q = (p - 1) / 2
    base_g: int
    base_h: int


@dataclass(frozen=True)
class Commitment:
    value: int


@dataclass(frozen=True)
class BitProof:
    a0: int
    a1: int
    c0: int
    c1: int
    z0: int
    z1: int


@dataclass(frozen=True)
class RangeProof:
    bit_commitments: tuple[Commitment, ...]
    or_proofs: tuple[BitProof, ...]
    consistency_blinding: int


def _derive_h(p: int, q: int, g: int) -> int:
    counter = 0
    while True:
        digest = hashlib.sha256(
            DS_BASE_H + g.to_bytes(128 + 16, "little") + struct.pack("<I", counter)
        ).digest()
        seed = int.from_bytes(digest * 5, "little") % p
        h = seed * seed % p  # square into the order-q subgroup
        if h not in (0, 1) and h != g:
            return h
        counter += 1


def make_commitment_key(p: int) -> CommitmentKey:
    q = (p - 1) // 2
    g = 4 % p  # 2^2: a quadratic residue, hence order q
    return CommitmentKey(group_modulus=p, group_order=q, base_g=g, base_h=_derive_h(p, q, g))


def default_commitment_key() -> CommitmentKey:
    return make_commitment_key(TEST_GROUP_P)


def generate_commitment_key(bits: int, rng: random.Random) -> CommitmentKey:
    """Fresh safe-prime group; small sizes are for binding experiments only."""
    if bits < 16:
        raise CommitmentError("group size below 16 bits is meaningless")
    while True:
        q = rng.getrandbits(bits - 1) | (1 << (bits - 2)) | 1
        if not is_probable_prime(q, rng, 12):
            continue
        p = 2 * q + 1
        if is_probable_prime(p, rng):
            return make_commitment_key(p)


def commit(ck: CommitmentKey, value: int, blinding: int) -> Commitment:
    """g^value * h^blinding mod p; perfectly hiding, computationally binding."""
    if not 0 <= value < ck.group_order:
        raise CommitmentError(f"value {value} outside [0, group order)")
    blinding %= ck.group_order
    return Commitment(
        value=powmod(ck.base_g, value, ck.group_modulus)
        * powmod(ck.base_h, blinding, ck.group_modulus)
        % ck.group_modulus
    )


def aggregate_commitments(coms: list[Commitment], ck: CommitmentKey) -> Commitment:
    if not coms:
        raise CommitmentError("cannot aggregate an empty commitment list")
    acc = 1
    for c in coms:
        acc = acc * c.value % ck.group_modulus
    return Commitment(value=acc)


def random_blinding(ck: CommitmentKey, rng: random.Random) -> int:
    return rng.randrange(ck.group_order)


def proof_width(bound: int) -> int:
    if bound < 0:
        raise CommitmentError("bound must be non-negative")
    return max(1, bound.bit_length())


def proven_bound(bound: int) -> int:
    """Upper end of the power-of-two relaxation actually proven."""
    return (1 << proof_width(bound)) - 1


def _bit_challenge(
    ck: CommitmentKey,
    com: Commitment,
    bound: int,
    bit_coms: list[Commitment],
    index: int,
    a0: int,
    a1: int,
) -> int:
    h = hashlib.sha256()
    h.update(DS_RANGE_BIT)
    for n in (ck.group_modulus, ck.base_g, ck.base_h, com.value, bound):
        h.update(n.to_bytes(160, "little"))
    for bc in bit_coms:
        h.update(bc.value.to_bytes(160, "little"))
    h.update(struct.pack("<I", index))
    h.update(a0.to_bytes(160, "little"))
    h.update(a1.to_bytes(160, "little"))
    return int.from_bytes(h.digest(), "little") % ck.group_order


def prove_range(
    ck: CommitmentKey, value: int, blinding: int, bound: int, rng: random.Random
) -> RangeProof:
    """Honest-prover path; refuses out-of-range values outright."""
    width = proof_width(bound)
    if not 0 <= value <= bound:
        raise CommitmentError(f"value {value} outside [0, {bound}]")
    p, q, g, hb = ck.group_modulus, ck.group_order, ck.base_g, ck.base_h
    blinding %= q

    bits = [(value >> j) & 1 for j in range(width)]
    bit_blindings = [rng.randrange(q) for _ in range(width)]
    bit_coms = [commit(ck, b, r) for b, r in zip(bits, bit_blindings)]
    main_com = commit(ck, value, blinding)

    g_inv = invert(g, p)
    proofs = []
    for j, (b, r, bc) in enumerate(zip(bits, bit_blindings, bit_coms)):
        w = rng.randrange(q)
        c_fake = rng.randrange(q)
        z_fake = rng.randrange(q)
        if b == 0:
            # real branch: C = h^r; fake branch statement: C/g = h^?
            a0 = powmod(hb, w, p)
            fake_target = bc.value * g_inv % p
            a1 = powmod(hb, z_fake, p) * powmod(fake_target, -c_fake, p) % p
            c = _bit_challenge(ck, main_com, bound, bit_coms, j, a0, a1)
            c0 = (c - c_fake) % q
            proofs.append(BitProof(a0=a0, a1=a1, c0=c0, c1=c_fake,
                                   z0=(w + c0 * r) % q, z1=z_fake))
        else:
            a1 = powmod(hb, w, p)
            a0 = powmod(hb, z_fake, p) * powmod(bc.value, -c_fake, p) % p
            c = _bit_challenge(ck, main_com, bound, bit_coms, j, a0, a1)
            c1 = (c - c_fake) % q
            proofs.append(BitProof(a0=a0, a1=a1, c0=c_fake, c1=c1,
                                   z0=z_fake, z1=(w + c1 * r) % q))

    weighted_blinding = sum(r << j for j, r in enumerate(bit_blindings)) % q
    consistency = (blinding - weighted_blinding) % q
    return RangeProof(
        bit_commitments=tuple(bit_coms),
        or_proofs=tuple(proofs),
        consistency_blinding=consistency,
    )


def verify_range(
    ck: CommitmentKey, com: Commitment, proof: RangeProof, bound: int
) -> bool:
    ok, _ = verify_range_reason(ck, com, proof, bound)
    return ok


def verify_range_reason(
    ck: CommitmentKey, com: Commitment, proof: RangeProof, bound: int
) -> tuple[bool, str]:
    """Like verify_range but distinguishes malformed from unsound proofs."""
    p, q, g, hb = ck.group_modulus, ck.group_order, ck.base_g, ck.base_h
    width = proof_width(bound)
    if len(proof.bit_commitments) != width or len(proof.or_proofs) != width:
        return False, "malformed: proof width does not match bound"
    elements = [bc.value for bc in proof.bit_commitments]
    for bp in proof.or_proofs:
        elements += [bp.a0, bp.a1]
    if any(not 0 < e < p for e in elements + [com.value]):
        return False, "malformed: group element out of range"
    if not 0 <= proof.consistency_blinding < q:
        return False, "malformed: consistency blinding out of range"

    # weighted product of bit commitments must reassemble the commitment
    acc = 1
    for j, bc in enumerate(proof.bit_commitments):
        acc = acc * powmod(bc.value, 1 << j, p) % p
    if acc * powmod(hb, proof.consistency_blinding, p) % p != com.value:
        return False, "unsound: bit decomposition inconsistent with commitment"

    bit_coms = list(proof.bit_commitments)
    g_inv = invert(g, p)
    for j, (bc, bp) in enumerate(zip(bit_coms, proof.or_proofs)):
        c = _bit_challenge(ck, com, bound, bit_coms, j, bp.a0, bp.a1)
        if (bp.c0 + bp.c1) % q != c:
            return False, "unsound: challenge split mismatch"
        if powmod(hb, bp.z0, p) != bp.a0 * powmod(bc.value, bp.c0, p) % p:
            return False, "unsound: zero-branch equation fails"
        target = bc.value * g_inv % p
        if powmod(hb, bp.z1, p) != bp.a1 * powmod(target, bp.c1, p) % p:
            return False, "unsound: one-branch equation fails"
    return True, "ok"


# --- serialization: length-prefixed little-endian binary + JSON debug form ---

def _write_int(out: bytearray, n: int) -> None:
    raw = n.to_bytes((n.bit_length() + 7) // 8 or 1, "little")
    out += struct.pack("<I", len(raw))
    out += raw


def _read_int(data: bytes, off: int) -> tuple[int, int]:
    if off + 4 > len(data):
        raise CommitmentError("truncated serialization")
    (length,) = struct.unpack_from("<I", data, off)
    off += 4
    if off + length > len(data):
        raise CommitmentError("truncated serialization")
    return int.from_bytes(data[off : off + length], "little"), off + length


def serialize_commitment(com: Commitment) -> bytes:
    out = bytearray()
    _write_int(out, com.value)
    return bytes(out)


def deserialize_commitment(data: bytes) -> Commitment:
    value, off = _read_int(data, 0)
    if off != len(data):
        raise CommitmentError("trailing bytes after commitment")
    return Commitment(value=value)


def serialize_range_proof(proof: RangeProof) -> bytes:
    out = bytearray()
    out += struct.pack("<I", len(proof.bit_commitments))
    for bc in proof.bit_commitments:
        _write_int(out, bc.value)
    for bp in proof.or_proofs:
        for field in (bp.a0, bp.a1, bp.c0, bp.c1, bp.z0, bp.z1):
            _write_int(out, field)
    _write_int(out, proof.consistency_blinding)
    return bytes(out)


def deserialize_range_proof(data: bytes) -> RangeProof:
    if len(data) < 4:
        raise CommitmentError("truncated serialization")
    (width,) = struct.unpack_from("<I", data, 0)
    if width > 4096:
        raise CommitmentError("implausible proof width")
    off = 4
    bit_coms = []
    for _ in range(width):
        v, off = _read_int(data, off)
        bit_coms.append(Commitment(value=v))
    proofs = []
    for _ in range(width):
        fields = []
        for _ in range(6):
            v, off = _read_int(data, off)
            fields.append(v)
        proofs.append(BitProof(*fields))
    consistency, off = _read_int(data, off)
    if off != len(data):
        raise CommitmentError("trailing bytes after range proof")
    return RangeProof(
        bit_commitments=tuple(bit_coms),
        or_proofs=tuple(proofs),
        consistency_blinding=consistency,
    )


def range_proof_debug_json(proof: RangeProof) -> str:
    return json.dumps(
        {
            "bit_commitments": [format(bc.value, "x") for bc in proof.bit_commitments],
            "or_proofs": [
                {k: format(getattr(bp, k), "x") for k in ("a0", "a1", "c0", "c1", "z0", "z1")}
                for bp in proof.or_proofs
            ],
            "consistency_blinding": format(proof.consistency_blinding, "x"),
        },
        sort_keys=True,
    )
