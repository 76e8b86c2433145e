"""Additively homomorphic cryptosystem with threshold decryption.

Implements a Paillier-style scheme (modulus n = p*q, generator n + 1,
ciphertexts mod n^2) together with a signed fixed-point plaintext encoding
and k-of-n threshold decryption via polynomial sharing of the decryption
exponent, recombined in the exponent with factorial-scaled integer
Lagrange coefficients.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction

import gmpy2

MIN_KEY_BITS = 256
DEFAULT_FIXED_POINT_SCALE = 10**6
MILLER_RABIN_ROUNDS = 40

_SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]


class CryptoError(Exception):
    """Base class for cryptosystem failures."""


class KeyMismatchError(CryptoError):
    """Ciphertexts combined under different keys."""


class EncodingOverflowError(CryptoError):
    """Encoded value exceeds the headroom reserved for aggregation."""


class ThresholdError(CryptoError):
    """Threshold decryption invoked with an insufficient or invalid share set."""


def powmod(base: int, exp: int, mod: int) -> int:
    # gmpy2 handles negative exponents via modular inversion
    return int(gmpy2.powmod(base, exp, mod))


def invert(a: int, mod: int) -> int:
    return int(gmpy2.invert(a, mod))


def is_probable_prime(n: int, rng: random.Random, rounds: int = MILLER_RABIN_ROUNDS) -> bool:
    """Miller-Rabin with seeded witnesses; error probability < 4^-rounds."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = powmod(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def generate_prime(bits: int, rng: random.Random) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if is_probable_prime(candidate, rng):
            return candidate


@dataclass(frozen=True)
class PublicKey:
    modulus: int
    key_bits: int

    @property
    def generator(self) -> int:
        return self.modulus + 1

    @property
    def modulus_sq(self) -> int:
        return self.modulus * self.modulus

    def to_json(self) -> str:
        return json.dumps(
            {"modulus": format(self.modulus, "x"), "key_bits": self.key_bits},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, data: str) -> "PublicKey":
        obj = json.loads(data)
        return cls(modulus=int(obj["modulus"], 16), key_bits=int(obj["key_bits"]))


@dataclass(frozen=True)
class SecretKey:
    modulus: int
    lam: int
    mu: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "modulus": format(self.modulus, "x"),
                "lambda": format(self.lam, "x"),
                "mu": format(self.mu, "x"),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, data: str) -> "SecretKey":
        obj = json.loads(data)
        return cls(
            modulus=int(obj["modulus"], 16),
            lam=int(obj["lambda"], 16),
            mu=int(obj["mu"], 16),
        )


@dataclass(frozen=True)
class KeyShare:
    index: int
    share_value: int
    threshold_k: int
    party_count_n: int
    public_modulus: int
    share_modulus: int


@dataclass(frozen=True)
class PartialDecryption:
    index: int
    value: int
    threshold_k: int
    party_count_n: int


@dataclass(frozen=True)
class Ciphertext:
    value: int
    modulus: int


@dataclass(frozen=True)
class EncodedPlaintext:
    raw: int
    scale: int


def keygen(key_bits: int, rng: random.Random) -> tuple[PublicKey, SecretKey]:
    """Generate a key pair with a modulus of key_bits (or key_bits - 1) bits.

    Deterministic given the rng state. Rejects key_bits below 256: that
    floor is insecure even for testing.
    """
    if key_bits < MIN_KEY_BITS:
        raise CryptoError(f"key_bits must be >= {MIN_KEY_BITS}, got {key_bits}")
    if key_bits % 2 != 0:
        raise CryptoError("key_bits must be even")
    half = key_bits // 2
    p = generate_prime(half, rng)
    while True:
        q = generate_prime(half, rng)
        if q != p:
            break
    n = p * q
    lam = math.lcm(p - 1, q - 1)
    # with g = n + 1: L(g^lam mod n^2) = lam mod n
    mu = invert(lam % n, n)
    return PublicKey(modulus=n, key_bits=key_bits), SecretKey(modulus=n, lam=lam, mu=mu)


def encode(pk: PublicKey, value, scale: int = DEFAULT_FIXED_POINT_SCALE) -> EncodedPlaintext:
    """Encode a signed rational as a fixed-point residue mod the modulus.

    Values above modulus/2 decode as negative. A headroom factor of 4 is
    enforced so that sums of many encoded terms cannot wrap silently.
    """
    if scale <= 0:
        raise CryptoError("scale must be positive")
    if isinstance(value, Fraction):
        scaled = round(value * scale)
    else:
        scaled = round(value * scale)
    if abs(scaled) >= pk.modulus // 4:
        raise EncodingOverflowError(
            f"|value|*scale = {abs(scaled)} exceeds modulus/4 headroom"
        )
    return EncodedPlaintext(raw=scaled % pk.modulus, scale=scale)


def decode(pk: PublicKey, pt: EncodedPlaintext) -> Fraction:
    raw = pt.raw
    if raw > pk.modulus // 2:
        raw -= pk.modulus
    return Fraction(raw, pt.scale)


def encode_raw_signed(pk: PublicKey, scaled: int, scale: int) -> EncodedPlaintext:
    """Encode an already-scaled signed integer without re-rounding."""
    if abs(scaled) >= pk.modulus // 4:
        raise EncodingOverflowError("scaled value exceeds modulus/4 headroom")
    return EncodedPlaintext(raw=scaled % pk.modulus, scale=scale)


def encrypt(pk: PublicKey, pt: EncodedPlaintext, rng: random.Random) -> Ciphertext:
    """Probabilistic encryption: g^raw * r^n mod n^2 with fresh r."""
    n = pk.modulus
    nsq = pk.modulus_sq
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            break
    # g = n + 1, so g^raw = 1 + raw*n mod n^2
    g_m = (1 + pt.raw * n) % nsq
    c = g_m * powmod(r, n, nsq) % nsq
    return Ciphertext(value=c, modulus=n)


def add_ct(pk: PublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    if a.modulus != b.modulus or a.modulus != pk.modulus:
        raise KeyMismatchError("ciphertexts are not under the same public key")
    return Ciphertext(value=a.value * b.value % pk.modulus_sq, modulus=pk.modulus)


def _l_function(u: int, n: int) -> int:
    return (u - 1) // n


def decrypt(sk: SecretKey, c: Ciphertext, scale: int = 1) -> EncodedPlaintext:
    if c.modulus != sk.modulus:
        raise KeyMismatchError("ciphertext is not under this secret key")
    n = sk.modulus
    nsq = n * n
    u = powmod(c.value, sk.lam, nsq)
    raw = _l_function(u, n) * sk.mu % n
    return EncodedPlaintext(raw=raw, scale=scale)


def _decryption_exponent(sk: SecretKey) -> int:
    """CRT exponent d with d = 0 mod lambda and d = 1 mod n.

    For ciphertext c: c^d = (1+n)^(m*d) mod n^2 since the r^n component is
    annihilated, and m*d = m mod n, so L(c^d) recovers m directly.
    """
    n = sk.modulus
    return sk.lam * invert(sk.lam % n, n)


def share_key(sk: SecretKey, k: int, n_parties: int, rng: random.Random) -> list[KeyShare]:
    """Split the decryption exponent into n shares with threshold k.

    Shamir polynomial over Z_(n*lambda); recombination happens in the
    exponent with integer Lagrange coefficients scaled by n_parties!.
    """
    if k < 1 or n_parties < 1:
        raise ThresholdError("k and n must be >= 1")
    if k > n_parties:
        raise ThresholdError(f"threshold k={k} exceeds party count n={n_parties}")
    d = _decryption_exponent(sk)
    share_mod = sk.modulus * sk.lam
    coeffs = [d % share_mod] + [rng.randrange(share_mod) for _ in range(k - 1)]
    shares = []
    for i in range(1, n_parties + 1):
        acc = 0
        for coeff in reversed(coeffs):
            acc = (acc * i + coeff) % share_mod
        shares.append(
            KeyShare(
                index=i,
                share_value=acc,
                threshold_k=k,
                party_count_n=n_parties,
                public_modulus=sk.modulus,
                share_modulus=share_mod,
            )
        )
    return shares


def _lagrange_at_zero(indices: list[int], party_count: int) -> dict[int, int]:
    """Integer Lagrange coefficients at x=0, scaled by party_count!."""
    delta = math.factorial(party_count)
    coeffs = {}
    for i in indices:
        num, den = 1, 1
        for j in indices:
            if j != i:
                num *= -j
                den *= i - j
        scaled = Fraction(delta * num, den)
        assert scaled.denominator == 1, "factorial scaling must clear denominators"
        coeffs[i] = int(scaled)
    return coeffs


def reconstruct_exponent(shares: list[KeyShare]) -> int:
    """Recombine shares to the factorial-scaled exponent: n! * d mod (n*lambda).

    Any k-subset yields the same value; fewer than k shares are refused.
    Test oracle counterpart of combine().
    """
    if not shares:
        raise ThresholdError("no shares supplied")
    k = shares[0].threshold_k
    indices = [s.index for s in shares]
    if len(set(indices)) != len(indices):
        raise ThresholdError("duplicate share indices")
    if len(shares) < k:
        raise ThresholdError(f"need at least {k} shares, got {len(shares)}")
    subset = shares[:k]
    coeffs = _lagrange_at_zero([s.index for s in subset], subset[0].party_count_n)
    share_mod = subset[0].share_modulus
    acc = 0
    for s in subset:
        acc = (acc + coeffs[s.index] * s.share_value) % share_mod
    return acc


def partial_decrypt(share: KeyShare, c: Ciphertext) -> PartialDecryption:
    if c.modulus != share.public_modulus:
        raise KeyMismatchError("ciphertext is not under this key share")
    nsq = share.public_modulus ** 2
    return PartialDecryption(
        index=share.index,
        value=powmod(c.value, share.share_value, nsq),
        threshold_k=share.threshold_k,
        party_count_n=share.party_count_n,
    )


def combine(
    pk: PublicKey,
    parts: list[PartialDecryption],
    scale: int = 1,
) -> EncodedPlaintext:
    """Combine k partial decryptions into the plaintext.

    The product of parts raised to the scaled Lagrange coefficients equals
    c^(n_parties! * d); dividing L(.) by n_parties! mod n recovers the raw
    plaintext exactly as direct decryption would.
    """
    if not parts:
        raise ThresholdError("no partial decryptions supplied")
    k = parts[0].threshold_k
    indices = [p.index for p in parts]
    if len(set(indices)) != len(indices):
        raise ThresholdError("duplicate partial-decryption indices")
    if len(parts) < k:
        raise ThresholdError(
            f"insufficient shares: need {k}, got {len(parts)}"
        )
    subset = parts[:k]
    party_count = subset[0].party_count_n
    coeffs = _lagrange_at_zero([p.index for p in subset], party_count)
    n = pk.modulus
    nsq = pk.modulus_sq
    combined = 1
    for p in subset:
        combined = combined * powmod(p.value, coeffs[p.index], nsq) % nsq
    delta = math.factorial(party_count)
    raw = _l_function(combined, n) * invert(delta % n, n) % n
    return EncodedPlaintext(raw=raw, scale=scale)


def shares_to_json(shares: list[KeyShare]) -> str:
    return json.dumps(
        {
            "shares": [
                {
                    "index": s.index,
                    "share_value": format(s.share_value, "x"),
                    "threshold_k": s.threshold_k,
                    "party_count_n": s.party_count_n,
                    "public_modulus": format(s.public_modulus, "x"),
                    "share_modulus": format(s.share_modulus, "x"),
                }
                for s in shares
            ]
        },
        sort_keys=True,
    )


def shares_from_json(data: str) -> list[KeyShare]:
    obj = json.loads(data)
    return [
        KeyShare(
            index=int(s["index"]),
            share_value=int(s["share_value"], 16),
            threshold_k=int(s["threshold_k"]),
            party_count_n=int(s["party_count_n"]),
            public_modulus=int(s["public_modulus"], 16),
            share_modulus=int(s["share_modulus"], 16),
        )
        for s in obj["shares"]
    ]
