import math
import random
from fractions import Fraction
from itertools import combinations

import pytest

from fairaudit import crypto


@pytest.fixture(scope="module")
def keypair():
    return crypto.keygen(512, random.Random(7))


def enc_dec(pk, sk, raw, rng, scale=1):
    pt = crypto.EncodedPlaintext(raw=raw % pk.modulus, scale=scale)
    return crypto.decrypt(sk, crypto.encrypt(pk, pt, rng), scale).raw


class TestKeygen:
    def test_round_trip_identity(self, keypair):
        pk, sk = keypair
        rng = random.Random(0)
        assert enc_dec(pk, sk, 123, rng) == 123

    def test_deterministic_given_seed(self):
        pk1, _ = crypto.keygen(512, random.Random(7))
        pk2, _ = crypto.keygen(512, random.Random(7))
        assert pk1.modulus == pk2.modulus

    def test_production_key_size(self):
        pk, sk = crypto.keygen(2048, random.Random(1))
        assert pk.modulus.bit_length() in (2047, 2048)
        rng = random.Random(3)
        assert enc_dec(pk, sk, 2**64 + 5, rng) == 2**64 + 5

    def test_rejects_small_keys(self):
        with pytest.raises(crypto.CryptoError):
            crypto.keygen(128, random.Random(0))

    def test_rejects_odd_bits(self):
        with pytest.raises(crypto.CryptoError):
            crypto.keygen(513, random.Random(0))

    def test_mu_inverts_l_of_g_lambda(self, keypair):
        pk, sk = keypair
        u = crypto.powmod(pk.generator, sk.lam, pk.modulus_sq)
        l_val = (u - 1) // pk.modulus
        assert l_val * sk.mu % pk.modulus == 1

    def test_key_json_round_trip(self, keypair):
        pk, sk = keypair
        assert crypto.PublicKey.from_json(pk.to_json()) == pk
        assert crypto.SecretKey.from_json(sk.to_json()) == sk


class TestEncoding:
    def test_zero(self, keypair):
        pk, _ = keypair
        assert crypto.encode(pk, 0, 1000).raw == 0

    def test_negative_maps_to_high_residue(self, keypair):
        pk, _ = keypair
        assert crypto.encode(pk, -1.5, 1000).raw == pk.modulus - 1500

    def test_round_trip(self, keypair):
        pk, _ = keypair
        pt = crypto.encode(pk, 3.25, 100)
        assert crypto.decode(pk, pt) == Fraction(13, 4)

    def test_additivity(self, keypair):
        pk, _ = keypair
        rng = random.Random(11)
        for _ in range(50):
            a = Fraction(rng.randrange(-10**6, 10**6), 1000)
            b = Fraction(rng.randrange(-10**6, 10**6), 1000)
            ea = crypto.encode(pk, a, 1000)
            eb = crypto.encode(pk, b, 1000)
            summed = crypto.EncodedPlaintext(
                raw=(ea.raw + eb.raw) % pk.modulus, scale=1000
            )
            assert crypto.decode(pk, summed) == a + b

    def test_overflow_detected(self, keypair):
        pk, _ = keypair
        with pytest.raises(crypto.EncodingOverflowError):
            crypto.encode(pk, Fraction(pk.modulus, 2), 1)


class TestEncryptDecrypt:
    def test_round_trip_fresh_randomness(self, keypair):
        pk, sk = keypair
        rng = random.Random(42)
        pt = crypto.EncodedPlaintext(raw=42, scale=1)
        c1 = crypto.encrypt(pk, pt, rng)
        c2 = crypto.encrypt(pk, pt, rng)
        assert c1.value != c2.value
        assert crypto.decrypt(sk, c1).raw == 42
        assert crypto.decrypt(sk, c2).raw == 42

    def test_zero(self, keypair):
        pk, sk = keypair
        rng = random.Random(5)
        assert enc_dec(pk, sk, 0, rng) == 0

    def test_negative_encoding(self, keypair):
        pk, sk = keypair
        rng = random.Random(6)
        pt = crypto.encode(pk, -7, 1)
        c = crypto.encrypt(pk, pt, rng)
        assert crypto.decode(pk, crypto.decrypt(sk, c)) == -7

    def test_random_64bit(self, keypair):
        pk, sk = keypair
        rng = random.Random(8)
        m = rng.getrandbits(64)
        assert enc_dec(pk, sk, m, rng) == m

    def test_seeded_round_trips(self, keypair):
        # module invariant: decrypt . encrypt = identity over many plaintexts
        pk, sk = keypair
        rng = random.Random(99)
        for _ in range(200):
            m = rng.randrange(pk.modulus)
            assert enc_dec(pk, sk, m, rng) == m


class TestHomomorphicAddition:
    def test_seventeen_plus_twentyfive(self, keypair):
        pk, sk = keypair
        rng = random.Random(1)
        a = crypto.encrypt(pk, crypto.EncodedPlaintext(17, 1), rng)
        b = crypto.encrypt(pk, crypto.EncodedPlaintext(25, 1), rng)
        assert crypto.decrypt(sk, crypto.add_ct(pk, a, b)).raw == 42

    def test_identity_element(self, keypair):
        pk, sk = keypair
        rng = random.Random(2)
        m = crypto.encrypt(pk, crypto.EncodedPlaintext(777, 1), rng)
        z = crypto.encrypt(pk, crypto.EncodedPlaintext(0, 1), rng)
        assert crypto.decrypt(sk, crypto.add_ct(pk, m, z)).raw == 777

    def test_fold_of_fifty_counts(self, keypair):
        pk, sk = keypair
        rng = random.Random(3)
        counts = [rng.randrange(10**6) for _ in range(50)]
        expected = sum(counts)  # plain integer summation oracle
        acc = crypto.encrypt(pk, crypto.EncodedPlaintext(counts[0], 1), rng)
        for c in counts[1:]:
            acc = crypto.add_ct(pk, acc, crypto.encrypt(pk, crypto.EncodedPlaintext(c, 1), rng))
        assert crypto.decrypt(sk, acc).raw == expected

    def test_random_pairs(self, keypair):
        pk, sk = keypair
        rng = random.Random(4)
        for _ in range(100):
            a = rng.randrange(2**64)
            b = rng.randrange(2**64)
            ca = crypto.encrypt(pk, crypto.EncodedPlaintext(a, 1), rng)
            cb = crypto.encrypt(pk, crypto.EncodedPlaintext(b, 1), rng)
            assert crypto.decrypt(sk, crypto.add_ct(pk, ca, cb)).raw == a + b

    def test_key_mismatch_rejected(self, keypair):
        pk, _ = keypair
        pk2, _ = crypto.keygen(512, random.Random(1234))
        rng = random.Random(5)
        a = crypto.encrypt(pk, crypto.EncodedPlaintext(1, 1), rng)
        b = crypto.encrypt(pk2, crypto.EncodedPlaintext(1, 1), rng)
        with pytest.raises(crypto.KeyMismatchError):
            crypto.add_ct(pk, a, b)


class TestThreshold:
    def test_degenerate_single_share(self, keypair):
        pk, sk = keypair
        shares = crypto.share_key(sk, 1, 1, random.Random(0))
        d = crypto._decryption_exponent(sk)
        assert shares[0].share_value == d % shares[0].share_modulus

    def test_degenerate_equals_plain_decryption(self, keypair):
        pk, sk = keypair
        rng = random.Random(1)
        shares = crypto.share_key(sk, 1, 1, rng)
        c = crypto.encrypt(pk, crypto.EncodedPlaintext(314159, 1), rng)
        part = crypto.partial_decrypt(shares[0], c)
        assert crypto.combine(pk, [part]).raw == crypto.decrypt(sk, c).raw == 314159

    def test_three_of_five_subsets_agree(self, keypair):
        pk, sk = keypair
        rng = random.Random(2)
        shares = crypto.share_key(sk, 3, 5, rng)
        # direct Lagrange reconstruction oracle at x=0 (factorial-scaled)
        values = {
            crypto.reconstruct_exponent(list(sub))
            for sub in combinations(shares, 3)
        }
        assert len(values) == 1
        d = crypto._decryption_exponent(sk)
        delta = math.factorial(5)
        assert values.pop() == delta * d % shares[0].share_modulus

    def test_below_threshold_refused(self, keypair):
        _, sk = keypair
        shares = crypto.share_key(sk, 3, 5, random.Random(3))
        with pytest.raises(crypto.ThresholdError):
            crypto.reconstruct_exponent(shares[:2])

    def test_combine_matches_direct_decrypt(self, keypair):
        pk, sk = keypair
        rng = random.Random(4)
        shares = crypto.share_key(sk, 2, 3, rng)
        c = crypto.encrypt(pk, crypto.EncodedPlaintext(123456789, 1), rng)
        for subset in ([0, 2], [1, 2]):
            parts = [crypto.partial_decrypt(shares[i], c) for i in subset]
            assert crypto.combine(pk, parts).raw == crypto.decrypt(sk, c).raw

    def test_insufficient_parts_error(self, keypair):
        pk, sk = keypair
        rng = random.Random(5)
        shares = crypto.share_key(sk, 2, 3, rng)
        c = crypto.encrypt(pk, crypto.EncodedPlaintext(1, 1), rng)
        with pytest.raises(crypto.ThresholdError):
            crypto.combine(pk, [crypto.partial_decrypt(shares[0], c)])

    def test_duplicate_index_error(self, keypair):
        pk, sk = keypair
        rng = random.Random(6)
        shares = crypto.share_key(sk, 2, 3, rng)
        c = crypto.encrypt(pk, crypto.EncodedPlaintext(1, 1), rng)
        p = crypto.partial_decrypt(shares[0], c)
        with pytest.raises(crypto.ThresholdError):
            crypto.combine(pk, [p, p])

    def test_k_greater_than_n_rejected(self, keypair):
        _, sk = keypair
        with pytest.raises(crypto.ThresholdError):
            crypto.share_key(sk, 4, 3, random.Random(0))

    def test_all_kn_combinations_small(self, keypair):
        # threshold equivalence across every (k, n) with n <= 5 in unit tests;
        # the acceptance suite extends this to n <= 7
        pk, sk = keypair
        rng = random.Random(7)
        c = crypto.encrypt(pk, crypto.EncodedPlaintext(987654321, 1), rng)
        expected = crypto.decrypt(sk, c).raw
        for n in range(1, 6):
            for k in range(1, n + 1):
                shares = crypto.share_key(sk, k, n, rng)
                for sub in combinations(shares, k):
                    parts = [crypto.partial_decrypt(s, c) for s in sub]
                    assert crypto.combine(pk, parts).raw == expected

    def test_share_json_round_trip(self, keypair):
        _, sk = keypair
        shares = crypto.share_key(sk, 2, 3, random.Random(8))
        assert crypto.shares_from_json(crypto.shares_to_json(shares)) == shares
