import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datamarket import crypto
from datamarket.errors import CryptoError, DecryptionError

from sha256_ref import sha256_ref

SEED = bytes(range(32))


def test_keypair_deterministic():
    assert crypto.generate_keypair(SEED) == crypto.generate_keypair(SEED)


def test_distinct_seeds_distinct_keys():
    other = bytes([1]) + SEED[1:]
    assert crypto.generate_keypair(SEED).public_key != crypto.generate_keypair(other).public_key


def test_bad_seed_length():
    with pytest.raises(CryptoError):
        crypto.generate_keypair(b"short")


def test_sign_verify_roundtrip():
    kp = crypto.generate_keypair(SEED)
    sig = crypto.sign(kp.secret_key, b"m")
    assert crypto.verify(kp.public_key, b"m", sig)


def test_verify_wrong_key_false():
    kp = crypto.generate_keypair(SEED)
    kp2 = crypto.generate_keypair(bytes([7]) * 32)
    sig = crypto.sign(kp.secret_key, b"m")
    assert not crypto.verify(kp2.public_key, b"m", sig)


def test_verify_mutated_message_false():
    kp = crypto.generate_keypair(SEED)
    sig = crypto.sign(kp.secret_key, b"message")
    assert not crypto.verify(kp.public_key, b"messagf", sig)


def test_verify_garbage_signature_never_crashes():
    kp = crypto.generate_keypair(SEED)
    assert not crypto.verify(kp.public_key, b"m", b"not-a-signature")
    assert not crypto.verify(kp.public_key, b"m", b"")


def test_address_deterministic_and_length():
    kp = crypto.generate_keypair(SEED)
    a1 = crypto.derive_address(kp.public_key)
    a2 = crypto.derive_address(kp.public_key)
    assert a1 == a2
    assert len(a1.bytes) == 20


def test_address_no_collisions_10k():
    seen = set()
    for i in range(10_000):
        kp = crypto.generate_keypair(i.to_bytes(32, "big"))
        seen.add(crypto.derive_address(kp.public_key).bytes)
    assert len(seen) == 10_000


def test_address_malformed_key():
    with pytest.raises(CryptoError):
        crypto.derive_address(b"\x00" * 10)


def test_commit_empty_known_answer():
    # FIPS 180-4 empty-input vector, cross-checked against the independent
    # reference implementation.
    c = crypto.commit(b"", b"", allow_empty=True)
    assert c.digest == sha256_ref(b"")
    assert c.hex == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_commit_matches_reference_on_random_pairs():
    for _ in range(100):
        salt, data = os.urandom(32), os.urandom(24)
        assert crypto.commit(salt, data).digest == sha256_ref(salt + data)


def test_commit_roundtrip():
    salt, data = os.urandom(32), b"payload"
    assert crypto.verify_commitment(salt, data, crypto.commit(salt, data))


def test_commit_rejects_empty_and_bad_salt():
    with pytest.raises(CryptoError):
        crypto.commit(b"\x00" * 31, b"data")
    with pytest.raises(CryptoError):
        crypto.commit(b"\x00" * 32, b"")


def test_all_single_bit_flips_fail():
    salt, data = os.urandom(32), os.urandom(8)
    c = crypto.commit(salt, data)
    for byte in range(8):
        for bit in range(8):
            mutated = bytearray(data)
            mutated[byte] ^= 1 << bit
            assert not crypto.verify_commitment(salt, bytes(mutated), c)


def test_salt_flip_fails():
    salt, data = os.urandom(32), os.urandom(8)
    c = crypto.commit(salt, data)
    bad_salt = bytes([salt[0] ^ 1]) + salt[1:]
    assert not crypto.verify_commitment(bad_salt, data, c)


def test_encrypt_decrypt_roundtrip():
    kp = crypto.generate_keypair(SEED)
    ct = crypto.encrypt_for(kp.public_key, b"secret payload")
    assert crypto.decrypt(kp.secret_key, ct) == b"secret payload"


def test_decrypt_wrong_key_fails():
    kp = crypto.generate_keypair(SEED)
    other = crypto.generate_keypair(bytes([9]) * 32)
    ct = crypto.encrypt_for(kp.public_key, b"secret")
    with pytest.raises(DecryptionError):
        crypto.decrypt(other.secret_key, ct)


def test_tampered_ciphertext_fails():
    kp = crypto.generate_keypair(SEED)
    ct = bytearray(crypto.encrypt_for(kp.public_key, b"secret"))
    ct[40] ^= 1
    with pytest.raises(DecryptionError):
        crypto.decrypt(kp.secret_key, bytes(ct))


def test_encrypt_deterministic_with_entropy():
    kp = crypto.generate_keypair(SEED)
    entropy = os.urandom(32)
    assert crypto.encrypt_for(kp.public_key, b"x", entropy) == crypto.encrypt_for(
        kp.public_key, b"x", entropy
    )


@given(st.binary(min_size=32, max_size=32), st.binary(min_size=0, max_size=256))
@settings(max_examples=50)
def test_sign_verify_property(seed, message):
    kp = crypto.generate_keypair(seed)
    assert crypto.verify(kp.public_key, message, crypto.sign(kp.secret_key, message))


@given(st.binary(min_size=32, max_size=32), st.binary(min_size=1, max_size=256))
@settings(max_examples=50)
def test_encrypt_decrypt_property(seed, plaintext):
    kp = crypto.generate_keypair(seed)
    assert crypto.decrypt(kp.secret_key, crypto.encrypt_for(kp.public_key, plaintext)) == plaintext


@given(st.binary(min_size=32, max_size=32), st.binary(min_size=1, max_size=128))
@settings(max_examples=50)
def test_commitment_property(salt, data):
    c = crypto.commit(salt, data)
    assert crypto.verify_commitment(salt, data, c)
    assert c.digest == sha256_ref(salt + data)
