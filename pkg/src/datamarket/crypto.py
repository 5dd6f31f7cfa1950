"""Key management, addresses, salted hash commitments, signatures, and the
hybrid encryption envelope for payload delivery.

Each identity carries two keys derived from one 32-byte seed: an Ed25519
signing key and an X25519 encryption key. Public key bytes are the
concatenation signing-pub (32) || encryption-pub (32); secret key bytes are
signing-seed (32) || encryption-priv (32). Addresses are the first 20 bytes
of SHA-256 over the public key bytes.

Envelopes are ECIES-style: an ephemeral X25519 key agreement, HKDF-SHA256
key derivation, and ChaCha20-Poly1305 for the payload. Tampering or a wrong
key raises DecryptionError.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature as _InvalidSignature
from cryptography.exceptions import InvalidTag as _InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import CryptoError, DecryptionError

SEED_LEN = 32
SALT_LEN = 32
ADDRESS_LEN = 20
PUBLIC_KEY_LEN = 64
SECRET_KEY_LEN = 64
DIGEST_LEN = 32

_ENC_SEED_INFO = b"datamarket-enc-key-v1"
_ENVELOPE_INFO = b"datamarket-envelope-v1"
_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_RAW_PRIV = serialization.PrivateFormat.Raw
_NOENC = serialization.NoEncryption()


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes


@dataclass(frozen=True, order=True)
class Address:
    bytes: bytes

    def __post_init__(self):
        if len(self.bytes) != ADDRESS_LEN:
            raise CryptoError(f"address must be {ADDRESS_LEN} bytes")

    @property
    def hex(self) -> str:
        return self.bytes.hex()

    def __repr__(self) -> str:
        return f"Address({self.hex})"


@dataclass(frozen=True)
class Commitment:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != DIGEST_LEN:
            raise CryptoError(f"commitment digest must be {DIGEST_LEN} bytes")

    @property
    def hex(self) -> str:
        return self.digest.hex()


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def generate_keypair(seed: bytes) -> KeyPair:
    """Deterministically derive a signing + encryption key pair from a seed."""
    if not isinstance(seed, (bytes, bytearray)) or len(seed) != SEED_LEN:
        raise CryptoError(f"seed must be {SEED_LEN} bytes")
    seed = bytes(seed)
    sign_sk = Ed25519PrivateKey.from_private_bytes(seed)
    enc_seed = sha256(seed + _ENC_SEED_INFO)
    enc_sk = X25519PrivateKey.from_private_bytes(enc_seed)
    public = (
        sign_sk.public_key().public_bytes(_RAW, _RAW_PUB)
        + enc_sk.public_key().public_bytes(_RAW, _RAW_PUB)
    )
    secret = seed + enc_seed
    return KeyPair(public_key=public, secret_key=secret)


def derive_address(public_key: bytes) -> Address:
    if len(public_key) != PUBLIC_KEY_LEN:
        raise CryptoError(f"public key must be {PUBLIC_KEY_LEN} bytes")
    return Address(sha256(public_key)[:ADDRESS_LEN])


def commit(salt: bytes, data: bytes, *, allow_empty: bool = False) -> Commitment:
    """SHA-256 over salt-prepended data.

    `allow_empty` exists for known-answer test vectors only; the production
    path requires a 32-byte salt and non-empty data.
    """
    if not allow_empty:
        if len(salt) != SALT_LEN:
            raise CryptoError(f"salt must be {SALT_LEN} bytes")
        if len(data) == 0:
            raise CryptoError("data must be non-empty")
    return Commitment(sha256(salt + data))


def verify_commitment(salt: bytes, data: bytes, commitment: Commitment) -> bool:
    return sha256(salt + data) == commitment.digest


def sign(secret_key: bytes, message: bytes) -> bytes:
    if len(secret_key) != SECRET_KEY_LEN:
        raise CryptoError(f"secret key must be {SECRET_KEY_LEN} bytes")
    return Ed25519PrivateKey.from_private_bytes(secret_key[:32]).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(public_key) != PUBLIC_KEY_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key[:32]).verify(signature, message)
        return True
    except (_InvalidSignature, ValueError, TypeError):
        return False


def _envelope_key(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=_ENVELOPE_INFO,
    ).derive(shared + eph_pub + recipient_pub)


def encrypt_for(public_key: bytes, plaintext: bytes, entropy: bytes | None = None) -> bytes:
    """Encrypt under the recipient's encryption key.

    `entropy` seeds the ephemeral key for reproducible transcripts; omit it
    for OS randomness. The nonce is fixed because each envelope uses a fresh
    ephemeral key.
    """
    if len(public_key) != PUBLIC_KEY_LEN:
        raise CryptoError(f"public key must be {PUBLIC_KEY_LEN} bytes")
    if len(plaintext) == 0:
        raise CryptoError("plaintext must be non-empty")
    eph_seed = entropy if entropy is not None else secrets.token_bytes(32)
    if len(eph_seed) != 32:
        raise CryptoError("entropy must be 32 bytes")
    eph_sk = X25519PrivateKey.from_private_bytes(eph_seed)
    recipient = X25519PublicKey.from_public_bytes(public_key[32:])
    eph_pub = eph_sk.public_key().public_bytes(_RAW, _RAW_PUB)
    key = _envelope_key(eph_sk.exchange(recipient), eph_pub, public_key[32:])
    ct = ChaCha20Poly1305(key).encrypt(b"\x00" * 12, plaintext, None)
    return eph_pub + ct


def decrypt(secret_key: bytes, envelope: bytes) -> bytes:
    if len(secret_key) != SECRET_KEY_LEN:
        raise CryptoError(f"secret key must be {SECRET_KEY_LEN} bytes")
    if len(envelope) < 32 + 16:
        raise DecryptionError("envelope too short")
    eph_pub, ct = envelope[:32], envelope[32:]
    enc_sk = X25519PrivateKey.from_private_bytes(secret_key[32:])
    my_pub = enc_sk.public_key().public_bytes(_RAW, _RAW_PUB)
    try:
        shared = enc_sk.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        key = _envelope_key(shared, eph_pub, my_pub)
        return ChaCha20Poly1305(key).decrypt(b"\x00" * 12, ct, None)
    except (_InvalidTag, ValueError) as exc:
        raise DecryptionError("envelope failed to authenticate") from exc
