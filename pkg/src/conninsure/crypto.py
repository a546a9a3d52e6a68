"""Cryptographic primitives: the standard signature scheme, the two hash
oracles, the chameleon hash/signature construction, and the Schnorr-style
proof of trapdoor knowledge.

All group arithmetic happens in a prime-order subgroup of Z_p^*.  The hot
kernel is modular exponentiation; it runs on gmpy2 when available and on
built-in pow() otherwise.  Set CONNINSURE_PURE_MODEXP=1 to force the pure
path (the benchmark CLI reports both).
"""

import hashlib
import os
from dataclasses import dataclass

from .errors import KeyFormatError, ParameterError
from .rand import DEFAULT, RandomSource

try:
    import gmpy2 as _gmpy2
except ImportError:  # pragma: no cover - environment without gmpy2
    _gmpy2 = None

_backend = "pure"
if _gmpy2 is not None and not os.environ.get("CONNINSURE_PURE_MODEXP"):
    _backend = "gmpy2"


def modexp_backend() -> str:
    return _backend


def use_pure_modexp(enabled: bool) -> None:
    """Select the modexp backend at runtime (used by the benchmark)."""
    global _backend
    if enabled or _gmpy2 is None:
        _backend = "pure"
    else:
        _backend = "gmpy2"


def modexp(base: int, exp: int, mod: int) -> int:
    if _backend == "gmpy2":
        return int(_gmpy2.powmod(base, exp, mod))
    return pow(base, exp, mod)


# ---------------------------------------------------------------------------
# Hash oracles
# ---------------------------------------------------------------------------
# One-byte domain-separation prefixes keep the two oracles disjoint: 0x68
# for the 32-byte collision-resistant hash, 0x48 for the 28-byte oracle that
# feeds TLS client randomness.

_H_PREFIX = b"\x68"
_H28_PREFIX = b"\x48"

HASH_LEN = 32
H28_LEN = 28


def hash_h(message: bytes) -> bytes:
    """Collision-resistant 32-byte hash."""
    return hashlib.sha256(_H_PREFIX + message).digest()


def hash_h28(message: bytes) -> bytes:
    """28-byte random-oracle hash, sized for TLS random_bytes."""
    return hashlib.sha256(_H28_PREFIX + message).digest()[:H28_LEN]


def prf(key: bytes, message: bytes) -> bytes:
    """Keyed PRF built from hash_h: PRF(k, m) = h(k || m)."""
    return hash_h(key + message)


# ---------------------------------------------------------------------------
# Standard signature scheme
# ---------------------------------------------------------------------------

SCHEME_ED25519 = 1
SCHEME_RSA_SHA256 = 2

SCHEME_NAMES = {SCHEME_ED25519: "ed25519", SCHEME_RSA_SHA256: "rsa-pkcs1-sha256"}


@dataclass(frozen=True)
class PublicKey:
    scheme_id: int
    data: bytes


@dataclass(frozen=True)
class SigKeyPair:
    public: PublicKey
    secret: bytes

    @property
    def scheme_id(self) -> int:
        return self.public.scheme_id


def _ed25519_private(secret: bytes):
    from cryptography.hazmat.primitives.asymmetric import ed25519

    if len(secret) != 32:
        raise KeyFormatError("ed25519 secret must be 32 bytes")
    return ed25519.Ed25519PrivateKey.from_private_bytes(secret)


def _rsa_private(secret: bytes):
    from cryptography.hazmat.primitives.serialization import load_der_private_key

    try:
        return load_der_private_key(secret, password=None)
    except (ValueError, TypeError) as exc:
        raise KeyFormatError(f"bad RSA secret key: {exc}") from exc


def generate_sig_keypair(
    scheme_id: int = SCHEME_ED25519, rng: RandomSource = DEFAULT
) -> SigKeyPair:
    from cryptography.hazmat.primitives import serialization

    if scheme_id == SCHEME_ED25519:
        secret = rng.bytes(32)
        priv = _ed25519_private(secret)
        pub = priv.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return SigKeyPair(PublicKey(SCHEME_ED25519, pub), secret)
    if scheme_id == SCHEME_RSA_SHA256:
        # RSA key generation draws from OS entropy; not seed-reproducible.
        from cryptography.hazmat.primitives.asymmetric import rsa

        priv = rsa.generate_private_key(public_exponent=65537, key_size=2048)
        secret = priv.private_bytes(
            serialization.Encoding.DER,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )
        pub = priv.public_key().public_bytes(
            serialization.Encoding.DER,
            serialization.PublicFormat.SubjectPublicKeyInfo,
        )
        return SigKeyPair(PublicKey(SCHEME_RSA_SHA256, pub), secret)
    raise KeyFormatError(f"unknown scheme id {scheme_id}")


def sign(keypair: SigKeyPair, message: bytes) -> bytes:
    """Sign message under the pair's scheme; both schemes are deterministic."""
    if keypair.scheme_id == SCHEME_ED25519:
        return _ed25519_private(keypair.secret).sign(message)
    if keypair.scheme_id == SCHEME_RSA_SHA256:
        from cryptography.hazmat.primitives import hashes
        from cryptography.hazmat.primitives.asymmetric import padding

        return _rsa_private(keypair.secret).sign(
            message, padding.PKCS1v15(), hashes.SHA256()
        )
    raise KeyFormatError(f"unknown scheme id {keypair.scheme_id}")


def verify(public: PublicKey, message: bytes, signature: bytes) -> bool:
    from cryptography.exceptions import InvalidSignature

    try:
        if public.scheme_id == SCHEME_ED25519:
            from cryptography.hazmat.primitives.asymmetric import ed25519

            ed25519.Ed25519PublicKey.from_public_bytes(public.data).verify(
                signature, message
            )
            return True
        if public.scheme_id == SCHEME_RSA_SHA256:
            from cryptography.hazmat.primitives import hashes
            from cryptography.hazmat.primitives.asymmetric import padding
            from cryptography.hazmat.primitives.serialization import (
                load_der_public_key,
            )

            load_der_public_key(public.data).verify(
                signature, message, padding.PKCS1v15(), hashes.SHA256()
            )
            return True
    except (InvalidSignature, ValueError):
        return False
    raise KeyFormatError(f"unknown scheme id {public.scheme_id}")


# ---------------------------------------------------------------------------
# Group parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupParams:
    """Prime-order subgroup of Z_p^*: q | p-1, g generates the order-q group."""

    p: int
    q: int
    g: int

    def validate(self) -> None:
        if (self.p - 1) % self.q != 0:
            raise ParameterError("q does not divide p-1")
        if self.g in (0, 1) or modexp(self.g, self.q, self.p) != 1:
            raise ParameterError("g does not generate the order-q subgroup")

    @property
    def element_len(self) -> int:
        return (self.p.bit_length() + 7) // 8

    def element_bytes(self, value: int) -> bytes:
        return value.to_bytes(self.element_len, "big")


def _parse_hex(blob: str) -> int:
    return int(blob.replace(" ", "").replace("\n", ""), 16)


# 2048-bit modulus with a 256-bit prime-order subgroup (RFC 5114 group 23).
GROUP_2048_256 = GroupParams(
    p=_parse_hex(
        """
        87A8E61D B4B6663C FFBBD19C 65195999 8CEEF608 660DD0F2 5D2CEED4 435E3B00
        E00DF8F1 D61957D4 FAF7DF45 61B2AA30 16C3D911 34096FAA 3BF4296D 830E9A7C
        209E0C64 97517ABD 5A8A9D30 6BCF67ED 91F9E672 5B4758C0 22E0B1EF 4275BF7B
        6C5BFC11 D45F9088 B941F54E B1E59BB8 BC39A0BF 12307F5C 4FDB70C5 81B23F76
        B63ACAE1 CAA6B790 2D525267 35488A0E F13C6D9A 51BFA4AB 3AD83477 96524D8E
        F6A167B5 A41825D9 67E144E5 14056425 1CCACB83 E6B486F6 B3CA3F79 71506026
        C0B857F6 89962856 DED4010A BD0BE621 C3A3960A 54E710C3 75F26375 D7014103
        A4B54330 C198AF12 6116D227 6E11715F 693877FA D7EF09CA DB094AE9 1E1A1597
        """
    ),
    q=_parse_hex("8CF83642 A709A097 B4479976 40129DA2 99B1A47D 1EB3750B A308B0FE 64F5FBD3"),
    g=_parse_hex(
        """
        3FB32C9B 73134D0B 2E775066 60EDBD48 4CA7B18F 21EF2054 07F4793A 1A0BA125
        10DBC150 77BE463F FF4FED4A AC0BB555 BE3A6C1B 0C6B47B1 BC3773BF 7E8C6F62
        901228F8 C28CBB18 A55AE313 41000A65 0196F931 C77A57F2 DDF463E5 E9EC144B
        777DE62A AAB8A862 8AC376D2 82D6ED38 64E67982 428EBC83 1D14348F 6F2F9193
        B5045AF2 767164E1 DFC967C1 FB3F2E55 A4BD1BFF E83B9C80 D052B985 D182EA0A
        DB2A3B73 13D3FE14 C8484B1E 052588B9 B7D2BBD2 DF016199 ECD06E15 57CD0915
        B3353BBB 64E0EC37 7FD02837 0DF92B52 C7891428 CDC67EB6 184B523D 1DB246C3
        2F630784 90F00EF8 D647D148 D4795451 5E2327CF EF98C582 664B4C0F 6CC41659
        """
    ),
)

# Tiny group for algebra tests; offers no security.
TOY_GROUP = GroupParams(p=23, q=11, g=4)


# ---------------------------------------------------------------------------
# Chameleon hash and signatures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChameleonPublicKey:
    params: GroupParams
    y: int


@dataclass(frozen=True)
class ChameleonKeyPair:
    """Trapdoor x is held by the signature recipient only; y = g^x mod p."""

    params: GroupParams
    x: int
    y: int

    @property
    def public(self) -> ChameleonPublicKey:
        return ChameleonPublicKey(self.params, self.y)


def generate_chameleon_keypair(
    params: GroupParams, rng: RandomSource = DEFAULT
) -> ChameleonKeyPair:
    x = 1 + rng.below(params.q - 1)
    return ChameleonKeyPair(params, x, modexp(params.g, x, params.p))


def message_exponent(params: GroupParams, message: bytes) -> int:
    """h(m) as a big-endian integer reduced mod q."""
    return int.from_bytes(hash_h(message), "big") % params.q


def chameleon_hash(params: GroupParams, y: int, message: bytes, r: int) -> int:
    """CH(m, r) = g^{h(m)} * y^r mod p."""
    if not 0 <= r < params.q:
        raise ParameterError("chameleon randomizer out of range")
    e = message_exponent(params, message)
    return modexp(params.g, e, params.p) * modexp(y, r, params.p) % params.p


def find_collision(
    kp: ChameleonKeyPair, message: bytes, r: int, new_message: bytes
) -> int:
    """Trapdoor collision: r' with CH(m', r') = CH(m, r).

    Solves h(m) + x*r = h(m') + x*r' mod q for r'.
    """
    if not 0 <= r < kp.params.q:
        raise ParameterError("chameleon randomizer out of range")
    if kp.x % kp.params.q == 0:
        raise KeyFormatError("trapdoor is not invertible")
    e_old = message_exponent(kp.params, message)
    e_new = message_exponent(kp.params, new_message)
    x_inv = pow(kp.x, -1, kp.params.q)
    return (e_old - e_new + kp.x * r) * x_inv % kp.params.q


@dataclass(frozen=True)
class ChameleonSignature:
    """(r, standard signature over h(CH || context), context).

    The context carries the recipient's customer number and the payload
    label, so a signature never verifies for another recipient.
    """

    r: int
    inner_sig: bytes
    context: bytes


def _chameleon_digest(params: GroupParams, ch: int, context: bytes) -> bytes:
    return hash_h(params.element_bytes(ch) + context)


def chameleon_sign(
    signer: SigKeyPair,
    recipient: ChameleonPublicKey,
    message: bytes,
    context: bytes,
    rng: RandomSource = DEFAULT,
) -> ChameleonSignature:
    """Sign message toward one recipient; convincing only to them.

    Callers with record-keeping duties (the insurer) must log (message, r)
    so forged collisions can be uncovered later.
    """
    params = recipient.params
    r = rng.below(params.q)
    ch = chameleon_hash(params, recipient.y, message, r)
    inner = sign(signer, _chameleon_digest(params, ch, context))
    return ChameleonSignature(r, inner, context)


def chameleon_verify(
    signer_pub: PublicKey,
    recipient: ChameleonPublicKey,
    message: bytes,
    sig: ChameleonSignature,
    context: bytes | None = None,
) -> bool:
    """Accept iff the inner signature covers h(CH(m, r) || context)."""
    if context is not None and sig.context != context:
        return False
    params = recipient.params
    if not 0 <= sig.r < params.q:
        return False
    ch = chameleon_hash(params, recipient.y, message, sig.r)
    return verify(signer_pub, _chameleon_digest(params, ch, sig.context), sig.inner_sig)


# ---------------------------------------------------------------------------
# Proof of trapdoor knowledge (Schnorr, Fiat-Shamir)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrapdoorProof:
    u: int
    c: int
    z: int


def _trapdoor_challenge(
    params: GroupParams, y: int, u: int, context: bytes
) -> int:
    transcript = (
        b"trapdoor-proof:"
        + params.element_bytes(params.p)
        + params.element_bytes(params.q)
        + params.element_bytes(params.g)
        + params.element_bytes(y)
        + params.element_bytes(u)
        + context
    )
    return int.from_bytes(hash_h(transcript), "big") % params.q


def prove_trapdoor(
    kp: ChameleonKeyPair, context: bytes, rng: RandomSource = DEFAULT
) -> TrapdoorProof:
    """Non-interactive proof of knowledge of x with y = g^x, bound to context."""
    params = kp.params
    k = rng.below(params.q)
    u = modexp(params.g, k, params.p)
    c = _trapdoor_challenge(params, kp.y, u, context)
    z = (k + c * kp.x) % params.q
    return TrapdoorProof(u, c, z)


def verify_trapdoor(
    y: int, params: GroupParams, context: bytes, proof: TrapdoorProof
) -> bool:
    """Accept iff g^z = u * y^c mod p with c recomputed from the transcript."""
    if not (0 < proof.u < params.p and 0 <= proof.z < params.q):
        return False
    if proof.c != _trapdoor_challenge(params, y, proof.u, context):
        return False
    lhs = modexp(params.g, proof.z, params.p)
    rhs = proof.u * modexp(y, proof.c, params.p) % params.p
    return lhs == rhs
