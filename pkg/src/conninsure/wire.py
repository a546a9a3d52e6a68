"""Canonical tag-length-value encoding for every signed payload, protocol
message, and persisted artifact, plus the length-prefixed framing used on
the client-insurer channel.

Layout of one TLV item: tag (1 byte) || length (4-byte big-endian) || value.
Compound records nest TLV items in a fixed field order, so every encoding
is an injective function of the abstract value.
"""

import struct

from . import crypto
from .errors import EncodingError, ParameterError

# Tag table. Published so independent implementations can interoperate.
TAG_UINT = 0x01          # 8-byte big-endian unsigned integer
TAG_BYTES = 0x02         # opaque byte string
TAG_TEXT = 0x03          # ASCII text
TAG_INT = 0x05           # variable-length unsigned big-endian integer
TAG_LIST = 0x04          # concatenation of TLV items

TAG_SIGNED_PAYLOAD = 0x10
TAG_VOUCHER = 0x11
TAG_GROUP_PARAMS = 0x12
TAG_CHAMELEON_SIG = 0x13
TAG_TRAPDOOR_PROOF = 0x14
TAG_CONTRACT = 0x15
TAG_TRANSCRIPT = 0x16
TAG_EVIDENCE = 0x17
TAG_INCLUSION_PROOF = 0x18
TAG_CLAIM = 0x19
TAG_ROLLBACK_DELTA = 0x1A
TAG_CYCLE_RECORD = 0x1B
TAG_PUBKEY = 0x1C
TAG_CHAMELEON_PUB = 0x1D
TAG_PAIR = 0x1E

# Request/response endpoint ids for the framed channel.
REQ_REGISTER = 0x21
REQ_BEGIN_CYCLE = 0x22
REQ_ACK_CERTS = 0x23
REQ_SUBMIT_VOUCHERS = 0x24
REQ_LOOKUP_RECORD = 0x25
RESP_OK = 0x2E
RESP_ERR = 0x2F

# Persistence record tags.
LOG_SETUP = 0x31
LOG_REGISTER = 0x32
LOG_UPDATE_CERTS = 0x33
LOG_BEGIN_CYCLE = 0x34
LOG_ACK_CERTS = 0x35
LOG_SUBMIT_VOUCHERS = 0x36
LOG_SNAPSHOT = 0x37

_MAX_LEN = 0xFFFFFFFF

SIGNED_PAYLOAD_LABELS = ("Certificates", "Vouchers")
CYCLEID_LEN = 32
DIGEST_LEN = 32


def pack(tag: int, payload: bytes) -> bytes:
    if len(payload) > _MAX_LEN:
        raise EncodingError("payload too large for a 4-byte length")
    return bytes([tag]) + struct.pack(">I", len(payload)) + payload


def unpack(data: bytes, offset: int = 0) -> tuple[int, bytes, int]:
    """Decode one TLV item starting at offset; returns (tag, value, end)."""
    if offset + 5 > len(data):
        raise EncodingError("truncated TLV header")
    tag = data[offset]
    (length,) = struct.unpack_from(">I", data, offset + 1)
    end = offset + 5 + length
    if end > len(data):
        raise EncodingError("truncated TLV value")
    return tag, data[offset + 5 : end], end


def unpack_exact(data: bytes, expected_tag: int) -> bytes:
    """Decode a single TLV item that must span the whole buffer."""
    tag, value, end = unpack(data)
    if tag != expected_tag:
        raise EncodingError(f"expected tag 0x{expected_tag:02x}, got 0x{tag:02x}")
    if end != len(data):
        raise EncodingError("trailing bytes after TLV item")
    return value


def fields(payload: bytes, *expected_tags: int) -> list[bytes]:
    """Split a compound payload into exactly the expected ordered fields."""
    out = []
    offset = 0
    for want in expected_tags:
        tag, value, offset = unpack(payload, offset)
        if tag != want:
            raise EncodingError(f"expected field tag 0x{want:02x}, got 0x{tag:02x}")
        out.append(value)
    if offset != len(payload):
        raise EncodingError("trailing bytes after last field")
    return out


def iter_items(payload: bytes):
    offset = 0
    while offset < len(payload):
        tag, value, offset = unpack(payload, offset)
        yield tag, value


def u64(value: int) -> bytes:
    if not 0 <= value < 1 << 64:
        raise EncodingError("value out of u64 range")
    return struct.pack(">Q", value)


def decode_u64(data: bytes) -> int:
    if len(data) != 8:
        raise EncodingError("u64 field must be 8 bytes")
    return struct.unpack(">Q", data)[0]


def u32(value: int) -> bytes:
    if not 0 <= value < 1 << 32:
        raise EncodingError("value out of u32 range")
    return struct.pack(">I", value)


def varint(value: int) -> bytes:
    """Canonical unsigned big-endian integer: minimal length, 0 = empty."""
    if value < 0:
        raise EncodingError("negative integer")
    if value == 0:
        return b""
    return value.to_bytes((value.bit_length() + 7) // 8, "big")


def decode_varint(data: bytes) -> int:
    if data and data[0] == 0:
        raise EncodingError("non-minimal integer encoding")
    return int.from_bytes(data, "big")


def text(value: str) -> bytes:
    try:
        return value.encode("ascii")
    except UnicodeEncodeError as exc:
        raise EncodingError(f"non-ASCII text: {exc}") from exc


def decode_text(data: bytes) -> str:
    try:
        return data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"non-ASCII text field: {exc}") from exc


def encode_list(items: list[bytes], item_tag: int = TAG_BYTES) -> bytes:
    return pack(TAG_LIST, b"".join(pack(item_tag, item) for item in items))


def decode_list(data: bytes, item_tag: int = TAG_BYTES) -> list[bytes]:
    payload = unpack_exact(data, TAG_LIST)
    out = []
    for tag, value in iter_items(payload):
        if tag != item_tag:
            raise EncodingError(f"unexpected list item tag 0x{tag:02x}")
        out.append(value)
    return out


# ---------------------------------------------------------------------------
# Signed payloads and the certificate-list digest
# ---------------------------------------------------------------------------


def encode_signed_payload(
    label: str, customer: int, cycleid: bytes, timestamp: int, body_digest: bytes
) -> bytes:
    """The byte string both parties sign during an update cycle.

    For "Certificates" the digest commits to the ordered list C; for
    "Vouchers" it is the Merkle root over the cycle's vouchers.
    """
    if label not in SIGNED_PAYLOAD_LABELS:
        raise EncodingError(f"unknown payload label {label!r}")
    if len(cycleid) != CYCLEID_LEN:
        raise EncodingError("cycleid must be 32 bytes")
    if len(body_digest) != DIGEST_LEN:
        raise EncodingError("body digest must be 32 bytes")
    body = (
        pack(TAG_TEXT, text(label))
        + pack(TAG_UINT, u64(customer))
        + pack(TAG_BYTES, cycleid)
        + pack(TAG_UINT, u64(timestamp))
        + pack(TAG_BYTES, body_digest)
    )
    return pack(TAG_SIGNED_PAYLOAD, body)


def decode_signed_payload(data: bytes) -> tuple[str, int, bytes, int, bytes]:
    body = unpack_exact(data, TAG_SIGNED_PAYLOAD)
    raw = fields(body, TAG_TEXT, TAG_UINT, TAG_BYTES, TAG_UINT, TAG_BYTES)
    label = decode_text(raw[0])
    if label not in SIGNED_PAYLOAD_LABELS:
        raise EncodingError(f"unknown payload label {label!r}")
    if len(raw[2]) != CYCLEID_LEN or len(raw[4]) != DIGEST_LEN:
        raise EncodingError("bad cycleid or digest length")
    return label, decode_u64(raw[1]), raw[2], decode_u64(raw[3]), raw[4]


def cert_list_digest(certs: list[bytes]) -> bytes:
    """Order-sensitive digest of the insurer's certificate list."""
    if not certs:
        raise ParameterError("certificate list must not be empty")
    acc = b"".join(
        u32(i) + u32(len(cert)) + crypto.hash_h(cert) for i, cert in enumerate(certs)
    )
    return crypto.hash_h(acc)


# ---------------------------------------------------------------------------
# Codecs for crypto types
# ---------------------------------------------------------------------------


def encode_public_key(pk: crypto.PublicKey) -> bytes:
    body = pack(TAG_UINT, u64(pk.scheme_id)) + pack(TAG_BYTES, pk.data)
    return pack(TAG_PUBKEY, body)


def decode_public_key(data: bytes) -> crypto.PublicKey:
    raw = fields(unpack_exact(data, TAG_PUBKEY), TAG_UINT, TAG_BYTES)
    return crypto.PublicKey(decode_u64(raw[0]), raw[1])


def encode_group_params(params: crypto.GroupParams) -> bytes:
    body = (
        pack(TAG_INT, varint(params.p))
        + pack(TAG_INT, varint(params.q))
        + pack(TAG_INT, varint(params.g))
    )
    return pack(TAG_GROUP_PARAMS, body)


def decode_group_params(data: bytes) -> crypto.GroupParams:
    raw = fields(unpack_exact(data, TAG_GROUP_PARAMS), TAG_INT, TAG_INT, TAG_INT)
    return crypto.GroupParams(
        decode_varint(raw[0]), decode_varint(raw[1]), decode_varint(raw[2])
    )


def encode_chameleon_public(pub: crypto.ChameleonPublicKey) -> bytes:
    body = encode_group_params(pub.params) + pack(TAG_INT, varint(pub.y))
    return pack(TAG_CHAMELEON_PUB, body)


def decode_chameleon_public(data: bytes) -> crypto.ChameleonPublicKey:
    raw = fields(unpack_exact(data, TAG_CHAMELEON_PUB), TAG_GROUP_PARAMS, TAG_INT)
    params = decode_group_params(pack(TAG_GROUP_PARAMS, raw[0]))
    return crypto.ChameleonPublicKey(params, decode_varint(raw[1]))


def encode_chameleon_signature(sig: crypto.ChameleonSignature) -> bytes:
    body = (
        pack(TAG_INT, varint(sig.r))
        + pack(TAG_BYTES, sig.inner_sig)
        + pack(TAG_BYTES, sig.context)
    )
    return pack(TAG_CHAMELEON_SIG, body)


def decode_chameleon_signature(data: bytes) -> crypto.ChameleonSignature:
    raw = fields(unpack_exact(data, TAG_CHAMELEON_SIG), TAG_INT, TAG_BYTES, TAG_BYTES)
    return crypto.ChameleonSignature(decode_varint(raw[0]), raw[1], raw[2])


def encode_trapdoor_proof(proof: crypto.TrapdoorProof) -> bytes:
    body = (
        pack(TAG_INT, varint(proof.u))
        + pack(TAG_INT, varint(proof.c))
        + pack(TAG_INT, varint(proof.z))
    )
    return pack(TAG_TRAPDOOR_PROOF, body)


def decode_trapdoor_proof(data: bytes) -> crypto.TrapdoorProof:
    raw = fields(unpack_exact(data, TAG_TRAPDOOR_PROOF), TAG_INT, TAG_INT, TAG_INT)
    return crypto.TrapdoorProof(
        decode_varint(raw[0]), decode_varint(raw[1]), decode_varint(raw[2])
    )


# ---------------------------------------------------------------------------
# Framing: 4-byte big-endian length prefix over a reliable byte stream
# ---------------------------------------------------------------------------


def frame(payload: bytes) -> bytes:
    if len(payload) > _MAX_LEN:
        raise EncodingError("frame payload too large")
    return struct.pack(">I", len(payload)) + payload


def read_frame(read_exact) -> bytes:
    """Read one frame via read_exact(n) -> exactly n bytes (or raises)."""
    header = read_exact(4)
    (length,) = struct.unpack(">I", header)
    if length == 0:
        return b""
    return read_exact(length)


def buffer_reader(data: bytes):
    """read_exact over an in-memory buffer, for read_frame on file contents."""
    offset = 0

    def read_exact(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise EncodingError("short read")
        out = data[offset : offset + n]
        offset += n
        return out

    return read_exact
