"""Domain types shared by insurer, client, and judge: contracts, cycles,
vouchers, claims, and the rollback deltas that keep client storage small.

These are immutable value records; mutation happens only inside the
insurer/client stores, each serialized per contract.
"""

from dataclasses import dataclass, field

from . import crypto, wire
from .errors import ClaimFormatError, CorruptionError, EncodingError, ParameterError

VOUCHER_R_LEN = 32
DEFAULT_RETENTION_DAYS = 365
PAD_DOMAIN = "pad.invalid"


def chameleon_context(customer: int, label: str) -> bytes:
    """Context bound into every chameleon signature: customer number + label."""
    if label not in wire.SIGNED_PAYLOAD_LABELS:
        raise ParameterError(f"unknown context label {label!r}")
    return wire.u64(customer) + label.encode("ascii")


def registration_context(pk_a: crypto.PublicKey) -> bytes:
    """Context the trapdoor proof is bound to at registration time.

    The customer number does not exist yet when the applicant builds the
    proof, so the binding anchor is the applicant's signature key.
    """
    return b"ci-register:" + wire.u64(pk_a.scheme_id) + pk_a.data


# ---------------------------------------------------------------------------
# Contract
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Contract:
    customer: int
    pk_in: crypto.PublicKey
    pk_a: crypto.PublicKey
    chameleon: crypto.ChameleonPublicKey
    trapdoor_proof: crypto.TrapdoorProof
    t0: int
    t_end: int
    delta_t: int

    def validate(self) -> None:
        if not self.t0 < self.t_end:
            raise ClaimFormatError("contract validity term is empty")
        if self.delta_t <= 0:
            raise ClaimFormatError("update-interval bound must be positive")
        ok = crypto.verify_trapdoor(
            self.chameleon.y,
            self.chameleon.params,
            registration_context(self.pk_a),
            self.trapdoor_proof,
        )
        if not ok:
            raise ClaimFormatError("trapdoor proof does not verify")

    def to_bytes(self) -> bytes:
        body = (
            wire.pack(wire.TAG_UINT, wire.u64(self.customer))
            + wire.encode_public_key(self.pk_in)
            + wire.encode_public_key(self.pk_a)
            + wire.encode_chameleon_public(self.chameleon)
            + wire.encode_trapdoor_proof(self.trapdoor_proof)
            + wire.pack(wire.TAG_UINT, wire.u64(self.t0))
            + wire.pack(wire.TAG_UINT, wire.u64(self.t_end))
            + wire.pack(wire.TAG_UINT, wire.u64(self.delta_t))
        )
        return wire.pack(wire.TAG_CONTRACT, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Contract":
        raw = wire.fields(
            wire.unpack_exact(data, wire.TAG_CONTRACT),
            wire.TAG_UINT,
            wire.TAG_PUBKEY,
            wire.TAG_PUBKEY,
            wire.TAG_CHAMELEON_PUB,
            wire.TAG_TRAPDOOR_PROOF,
            wire.TAG_UINT,
            wire.TAG_UINT,
            wire.TAG_UINT,
        )
        return cls(
            customer=wire.decode_u64(raw[0]),
            pk_in=wire.decode_public_key(wire.pack(wire.TAG_PUBKEY, raw[1])),
            pk_a=wire.decode_public_key(wire.pack(wire.TAG_PUBKEY, raw[2])),
            chameleon=wire.decode_chameleon_public(
                wire.pack(wire.TAG_CHAMELEON_PUB, raw[3])
            ),
            trapdoor_proof=wire.decode_trapdoor_proof(
                wire.pack(wire.TAG_TRAPDOOR_PROOF, raw[4])
            ),
            t0=wire.decode_u64(raw[5]),
            t_end=wire.decode_u64(raw[6]),
            delta_t=wire.decode_u64(raw[7]),
        )


# ---------------------------------------------------------------------------
# Vouchers and TLS evidence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Voucher:
    """Connection proof tuple: one per domain per update cycle, fresh r."""

    customer: int
    domain: str
    cycleid: bytes
    r: bytes

    def __post_init__(self):
        if len(self.cycleid) != wire.CYCLEID_LEN:
            raise ParameterError("cycleid must be 32 bytes")
        if len(self.r) != VOUCHER_R_LEN:
            raise ParameterError("voucher randomness must be 32 bytes")

    def to_bytes(self) -> bytes:
        body = (
            wire.pack(wire.TAG_UINT, wire.u64(self.customer))
            + wire.pack(wire.TAG_TEXT, wire.text(self.domain))
            + wire.pack(wire.TAG_BYTES, self.cycleid)
            + wire.pack(wire.TAG_BYTES, self.r)
        )
        return wire.pack(wire.TAG_VOUCHER, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Voucher":
        raw = wire.fields(
            wire.unpack_exact(data, wire.TAG_VOUCHER),
            wire.TAG_UINT,
            wire.TAG_TEXT,
            wire.TAG_BYTES,
            wire.TAG_BYTES,
        )
        return cls(
            customer=wire.decode_u64(raw[0]),
            domain=wire.decode_text(raw[1]),
            cycleid=raw[2],
            r=raw[3],
        )


@dataclass(frozen=True)
class HandshakeTranscript:
    """The TLS 1.2 DHE handshake fragment the judge re-verifies.

    The signature covers client_random || server_random || server_dh_params
    exactly, in that byte order.
    """

    client_random: bytes
    server_random: bytes
    server_dh_params: bytes
    signature: bytes
    hash_alg: int
    sig_alg: int

    def __post_init__(self):
        if len(self.client_random) != 32 or len(self.server_random) != 32:
            raise ParameterError("handshake randoms must be 32 bytes")

    def to_bytes(self) -> bytes:
        body = (
            wire.pack(wire.TAG_BYTES, self.client_random)
            + wire.pack(wire.TAG_BYTES, self.server_random)
            + wire.pack(wire.TAG_BYTES, self.server_dh_params)
            + wire.pack(wire.TAG_BYTES, self.signature)
            + wire.pack(wire.TAG_UINT, wire.u64(self.hash_alg))
            + wire.pack(wire.TAG_UINT, wire.u64(self.sig_alg))
        )
        return wire.pack(wire.TAG_TRANSCRIPT, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "HandshakeTranscript":
        raw = wire.fields(
            wire.unpack_exact(data, wire.TAG_TRANSCRIPT),
            wire.TAG_BYTES,
            wire.TAG_BYTES,
            wire.TAG_BYTES,
            wire.TAG_BYTES,
            wire.TAG_UINT,
            wire.TAG_UINT,
        )
        return cls(
            client_random=raw[0],
            server_random=raw[1],
            server_dh_params=raw[2],
            signature=raw[3],
            hash_alg=wire.decode_u64(raw[4]),
            sig_alg=wire.decode_u64(raw[5]),
        )


@dataclass(frozen=True)
class VoucherEvidence:
    """Voucher plus the presented certificate and the server's signature."""

    cert_bob: bytes
    voucher: Voucher
    transcript: HandshakeTranscript

    def to_bytes(self) -> bytes:
        body = (
            wire.pack(wire.TAG_BYTES, self.cert_bob)
            + self.voucher.to_bytes()
            + self.transcript.to_bytes()
        )
        return wire.pack(wire.TAG_EVIDENCE, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "VoucherEvidence":
        raw = wire.fields(
            wire.unpack_exact(data, wire.TAG_EVIDENCE),
            wire.TAG_BYTES,
            wire.TAG_VOUCHER,
            wire.TAG_TRANSCRIPT,
        )
        return cls(
            cert_bob=raw[0],
            voucher=Voucher.from_bytes(wire.pack(wire.TAG_VOUCHER, raw[1])),
            transcript=HandshakeTranscript.from_bytes(
                wire.pack(wire.TAG_TRANSCRIPT, raw[2])
            ),
        )


# ---------------------------------------------------------------------------
# Merkle inclusion proof (tree construction lives in merkle.py)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InclusionProof:
    """Audit path from a leaf to the committed root.

    path entries are (sibling digest, sibling_is_left) ordered leaf-to-root.
    """

    leaf_index: int
    path: tuple

    def to_bytes(self) -> bytes:
        steps = b"".join(
            wire.pack(
                wire.TAG_PAIR,
                wire.pack(wire.TAG_BYTES, digest)
                + wire.pack(wire.TAG_UINT, wire.u64(1 if sibling_is_left else 0)),
            )
            for digest, sibling_is_left in self.path
        )
        body = wire.pack(wire.TAG_UINT, wire.u64(self.leaf_index)) + wire.pack(
            wire.TAG_LIST, steps
        )
        return wire.pack(wire.TAG_INCLUSION_PROOF, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "InclusionProof":
        raw = wire.fields(
            wire.unpack_exact(data, wire.TAG_INCLUSION_PROOF),
            wire.TAG_UINT,
            wire.TAG_LIST,
        )
        path = []
        for tag, value in wire.iter_items(raw[1]):
            if tag != wire.TAG_PAIR:
                raise EncodingError("bad inclusion-proof step")
            digest, flag = wire.fields(value, wire.TAG_BYTES, wire.TAG_UINT)
            if len(digest) != wire.DIGEST_LEN:
                raise EncodingError("bad sibling digest length")
            path.append((digest, wire.decode_u64(flag) == 1))
        return cls(leaf_index=wire.decode_u64(raw[0]), path=tuple(path))


# ---------------------------------------------------------------------------
# Cycle records and claims
# ---------------------------------------------------------------------------


@dataclass
class CycleRecord:
    """Per-cycle transcript; client side also keeps the tree seed."""

    cycle_index: int
    cycleid: bytes
    list_size: int
    cert_digest: bytes
    t: int | None = None
    sig_a_certs: bytes | None = None
    chsig_certs: crypto.ChameleonSignature | None = None
    t_prime: int | None = None
    voucher_root: bytes | None = None
    sig_a_vouchers: bytes | None = None
    chsig_vouchers: crypto.ChameleonSignature | None = None
    tree_seed: bytes | None = None
    covered: bool | None = None
    covered_self: bool | None = None
    evidences: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        def opt_bytes(value):
            return wire.pack(wire.TAG_BYTES, b"" if value is None else value)

        def opt_uint(value):
            return wire.pack(wire.TAG_UINT, wire.u64(0 if value is None else value + 1))

        evs = b"".join(
            self.evidences[domain].to_bytes() for domain in sorted(self.evidences)
        )
        body = (
            wire.pack(wire.TAG_UINT, wire.u64(self.cycle_index))
            + wire.pack(wire.TAG_BYTES, self.cycleid)
            + wire.pack(wire.TAG_UINT, wire.u64(self.list_size))
            + wire.pack(wire.TAG_BYTES, self.cert_digest)
            + opt_uint(self.t)
            + opt_bytes(self.sig_a_certs)
            + _opt_chameleon(self.chsig_certs)
            + opt_uint(self.t_prime)
            + opt_bytes(self.voucher_root)
            + opt_bytes(self.sig_a_vouchers)
            + _opt_chameleon(self.chsig_vouchers)
            + opt_bytes(self.tree_seed)
            + opt_uint(None if self.covered is None else int(self.covered))
            + opt_uint(None if self.covered_self is None else int(self.covered_self))
            + wire.pack(wire.TAG_LIST, evs)
        )
        return wire.pack(wire.TAG_CYCLE_RECORD, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CycleRecord":
        raw = wire.fields(
            wire.unpack_exact(data, wire.TAG_CYCLE_RECORD),
            wire.TAG_UINT,
            wire.TAG_BYTES,
            wire.TAG_UINT,
            wire.TAG_BYTES,
            wire.TAG_UINT,
            wire.TAG_BYTES,
            wire.TAG_CHAMELEON_SIG,
            wire.TAG_UINT,
            wire.TAG_BYTES,
            wire.TAG_BYTES,
            wire.TAG_CHAMELEON_SIG,
            wire.TAG_BYTES,
            wire.TAG_UINT,
            wire.TAG_UINT,
            wire.TAG_LIST,
        )

        def from_opt_uint(value):
            v = wire.decode_u64(value)
            return None if v == 0 else v - 1

        evidences = {}
        for tag, value in wire.iter_items(raw[14]):
            if tag != wire.TAG_EVIDENCE:
                raise EncodingError("bad evidence entry in cycle record")
            ev = VoucherEvidence.from_bytes(wire.pack(wire.TAG_EVIDENCE, value))
            evidences[ev.voucher.domain] = ev
        covered = from_opt_uint(raw[12])
        covered_self = from_opt_uint(raw[13])
        return cls(
            cycle_index=wire.decode_u64(raw[0]),
            cycleid=raw[1],
            list_size=wire.decode_u64(raw[2]),
            cert_digest=raw[3],
            t=from_opt_uint(raw[4]),
            sig_a_certs=raw[5] or None,
            chsig_certs=_decode_opt_chameleon(raw[6]),
            t_prime=from_opt_uint(raw[7]),
            voucher_root=raw[8] or None,
            sig_a_vouchers=raw[9] or None,
            chsig_vouchers=_decode_opt_chameleon(raw[10]),
            tree_seed=raw[11] or None,
            covered=None if covered is None else bool(covered),
            covered_self=None if covered_self is None else bool(covered_self),
            evidences=evidences,
        )


def _opt_chameleon(sig: crypto.ChameleonSignature | None) -> bytes:
    if sig is None:
        return wire.pack(wire.TAG_CHAMELEON_SIG, b"")
    return wire.encode_chameleon_signature(sig)


def _decode_opt_chameleon(body: bytes) -> crypto.ChameleonSignature | None:
    if not body:
        return None
    return wire.decode_chameleon_signature(wire.pack(wire.TAG_CHAMELEON_SIG, body))


@dataclass(frozen=True)
class Claim:
    """Self-contained insurance-case bundle; the judge needs only pk_IN."""

    contract: Contract
    certs: tuple
    cycleid: bytes
    t: int
    t_prime: int
    chsig_certs: crypto.ChameleonSignature
    chsig_vouchers: crypto.ChameleonSignature
    voucher_root: bytes
    proof: InclusionProof
    evidence: VoucherEvidence
    cert_index: int

    def to_bytes(self) -> bytes:
        body = (
            self.contract.to_bytes()
            + wire.encode_list(list(self.certs))
            + wire.pack(wire.TAG_BYTES, self.cycleid)
            + wire.pack(wire.TAG_UINT, wire.u64(self.t))
            + wire.pack(wire.TAG_UINT, wire.u64(self.t_prime))
            + wire.encode_chameleon_signature(self.chsig_certs)
            + wire.encode_chameleon_signature(self.chsig_vouchers)
            + wire.pack(wire.TAG_BYTES, self.voucher_root)
            + self.proof.to_bytes()
            + self.evidence.to_bytes()
            + wire.pack(wire.TAG_UINT, wire.u64(self.cert_index))
        )
        return wire.pack(wire.TAG_CLAIM, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Claim":
        raw = wire.fields(
            wire.unpack_exact(data, wire.TAG_CLAIM),
            wire.TAG_CONTRACT,
            wire.TAG_LIST,
            wire.TAG_BYTES,
            wire.TAG_UINT,
            wire.TAG_UINT,
            wire.TAG_CHAMELEON_SIG,
            wire.TAG_CHAMELEON_SIG,
            wire.TAG_BYTES,
            wire.TAG_INCLUSION_PROOF,
            wire.TAG_EVIDENCE,
            wire.TAG_UINT,
        )
        return cls(
            contract=Contract.from_bytes(wire.pack(wire.TAG_CONTRACT, raw[0])),
            certs=tuple(wire.decode_list(wire.pack(wire.TAG_LIST, raw[1]))),
            cycleid=raw[2],
            t=wire.decode_u64(raw[3]),
            t_prime=wire.decode_u64(raw[4]),
            chsig_certs=wire.decode_chameleon_signature(
                wire.pack(wire.TAG_CHAMELEON_SIG, raw[5])
            ),
            chsig_vouchers=wire.decode_chameleon_signature(
                wire.pack(wire.TAG_CHAMELEON_SIG, raw[6])
            ),
            voucher_root=raw[7],
            proof=InclusionProof.from_bytes(
                wire.pack(wire.TAG_INCLUSION_PROOF, raw[8])
            ),
            evidence=VoucherEvidence.from_bytes(wire.pack(wire.TAG_EVIDENCE, raw[9])),
            cert_index=wire.decode_u64(raw[10]),
        )


# ---------------------------------------------------------------------------
# Rollback deltas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RollbackDelta:
    """Reverses update cycle i: apply(C_i) = C_{i-1} exactly.

    added: (position in C_i, cert hash) for certs that appeared in cycle i;
    removed: (position in C_{i-1}, cert bytes) for certs that disappeared.
    """

    cycle_index: int
    added: tuple
    removed: tuple

    def to_bytes(self) -> bytes:
        added = b"".join(
            wire.pack(
                wire.TAG_PAIR,
                wire.pack(wire.TAG_UINT, wire.u64(pos))
                + wire.pack(wire.TAG_BYTES, digest),
            )
            for pos, digest in self.added
        )
        removed = b"".join(
            wire.pack(
                wire.TAG_PAIR,
                wire.pack(wire.TAG_UINT, wire.u64(pos))
                + wire.pack(wire.TAG_BYTES, cert),
            )
            for pos, cert in self.removed
        )
        body = (
            wire.pack(wire.TAG_UINT, wire.u64(self.cycle_index))
            + wire.pack(wire.TAG_LIST, added)
            + wire.pack(wire.TAG_LIST, removed)
        )
        return wire.pack(wire.TAG_ROLLBACK_DELTA, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RollbackDelta":
        raw = wire.fields(
            wire.unpack_exact(data, wire.TAG_ROLLBACK_DELTA),
            wire.TAG_UINT,
            wire.TAG_LIST,
            wire.TAG_LIST,
        )

        def pairs(payload):
            out = []
            for tag, value in wire.iter_items(payload):
                if tag != wire.TAG_PAIR:
                    raise EncodingError("bad delta entry")
                pos, blob = wire.fields(value, wire.TAG_UINT, wire.TAG_BYTES)
                out.append((wire.decode_u64(pos), blob))
            return tuple(out)

        return cls(
            cycle_index=wire.decode_u64(raw[0]),
            added=pairs(raw[1]),
            removed=pairs(raw[2]),
        )


def compute_rollback(
    previous: list[bytes], current: list[bytes], cycle_index: int
) -> RollbackDelta:
    """Delta from the new list back to the old one, via an LCS diff on
    certificate hashes so arbitrary reorderings round-trip."""
    import difflib

    prev_keys = [crypto.hash_h(c) for c in previous]
    cur_keys = [crypto.hash_h(c) for c in current]
    matcher = difflib.SequenceMatcher(None, cur_keys, prev_keys, autojunk=False)
    added = []
    removed = []
    for op, i1, i2, j1, j2 in matcher.get_opcodes():
        if op in ("delete", "replace"):
            added.extend((i, cur_keys[i]) for i in range(i1, i2))
        if op in ("insert", "replace"):
            removed.extend((j, previous[j]) for j in range(j1, j2))
    return RollbackDelta(cycle_index, tuple(added), tuple(removed))


def apply_rollback(current: list[bytes], delta: RollbackDelta) -> list[bytes]:
    """Exact reconstruction of the previous list, order preserved."""
    work = list(current)
    for pos, digest in sorted(delta.added, reverse=True):
        if pos >= len(work):
            raise CorruptionError(f"added-cert position {pos} out of range")
        if crypto.hash_h(work[pos]) != digest:
            raise CorruptionError(f"certificate at position {pos} does not match delta")
        del work[pos]
    for pos, cert in sorted(delta.removed):
        if pos > len(work):
            raise CorruptionError(f"removed-cert position {pos} out of range")
        work.insert(pos, cert)
    return work


@dataclass(frozen=True)
class RollbackEntry:
    delta: RollbackDelta
    cycle_time: int


def expire_rollbacks(
    entries: list[RollbackEntry],
    now: int,
    retention_seconds: int = DEFAULT_RETENTION_DAYS * 86400,
    validity: tuple[int, int] | None = None,
) -> list[RollbackEntry]:
    """Drop the leading deltas that no live claim can ever need.

    A delta stays claimable while its cycle is inside the retention window
    and (when a validity term is given) inside the contract term.  Deltas
    form a chain, so only a prefix may be removed.
    """

    def claimable(entry: RollbackEntry) -> bool:
        if entry.cycle_time + retention_seconds <= now:
            return False
        if validity is not None:
            t0, t_end = validity
            if not t0 <= entry.cycle_time <= t_end:
                return False
        return True

    for i, entry in enumerate(entries):
        if claimable(entry):
            return list(entries[i:])
    return []
