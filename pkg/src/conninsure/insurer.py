"""The insurer service: setup, registration, cycle issuance, voucher-root
acceptance, the append-only chameleon-record log, and the framed
request/response endpoints.

Given well-formed inputs the service never aborts mid-cycle: state is
mutated only after every check has passed, and the request dispatcher maps
failures to error responses.  A single re-entrant lock serializes all
state-changing operations, which gives record-log appends a total order
and per-contract serialization for free.
"""

import os
import threading
from dataclasses import dataclass

from . import crypto, wire
from .errors import (
    CIError,
    EncodingError,
    ExpiredContractError,
    NotFoundError,
    ParameterError,
    RecencyError,
    RegistrationRejected,
    SequencingError,
    SignatureInvalid,
)
from .model import Contract, chameleon_context, registration_context
from .rand import DEFAULT, RandomSource

RECENCY_WINDOW = 300
DEFAULT_POLICY_DAYS = 365
SNAPSHOT_INTERVAL = 256

_PENDING = "pending"
_ACKED = "certs-acked"


@dataclass
class ChameleonRecord:
    """One logged chameleon signing event: enough to uncover forgeries."""

    customer: int
    message: bytes
    r: int
    ch: bytes


@dataclass
class _OpenCycle:
    cycleid: bytes
    certs: list
    state: str = _PENDING
    t: int | None = None


@dataclass
class RegistrationRequest:
    pk_a: crypto.PublicKey
    chameleon: crypto.ChameleonPublicKey
    trapdoor_proof: crypto.TrapdoorProof
    requested_delta_t: int

    def to_bytes(self) -> bytes:
        body = (
            wire.encode_public_key(self.pk_a)
            + wire.encode_chameleon_public(self.chameleon)
            + wire.encode_trapdoor_proof(self.trapdoor_proof)
            + wire.pack(wire.TAG_UINT, wire.u64(self.requested_delta_t))
        )
        return wire.pack(wire.REQ_REGISTER, body)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RegistrationRequest":
        raw = wire.fields(
            wire.unpack_exact(data, wire.REQ_REGISTER),
            wire.TAG_PUBKEY,
            wire.TAG_CHAMELEON_PUB,
            wire.TAG_TRAPDOOR_PROOF,
            wire.TAG_UINT,
        )
        return cls(
            pk_a=wire.decode_public_key(wire.pack(wire.TAG_PUBKEY, raw[0])),
            chameleon=wire.decode_chameleon_public(
                wire.pack(wire.TAG_CHAMELEON_PUB, raw[1])
            ),
            trapdoor_proof=wire.decode_trapdoor_proof(
                wire.pack(wire.TAG_TRAPDOOR_PROOF, raw[2])
            ),
            requested_delta_t=wire.decode_u64(raw[3]),
        )


class Insurer:
    """Holds IN's keys, the vetted list, contracts, cycles, and the record log."""

    def __init__(
        self,
        keypair: crypto.SigKeyPair,
        certs: list[bytes],
        policy_days: int = DEFAULT_POLICY_DAYS,
        recency_window: int = RECENCY_WINDOW,
        rng: RandomSource = DEFAULT,
        log_path: str | None = None,
    ):
        self.keypair = keypair
        self.certs = list(certs)
        self.cert_version = 0
        self.policy_days = policy_days
        self.recency_window = recency_window
        self.rng = rng
        self.contracts: dict[int, Contract] = {}
        self.open_cycles: dict[int, _OpenCycle] = {}
        self.records: list[ChameleonRecord] = []
        self._records_by_ch: dict[bytes, ChameleonRecord] = {}
        self._records_by_digest: dict[bytes, ChameleonRecord] = {}
        self._used_cycleids: set[bytes] = set()
        self._next_customer = 1
        self._lock = threading.RLock()
        self._log_path = log_path
        self._log_file = None
        self._events_since_snapshot = 0

    # -- setup / persistence ------------------------------------------------

    @classmethod
    def setup(
        cls,
        initial_certs: list[bytes],
        rng: RandomSource = DEFAULT,
        scheme_id: int = crypto.SCHEME_ED25519,
        policy_days: int = DEFAULT_POLICY_DAYS,
        recency_window: int = RECENCY_WINDOW,
        log_path: str | None = None,
    ) -> "Insurer":
        if not initial_certs:
            raise ParameterError("an insurer must vouch for at least one certificate")
        keypair = crypto.generate_sig_keypair(scheme_id, rng)
        insurer = cls(keypair, initial_certs, policy_days, recency_window, rng, log_path)
        if log_path:
            insurer._log_file = open(log_path, "ab")
            insurer._append_event(wire.LOG_SETUP, insurer._snapshot_body())
        return insurer

    @classmethod
    def load(cls, log_path: str, rng: RandomSource = DEFAULT) -> "Insurer":
        """Rebuild state from the last snapshot plus the event tail."""
        records = []
        with open(log_path, "rb") as fh:
            data = fh.read()
        offset = 0
        while offset < len(data):
            if offset + 4 > len(data):
                raise EncodingError("truncated log frame")
            length = int.from_bytes(data[offset : offset + 4], "big")
            payload = data[offset + 4 : offset + 4 + length]
            if len(payload) != length:
                raise EncodingError("truncated log frame payload")
            records.append(payload)
            offset += 4 + length

        start = 0
        for i, payload in enumerate(records):
            tag = payload[0] if payload else 0
            if tag in (wire.LOG_SETUP, wire.LOG_SNAPSHOT):
                start = i
        insurer = None
        for payload in records[start:]:
            tag, body, _ = wire.unpack(payload)
            if tag in (wire.LOG_SETUP, wire.LOG_SNAPSHOT):
                insurer = cls._from_snapshot_body(body, rng)
            else:
                insurer._replay_event(tag, body)
        if insurer is None:
            raise EncodingError("log contains no snapshot")
        insurer._log_path = log_path
        insurer._log_file = open(log_path, "ab")
        return insurer

    def close(self) -> None:
        if self._log_file:
            self._log_file.close()
            self._log_file = None

    def _append_event(self, tag: int, body: bytes) -> None:
        if not self._log_file:
            return
        self._log_file.write(wire.frame(wire.pack(tag, body)))
        self._log_file.flush()
        os.fsync(self._log_file.fileno())
        self._events_since_snapshot += 1
        if tag not in (wire.LOG_SETUP, wire.LOG_SNAPSHOT):
            if self._events_since_snapshot >= SNAPSHOT_INTERVAL:
                self._log_file.write(
                    wire.frame(wire.pack(wire.LOG_SNAPSHOT, self._snapshot_body()))
                )
                self._log_file.flush()
                self._events_since_snapshot = 0

    def _snapshot_body(self) -> bytes:
        contracts = b"".join(c.to_bytes() for c in self.contracts.values())
        open_cycles = b"".join(
            wire.pack(
                wire.TAG_PAIR,
                wire.pack(wire.TAG_UINT, wire.u64(customer))
                + wire.pack(wire.TAG_BYTES, oc.cycleid)
                + wire.encode_list(oc.certs)
                + wire.pack(wire.TAG_TEXT, wire.text(oc.state))
                + wire.pack(wire.TAG_UINT, wire.u64(0 if oc.t is None else oc.t + 1)),
            )
            for customer, oc in sorted(self.open_cycles.items())
        )
        recs = b"".join(
            wire.pack(
                wire.TAG_PAIR,
                wire.pack(wire.TAG_UINT, wire.u64(rec.customer))
                + wire.pack(wire.TAG_BYTES, rec.message)
                + wire.pack(wire.TAG_INT, wire.varint(rec.r))
                + wire.pack(wire.TAG_BYTES, rec.ch),
            )
            for rec in self.records
        )
        used = b"".join(wire.pack(wire.TAG_BYTES, c) for c in sorted(self._used_cycleids))
        return (
            wire.encode_public_key(self.keypair.public)
            + wire.pack(wire.TAG_BYTES, self.keypair.secret)
            + wire.encode_list(self.certs)
            + wire.pack(wire.TAG_UINT, wire.u64(self.cert_version))
            + wire.pack(wire.TAG_UINT, wire.u64(self.policy_days))
            + wire.pack(wire.TAG_UINT, wire.u64(self.recency_window))
            + wire.pack(wire.TAG_UINT, wire.u64(self._next_customer))
            + wire.pack(wire.TAG_LIST, contracts)
            + wire.pack(wire.TAG_LIST, open_cycles)
            + wire.pack(wire.TAG_LIST, recs)
            + wire.pack(wire.TAG_LIST, used)
        )

    def snapshot_bytes(self) -> bytes:
        """Canonical serialization of the full state (also used by tests)."""
        with self._lock:
            return self._snapshot_body()

    @classmethod
    def _from_snapshot_body(cls, body: bytes, rng: RandomSource) -> "Insurer":
        raw = wire.fields(
            body,
            wire.TAG_PUBKEY,
            wire.TAG_BYTES,
            wire.TAG_LIST,
            wire.TAG_UINT,
            wire.TAG_UINT,
            wire.TAG_UINT,
            wire.TAG_UINT,
            wire.TAG_LIST,
            wire.TAG_LIST,
            wire.TAG_LIST,
            wire.TAG_LIST,
        )
        public = wire.decode_public_key(wire.pack(wire.TAG_PUBKEY, raw[0]))
        insurer = cls(
            keypair=crypto.SigKeyPair(public, raw[1]),
            certs=wire.decode_list(wire.pack(wire.TAG_LIST, raw[2])),
            policy_days=wire.decode_u64(raw[4]),
            recency_window=wire.decode_u64(raw[5]),
            rng=rng,
        )
        insurer.cert_version = wire.decode_u64(raw[3])
        insurer._next_customer = wire.decode_u64(raw[6])
        for tag, value in wire.iter_items(raw[7]):
            contract = Contract.from_bytes(wire.pack(tag, value))
            insurer.contracts[contract.customer] = contract
        for tag, value in wire.iter_items(raw[8]):
            f = wire.fields(
                value,
                wire.TAG_UINT,
                wire.TAG_BYTES,
                wire.TAG_LIST,
                wire.TAG_TEXT,
                wire.TAG_UINT,
            )
            t_raw = wire.decode_u64(f[4])
            insurer.open_cycles[wire.decode_u64(f[0])] = _OpenCycle(
                cycleid=f[1],
                certs=wire.decode_list(wire.pack(wire.TAG_LIST, f[2])),
                state=wire.decode_text(f[3]),
                t=None if t_raw == 0 else t_raw - 1,
            )
        for tag, value in wire.iter_items(raw[9]):
            f = wire.fields(
                value, wire.TAG_UINT, wire.TAG_BYTES, wire.TAG_INT, wire.TAG_BYTES
            )
            insurer._store_record(
                ChameleonRecord(
                    customer=wire.decode_u64(f[0]),
                    message=f[1],
                    r=wire.decode_varint(f[2]),
                    ch=f[3],
                )
            )
        for tag, value in wire.iter_items(raw[10]):
            insurer._used_cycleids.add(value)
        return insurer

    def _replay_event(self, tag: int, body: bytes) -> None:
        if tag == wire.LOG_REGISTER:
            contract = Contract.from_bytes(body)
            self.contracts[contract.customer] = contract
            self._next_customer = max(self._next_customer, contract.customer + 1)
        elif tag == wire.LOG_UPDATE_CERTS:
            raw = wire.fields(body, wire.TAG_LIST, wire.TAG_UINT)
            self.certs = wire.decode_list(wire.pack(wire.TAG_LIST, raw[0]))
            self.cert_version = wire.decode_u64(raw[1])
        elif tag == wire.LOG_BEGIN_CYCLE:
            raw = wire.fields(body, wire.TAG_UINT, wire.TAG_BYTES, wire.TAG_LIST)
            customer = wire.decode_u64(raw[0])
            self.open_cycles[customer] = _OpenCycle(
                cycleid=raw[1], certs=wire.decode_list(wire.pack(wire.TAG_LIST, raw[2]))
            )
            self._used_cycleids.add(raw[1])
        elif tag == wire.LOG_ACK_CERTS:
            raw = wire.fields(
                body, wire.TAG_UINT, wire.TAG_UINT, wire.TAG_BYTES, wire.TAG_INT,
                wire.TAG_BYTES,
            )
            customer = wire.decode_u64(raw[0])
            cycle = self.open_cycles[customer]
            cycle.state = _ACKED
            cycle.t = wire.decode_u64(raw[1])
            self._store_record(
                ChameleonRecord(customer, raw[2], wire.decode_varint(raw[3]), raw[4])
            )
        elif tag == wire.LOG_SUBMIT_VOUCHERS:
            raw = wire.fields(
                body, wire.TAG_UINT, wire.TAG_BYTES, wire.TAG_INT, wire.TAG_BYTES
            )
            customer = wire.decode_u64(raw[0])
            self.open_cycles.pop(customer, None)
            self._store_record(
                ChameleonRecord(customer, raw[1], wire.decode_varint(raw[2]), raw[3])
            )
        else:
            raise EncodingError(f"unknown log event tag 0x{tag:02x}")

    # -- record log ----------------------------------------------------------

    def _store_record(self, record: ChameleonRecord) -> None:
        self.records.append(record)
        self._records_by_ch[record.ch] = record
        self._records_by_digest[crypto.hash_h(record.message)] = record

    def _record_signature(
        self, contract: Contract, message: bytes, context: bytes
    ) -> crypto.ChameleonSignature:
        """Chameleon-sign and append the (message, r) pair to the record log."""
        sig = crypto.chameleon_sign(
            self.keypair, contract.chameleon, message, context, self.rng
        )
        ch = contract.chameleon.params.element_bytes(
            crypto.chameleon_hash(
                contract.chameleon.params, contract.chameleon.y, message, sig.r
            )
        )
        self._store_record(ChameleonRecord(contract.customer, message, sig.r, ch))
        return sig

    def lookup_record(
        self, ch: bytes | None = None, message_digest: bytes | None = None
    ) -> tuple[bytes, int] | None:
        """Exact-match retrieval from the append-only log."""
        record = None
        if ch is not None:
            record = self._records_by_ch.get(ch)
        elif message_digest is not None:
            record = self._records_by_digest.get(message_digest)
        if record is None:
            return None
        return record.message, record.r

    # -- protocol operations ---------------------------------------------------

    def register(self, request: RegistrationRequest, now: int) -> Contract:
        with self._lock:
            ok = crypto.verify_trapdoor(
                request.chameleon.y,
                request.chameleon.params,
                registration_context(request.pk_a),
                request.trapdoor_proof,
            )
            if not ok:
                raise RegistrationRejected("trapdoor proof does not verify")
            if request.requested_delta_t <= 0:
                raise RegistrationRejected("update-interval bound must be positive")
            customer = self._next_customer
            self._next_customer += 1
            contract = Contract(
                customer=customer,
                pk_in=self.keypair.public,
                pk_a=request.pk_a,
                chameleon=request.chameleon,
                trapdoor_proof=request.trapdoor_proof,
                t0=now,
                t_end=now + self.policy_days * 86400,
                delta_t=request.requested_delta_t,
            )
            self.contracts[customer] = contract
            self._append_event(wire.LOG_REGISTER, contract.to_bytes())
            return contract

    def _contract(self, customer: int) -> Contract:
        contract = self.contracts.get(customer)
        if contract is None:
            raise NotFoundError(f"unknown customer {customer}")
        return contract

    def begin_cycle(self, customer: int, now: int) -> tuple[list[bytes], bytes]:
        with self._lock:
            contract = self._contract(customer)
            if not contract.t0 <= now <= contract.t_end:
                raise ExpiredContractError("contract not valid at this time")
            if customer in self.open_cycles:
                raise SequencingError("previous cycle not submitted yet")
            while True:
                cycleid = self.rng.bytes(wire.CYCLEID_LEN)
                if cycleid not in self._used_cycleids:
                    break
            self._used_cycleids.add(cycleid)
            snapshot = list(self.certs)
            self.open_cycles[customer] = _OpenCycle(cycleid, snapshot)
            self._append_event(
                wire.LOG_BEGIN_CYCLE,
                wire.pack(wire.TAG_UINT, wire.u64(customer))
                + wire.pack(wire.TAG_BYTES, cycleid)
                + wire.encode_list(snapshot),
            )
            return snapshot, cycleid

    def _check_recent(self, stamp: int, now: int) -> None:
        if abs(now - stamp) > self.recency_window:
            raise RecencyError(f"timestamp {stamp} outside recency window at {now}")

    def ack_certificates(
        self, customer: int, cycleid: bytes, t: int, sig_a: bytes, now: int
    ) -> crypto.ChameleonSignature:
        with self._lock:
            contract = self._contract(customer)
            cycle = self.open_cycles.get(customer)
            if cycle is None or cycle.cycleid != cycleid:
                raise SequencingError("no pending cycle with this cycleid")
            if cycle.state != _PENDING:
                raise SequencingError("certificates already acknowledged")
            payload = wire.encode_signed_payload(
                "Certificates", customer, cycleid, t, wire.cert_list_digest(cycle.certs)
            )
            if not crypto.verify(contract.pk_a, payload, sig_a):
                raise SignatureInvalid("customer signature does not verify")
            self._check_recent(t, now)
            sig = self._record_signature(
                contract, payload, chameleon_context(customer, "Certificates")
            )
            cycle.state = _ACKED
            cycle.t = t
            record = self.records[-1]
            self._append_event(
                wire.LOG_ACK_CERTS,
                wire.pack(wire.TAG_UINT, wire.u64(customer))
                + wire.pack(wire.TAG_UINT, wire.u64(t))
                + wire.pack(wire.TAG_BYTES, record.message)
                + wire.pack(wire.TAG_INT, wire.varint(record.r))
                + wire.pack(wire.TAG_BYTES, record.ch),
            )
            return sig

    def accept_vouchers(
        self, customer: int, cycleid: bytes, t_prime: int, root: bytes, sig_a: bytes,
        now: int,
    ) -> tuple[crypto.ChameleonSignature, bool]:
        with self._lock:
            contract = self._contract(customer)
            cycle = self.open_cycles.get(customer)
            if cycle is None or cycle.cycleid != cycleid:
                raise SequencingError("no open cycle with this cycleid")
            if cycle.state != _ACKED:
                raise SequencingError("certificate list not acknowledged yet")
            if t_prime < cycle.t:
                raise SequencingError("submission timestamp precedes download")
            payload = wire.encode_signed_payload(
                "Vouchers", customer, cycleid, t_prime, root
            )
            if not crypto.verify(contract.pk_a, payload, sig_a):
                raise SignatureInvalid("customer signature does not verify")
            self._check_recent(t_prime, now)
            covered = t_prime - cycle.t <= contract.delta_t
            sig = self._record_signature(
                contract, payload, chameleon_context(customer, "Vouchers")
            )
            del self.open_cycles[customer]
            record = self.records[-1]
            self._append_event(
                wire.LOG_SUBMIT_VOUCHERS,
                wire.pack(wire.TAG_UINT, wire.u64(customer))
                + wire.pack(wire.TAG_BYTES, record.message)
                + wire.pack(wire.TAG_INT, wire.varint(record.r))
                + wire.pack(wire.TAG_BYTES, record.ch),
            )
            return sig, covered

    def update_cert_list(self, adds: list[bytes], removes: list[bytes]) -> int:
        with self._lock:
            updated = list(self.certs)
            for cert in removes:
                try:
                    updated.remove(cert)
                except ValueError:
                    raise NotFoundError("cannot remove a certificate that is not listed")
            updated.extend(adds)
            if not updated:
                raise ParameterError("certificate list must not become empty")
            self.certs = updated
            self.cert_version += 1
            self._append_event(
                wire.LOG_UPDATE_CERTS,
                wire.encode_list(self.certs)
                + wire.pack(wire.TAG_UINT, wire.u64(self.cert_version)),
            )
            return self.cert_version


# ---------------------------------------------------------------------------
# Framed request dispatch
# ---------------------------------------------------------------------------

ERR_ENCODING = 1
ERR_SEQUENCING = 2
ERR_RECENCY = 3
ERR_SIGNATURE = 4
ERR_REGISTRATION = 5
ERR_NOT_FOUND = 6
ERR_EXPIRED = 7
ERR_PARAMETER = 8
ERR_INTERNAL = 9

_ERROR_CODES = [
    (SequencingError, ERR_SEQUENCING),
    (RecencyError, ERR_RECENCY),
    (SignatureInvalid, ERR_SIGNATURE),
    (RegistrationRejected, ERR_REGISTRATION),
    (NotFoundError, ERR_NOT_FOUND),
    (ExpiredContractError, ERR_EXPIRED),
    (EncodingError, ERR_ENCODING),
    (ParameterError, ERR_PARAMETER),
]

EXCEPTION_BY_CODE = {code: exc for exc, code in _ERROR_CODES}


def _error_response(exc: Exception) -> bytes:
    code = ERR_INTERNAL
    for exc_type, exc_code in _ERROR_CODES:
        if isinstance(exc, exc_type):
            code = exc_code
            break
    body = wire.pack(wire.TAG_UINT, wire.u64(code)) + wire.pack(
        wire.TAG_TEXT, wire.text(str(exc) or exc.__class__.__name__)
    )
    return wire.pack(wire.RESP_ERR, body)


def _ok(body: bytes) -> bytes:
    return wire.pack(wire.RESP_OK, body)


def handle_request(insurer: Insurer, request: bytes, now: int) -> bytes:
    """Decode one endpoint request, run it, and encode the response."""
    try:
        tag, body, end = wire.unpack(request)
        if end != len(request):
            raise EncodingError("trailing bytes after request")
        if tag == wire.REQ_REGISTER:
            contract = insurer.register(RegistrationRequest.from_bytes(request), now)
            return _ok(contract.to_bytes())
        if tag == wire.REQ_BEGIN_CYCLE:
            customer = wire.decode_u64(wire.fields(body, wire.TAG_UINT)[0])
            certs, cycleid = insurer.begin_cycle(customer, now)
            return _ok(wire.pack(wire.TAG_BYTES, cycleid) + wire.encode_list(certs))
        if tag == wire.REQ_ACK_CERTS:
            raw = wire.fields(
                body, wire.TAG_UINT, wire.TAG_BYTES, wire.TAG_UINT, wire.TAG_BYTES
            )
            sig = insurer.ack_certificates(
                wire.decode_u64(raw[0]), raw[1], wire.decode_u64(raw[2]), raw[3], now
            )
            return _ok(wire.encode_chameleon_signature(sig))
        if tag == wire.REQ_SUBMIT_VOUCHERS:
            raw = wire.fields(
                body,
                wire.TAG_UINT,
                wire.TAG_BYTES,
                wire.TAG_UINT,
                wire.TAG_BYTES,
                wire.TAG_BYTES,
            )
            sig, covered = insurer.accept_vouchers(
                wire.decode_u64(raw[0]),
                raw[1],
                wire.decode_u64(raw[2]),
                raw[3],
                raw[4],
                now,
            )
            return _ok(
                wire.encode_chameleon_signature(sig)
                + wire.pack(wire.TAG_UINT, wire.u64(1 if covered else 0))
            )
        if tag == wire.REQ_LOOKUP_RECORD:
            raw = wire.fields(body, wire.TAG_UINT, wire.TAG_BYTES)
            kind = wire.decode_u64(raw[0])
            if kind == 0:
                found = insurer.lookup_record(ch=raw[1])
            else:
                found = insurer.lookup_record(message_digest=raw[1])
            if found is None:
                return _ok(wire.pack(wire.TAG_UINT, wire.u64(0)))
            message, r = found
            return _ok(
                wire.pack(wire.TAG_UINT, wire.u64(1))
                + wire.pack(wire.TAG_BYTES, message)
                + wire.pack(wire.TAG_INT, wire.varint(r))
            )
        raise EncodingError(f"unknown endpoint tag 0x{tag:02x}")
    except CIError as exc:
        return _error_response(exc)
