"""The customer agent: key and contract management, update cycles, browsing
with voucher creation, the evidence store with rollback deltas, and claim
assembly.

State is one writer per contract: a working-state file plus an append-only
archive of closed cycles.  Only the up-to-date certificate list is kept;
older lists are reconstructed through rollback deltas when a claim needs
them.
"""

import os
from dataclasses import dataclass

from . import crypto, merkle, tlssim, wire
from .errors import (
    CorruptionError,
    EncodingError,
    InsurerMisbehavior,
    NotFoundError,
    ParameterError,
    SequencingError,
)
from .insurer import RegistrationRequest
from .model import (
    PAD_DOMAIN,
    Claim,
    Contract,
    CycleRecord,
    RollbackDelta,
    RollbackEntry,
    Voucher,
    apply_rollback,
    chameleon_context,
    compute_rollback,
    expire_rollbacks,
    registration_context,
)
from .rand import DEFAULT, RandomSource

STATE_FILE = "state.tlv"
ARCHIVE_FILE = "archive.tlv"
ROLLBACK_FILE = "rollback.tlv"


@dataclass(frozen=True)
class BrowseResult:
    """Outcome of one browse: vouched / reused / untrusted."""

    status: str
    evidence: object = None
    cert: bytes | None = None


class ClientState:
    def __init__(
        self,
        keypair: crypto.SigKeyPair,
        chameleon_kp: crypto.ChameleonKeyPair,
        contract: Contract,
    ):
        self.keypair = keypair
        self.chameleon_kp = chameleon_kp
        self.contract = contract
        self.certs: list[bytes] = []
        self.current_index = 0
        self.rollback_entries: list[RollbackEntry] = []
        self.open_cycle: CycleRecord | None = None
        self.archive: list[CycleRecord] = []
        self.warnings: list[tuple[int, str]] = []
        self._archived_on_disk = 0
        self._rollback_on_disk = 0
        self._rollback_compacted = False

    @property
    def customer(self) -> int:
        return self.contract.customer

    # -- registration ---------------------------------------------------------

    @classmethod
    def register(
        cls,
        channel,
        requested_delta_t: int,
        rng: RandomSource = DEFAULT,
        scheme_id: int = crypto.SCHEME_ED25519,
        group: crypto.GroupParams = crypto.GROUP_2048_256,
    ) -> "ClientState":
        """Create keys, prove trapdoor knowledge, and obtain a contract."""
        keypair = crypto.generate_sig_keypair(scheme_id, rng)
        chameleon_kp = crypto.generate_chameleon_keypair(group, rng)
        proof = crypto.prove_trapdoor(
            chameleon_kp, registration_context(keypair.public), rng
        )
        request = RegistrationRequest(
            pk_a=keypair.public,
            chameleon=chameleon_kp.public,
            trapdoor_proof=proof,
            requested_delta_t=requested_delta_t,
        )
        contract = Contract.from_bytes(channel.request(request.to_bytes()))
        if contract.pk_a != keypair.public or contract.chameleon != chameleon_kp.public:
            raise InsurerMisbehavior("contract does not embed the applicant's keys")
        contract.validate()
        return cls(keypair, chameleon_kp, contract)

    # -- update cycle ----------------------------------------------------------

    def do_update_cycle(self, channel, now: int) -> CycleRecord:
        """Run the certificate-list download exchange and open a cycle."""
        if self.open_cycle is not None:
            raise SequencingError("previous cycle not submitted yet")
        body = channel.request(
            wire.pack(
                wire.REQ_BEGIN_CYCLE, wire.pack(wire.TAG_UINT, wire.u64(self.customer))
            )
        )
        raw = wire.fields(body, wire.TAG_BYTES, wire.TAG_LIST)
        cycleid = raw[0]
        new_certs = wire.decode_list(wire.pack(wire.TAG_LIST, raw[1]))

        digest = wire.cert_list_digest(new_certs)
        payload = wire.encode_signed_payload(
            "Certificates", self.customer, cycleid, now, digest
        )
        sig_a = crypto.sign(self.keypair, payload)
        resp = channel.request(
            wire.pack(
                wire.REQ_ACK_CERTS,
                wire.pack(wire.TAG_UINT, wire.u64(self.customer))
                + wire.pack(wire.TAG_BYTES, cycleid)
                + wire.pack(wire.TAG_UINT, wire.u64(now))
                + wire.pack(wire.TAG_BYTES, sig_a),
            )
        )
        chsig = wire.decode_chameleon_signature(resp)
        ok = crypto.chameleon_verify(
            self.contract.pk_in,
            self.chameleon_kp.public,
            payload,
            chsig,
            context=chameleon_context(self.customer, "Certificates"),
        )
        if not ok:
            raise InsurerMisbehavior("insurer countersignature does not verify")

        index = self.current_index + 1
        if self.current_index > 0:
            delta = compute_rollback(self.certs, new_certs, index)
            self.rollback_entries.append(RollbackEntry(delta, now))
        self.certs = new_certs
        self.current_index = index
        self.open_cycle = CycleRecord(
            cycle_index=index,
            cycleid=cycleid,
            list_size=len(new_certs),
            cert_digest=digest,
            t=now,
            sig_a_certs=sig_a,
            chsig_certs=chsig,
        )
        return self.open_cycle

    # -- browsing --------------------------------------------------------------

    def browse(self, domain: str, server, now: int, rng: RandomSource = DEFAULT) -> BrowseResult:
        """Visit a domain; voucher the connection if its certificate is vetted."""
        if self.open_cycle is None:
            raise SequencingError("no open update cycle")
        existing = self.open_cycle.evidences.get(domain)
        if existing is not None:
            return BrowseResult("reused", existing, existing.cert_bob)
        cert = server.presented_cert
        if cert not in self.certs:
            self.warnings.append((self.open_cycle.cycle_index, domain))
            return BrowseResult("untrusted", None, cert)
        voucher = Voucher(
            self.customer, domain, self.open_cycle.cycleid, rng.bytes(32)
        )
        client_random = tlssim.client_hello(voucher, now)
        transcript = server.handshake(client_random, now, rng)
        evidence = tlssim.extract_evidence(transcript, voucher, cert)
        self.open_cycle.evidences[domain] = evidence
        return BrowseResult("vouched", evidence, cert)

    # -- submission --------------------------------------------------------------

    def _cycle_vouchers(self, record: CycleRecord) -> list[Voucher]:
        return [record.evidences[d].voucher for d in sorted(record.evidences)]

    def submit_cycle(self, channel, now: int, rng: RandomSource = DEFAULT) -> CycleRecord:
        """Commit the cycle's vouchers as a padded Merkle root and archive it."""
        cycle = self.open_cycle
        if cycle is None:
            raise SequencingError("no open update cycle")
        seed = rng.bytes(32)
        tree = merkle.build_tree(
            self._cycle_vouchers(cycle), cycle.list_size, seed,
            self.customer, cycle.cycleid,
        )
        payload = wire.encode_signed_payload(
            "Vouchers", self.customer, cycle.cycleid, now, tree.root
        )
        sig_a = crypto.sign(self.keypair, payload)
        body = channel.request(
            wire.pack(
                wire.REQ_SUBMIT_VOUCHERS,
                wire.pack(wire.TAG_UINT, wire.u64(self.customer))
                + wire.pack(wire.TAG_BYTES, cycle.cycleid)
                + wire.pack(wire.TAG_UINT, wire.u64(now))
                + wire.pack(wire.TAG_BYTES, tree.root)
                + wire.pack(wire.TAG_BYTES, sig_a),
            )
        )
        raw = wire.fields(body, wire.TAG_CHAMELEON_SIG, wire.TAG_UINT)
        chsig = wire.decode_chameleon_signature(
            wire.pack(wire.TAG_CHAMELEON_SIG, raw[0])
        )
        covered = wire.decode_u64(raw[1]) == 1
        ok = crypto.chameleon_verify(
            self.contract.pk_in,
            self.chameleon_kp.public,
            payload,
            chsig,
            context=chameleon_context(self.customer, "Vouchers"),
        )
        if not ok:
            raise InsurerMisbehavior("insurer countersignature does not verify")

        cycle.t_prime = now
        cycle.voucher_root = tree.root
        cycle.sig_a_vouchers = sig_a
        cycle.chsig_vouchers = chsig
        cycle.tree_seed = seed
        cycle.covered = covered
        cycle.covered_self = now - cycle.t <= self.contract.delta_t
        self.archive.append(cycle)
        self.open_cycle = None
        return cycle

    # -- claims -----------------------------------------------------------------

    def reconstruct_list(self, cycle_index: int) -> list[bytes]:
        """Roll the current list back to the one downloaded in cycle_index."""
        if not 1 <= cycle_index <= self.current_index:
            raise NotFoundError(f"no cycle {cycle_index}")
        by_index = {e.delta.cycle_index: e.delta for e in self.rollback_entries}
        certs = list(self.certs)
        for i in range(self.current_index, cycle_index, -1):
            delta = by_index.get(i)
            if delta is None:
                raise CorruptionError(f"rollback delta for cycle {i} is missing")
            certs = apply_rollback(certs, delta)
        return certs

    def _archived(self, cycleid: bytes) -> CycleRecord:
        for record in self.archive:
            if record.cycleid == cycleid:
                return record
        raise NotFoundError("no archived cycle with this cycleid")

    def assemble_claim(self, cycleid: bytes, domain: str) -> Claim:
        """Rebuild the cycle's tree from its seed and bundle a claim file."""
        if domain == PAD_DOMAIN:
            raise ParameterError("cannot claim on a padding leaf")
        record = self._archived(cycleid)
        evidence = record.evidences.get(domain)
        if evidence is None:
            raise NotFoundError(f"no voucher for {domain} in that cycle")
        certs = self.reconstruct_list(record.cycle_index)
        if wire.cert_list_digest(certs) != record.cert_digest:
            raise CorruptionError("reconstructed list does not match the cycle digest")
        tree = merkle.build_tree(
            self._cycle_vouchers(record), record.list_size, record.tree_seed,
            self.customer, cycleid,
        )
        if tree.root != record.voucher_root:
            raise CorruptionError("regenerated tree root does not match submission")
        proof = merkle.prove_inclusion(tree, evidence.voucher)
        try:
            cert_index = certs.index(evidence.cert_bob)
        except ValueError:
            raise NotFoundError("presented certificate is not in that cycle's list")
        return Claim(
            contract=self.contract,
            certs=tuple(certs),
            cycleid=cycleid,
            t=record.t,
            t_prime=record.t_prime,
            chsig_certs=record.chsig_certs,
            chsig_vouchers=record.chsig_vouchers,
            voucher_root=record.voucher_root,
            proof=proof,
            evidence=evidence,
            cert_index=cert_index,
        )

    # -- persistence --------------------------------------------------------------

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        body = (
            wire.encode_public_key(self.keypair.public)
            + wire.pack(wire.TAG_BYTES, self.keypair.secret)
            + wire.encode_group_params(self.chameleon_kp.params)
            + wire.pack(wire.TAG_INT, wire.varint(self.chameleon_kp.x))
            + wire.pack(wire.TAG_INT, wire.varint(self.chameleon_kp.y))
            + self.contract.to_bytes()
            + wire.encode_list(self.certs)
            + wire.pack(wire.TAG_UINT, wire.u64(self.current_index))
            + wire.pack(
                wire.TAG_LIST,
                b"".join(
                    wire.pack(
                        wire.TAG_PAIR,
                        wire.pack(wire.TAG_UINT, wire.u64(index))
                        + wire.pack(wire.TAG_TEXT, wire.text(domain)),
                    )
                    for index, domain in self.warnings
                ),
            )
            + (
                self.open_cycle.to_bytes()
                if self.open_cycle is not None
                else wire.pack(wire.TAG_CYCLE_RECORD, b"")
            )
        )
        tmp = os.path.join(directory, STATE_FILE + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(wire.frame(body))
        os.replace(tmp, os.path.join(directory, STATE_FILE))
        with open(os.path.join(directory, ARCHIVE_FILE), "ab") as fh:
            for record in self.archive[self._archived_on_disk :]:
                fh.write(wire.frame(record.to_bytes()))
        self._archived_on_disk = len(self.archive)
        self._save_rollback_log(directory)

    def _save_rollback_log(self, directory: str) -> None:
        """Append new deltas; pruning compacts the log in one rewrite."""
        path = os.path.join(directory, ROLLBACK_FILE)
        if self._rollback_compacted:
            tmp = path + ".tmp"
            with open(tmp, "wb") as fh:
                for entry in self.rollback_entries:
                    fh.write(wire.frame(_rollback_entry_bytes(entry)))
            os.replace(tmp, path)
            self._rollback_compacted = False
        else:
            with open(path, "ab") as fh:
                for entry in self.rollback_entries[self._rollback_on_disk :]:
                    fh.write(wire.frame(_rollback_entry_bytes(entry)))
        self._rollback_on_disk = len(self.rollback_entries)

    def prune_rollbacks(self, now: int,
                        retention_seconds: int = 365 * 86400) -> int:
        """Drop deltas no live claim can need; returns how many were removed."""
        kept = expire_rollbacks(
            self.rollback_entries, now, retention_seconds,
            validity=(self.contract.t0, self.contract.t_end),
        )
        removed = len(self.rollback_entries) - len(kept)
        if removed:
            self.rollback_entries = kept
            self._rollback_compacted = True
            self._rollback_on_disk = len(kept)
        return removed

    @classmethod
    def load(cls, directory: str) -> "ClientState":
        with open(os.path.join(directory, STATE_FILE), "rb") as fh:
            data = fh.read()
        body = wire.read_frame(wire.buffer_reader(data))
        raw = wire.fields(
            body,
            wire.TAG_PUBKEY,
            wire.TAG_BYTES,
            wire.TAG_GROUP_PARAMS,
            wire.TAG_INT,
            wire.TAG_INT,
            wire.TAG_CONTRACT,
            wire.TAG_LIST,
            wire.TAG_UINT,
            wire.TAG_LIST,
            wire.TAG_CYCLE_RECORD,
        )
        keypair = crypto.SigKeyPair(
            wire.decode_public_key(wire.pack(wire.TAG_PUBKEY, raw[0])), raw[1]
        )
        params = wire.decode_group_params(wire.pack(wire.TAG_GROUP_PARAMS, raw[2]))
        chameleon_kp = crypto.ChameleonKeyPair(
            params, wire.decode_varint(raw[3]), wire.decode_varint(raw[4])
        )
        state = cls(
            keypair,
            chameleon_kp,
            Contract.from_bytes(wire.pack(wire.TAG_CONTRACT, raw[5])),
        )
        state.certs = wire.decode_list(wire.pack(wire.TAG_LIST, raw[6]))
        state.current_index = wire.decode_u64(raw[7])
        for tag, value in wire.iter_items(raw[8]):
            if tag != wire.TAG_PAIR:
                raise EncodingError("bad warning entry")
            index, domain = wire.fields(value, wire.TAG_UINT, wire.TAG_TEXT)
            state.warnings.append((wire.decode_u64(index), wire.decode_text(domain)))
        if raw[9]:
            state.open_cycle = CycleRecord.from_bytes(
                wire.pack(wire.TAG_CYCLE_RECORD, raw[9])
            )

        rollback_path = os.path.join(directory, ROLLBACK_FILE)
        if os.path.exists(rollback_path):
            with open(rollback_path, "rb") as fh:
                blob = fh.read()
            reader = wire.buffer_reader(blob)
            while True:
                try:
                    entry_bytes = wire.read_frame(reader)
                except EncodingError:
                    break
                state.rollback_entries.append(_rollback_entry_from_bytes(entry_bytes))
        state._rollback_on_disk = len(state.rollback_entries)

        archive_path = os.path.join(directory, ARCHIVE_FILE)
        if os.path.exists(archive_path):
            with open(archive_path, "rb") as fh:
                blob = fh.read()
            reader = wire.buffer_reader(blob)
            while True:
                try:
                    record_bytes = wire.read_frame(reader)
                except EncodingError:
                    break
                state.archive.append(CycleRecord.from_bytes(record_bytes))
        state._archived_on_disk = len(state.archive)

        # Evidence completeness: never hold evidence with an invalid signature.
        for record in state.archive:
            for evidence in record.evidences.values():
                tlssim.validate_evidence(evidence)
        if state.open_cycle is not None:
            for evidence in state.open_cycle.evidences.values():
                tlssim.validate_evidence(evidence)
        return state


def _rollback_entry_bytes(entry: RollbackEntry) -> bytes:
    return wire.pack(
        wire.TAG_PAIR,
        entry.delta.to_bytes() + wire.pack(wire.TAG_UINT, wire.u64(entry.cycle_time)),
    )


def _rollback_entry_from_bytes(data: bytes) -> RollbackEntry:
    body = wire.unpack_exact(data, wire.TAG_PAIR)
    delta_tag, delta_body, offset = wire.unpack(body)
    if delta_tag != wire.TAG_ROLLBACK_DELTA:
        raise EncodingError("bad rollback log entry")
    stamp = wire.decode_u64(wire.fields(body[offset:], wire.TAG_UINT)[0])
    return RollbackEntry(
        RollbackDelta.from_bytes(wire.pack(delta_tag, delta_body)), stamp
    )

