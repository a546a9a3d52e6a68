"""Insurer service: cycle state machine, recency, replay protection, the
chameleon-record log, persistence, and the framed endpoints exercised
through raw request bytes."""

import pytest

from conninsure import crypto, wire
from conninsure.errors import (
    ExpiredContractError,
    NotFoundError,
    ParameterError,
    RecencyError,
    RegistrationRejected,
    SequencingError,
    SignatureInvalid,
)
from conninsure.insurer import Insurer, RegistrationRequest, handle_request
from conninsure.model import chameleon_context, registration_context
from conninsure.rand import RandomSource

NOW = 1_700_000_000
CERTS = [b"cert-alpha", b"cert-beta", b"cert-gamma"]


def _registration(rng, group=crypto.TOY_GROUP):
    keypair = crypto.generate_sig_keypair(rng=rng)
    chameleon = crypto.generate_chameleon_keypair(group, rng)
    proof = crypto.prove_trapdoor(
        chameleon, registration_context(keypair.public), rng
    )
    request = RegistrationRequest(
        pk_a=keypair.public,
        chameleon=chameleon.public,
        trapdoor_proof=proof,
        requested_delta_t=86_400,
    )
    return keypair, chameleon, request


@pytest.fixture
def insurer():
    return Insurer.setup(CERTS, rng=RandomSource(11))


@pytest.fixture
def enrolled(insurer):
    rng = RandomSource(12)
    keypair, chameleon, request = _registration(rng)
    contract = insurer.register(request, NOW)
    return insurer, keypair, chameleon, contract, rng


def _ack_payload(contract, cycleid, t, certs):
    return wire.encode_signed_payload(
        "Certificates", contract.customer, cycleid, t, wire.cert_list_digest(certs)
    )


def _run_cycle(insurer, keypair, contract, t, root=b"\x00" * 32, t_prime=None):
    certs, cycleid = insurer.begin_cycle(contract.customer, t)
    payload = _ack_payload(contract, cycleid, t, certs)
    insurer.ack_certificates(
        contract.customer, cycleid, t, crypto.sign(keypair, payload), t
    )
    t_prime = t if t_prime is None else t_prime
    submit = wire.encode_signed_payload(
        "Vouchers", contract.customer, cycleid, t_prime, root
    )
    return insurer.accept_vouchers(
        contract.customer, cycleid, t_prime, root, crypto.sign(keypair, submit), t_prime
    )


class TestSetup:
    def test_initial_list_returned(self, insurer):
        assert insurer.certs == CERTS

    def test_two_setups_distinct_keys(self):
        a = Insurer.setup(CERTS, rng=RandomSource(1))
        b = Insurer.setup(CERTS, rng=RandomSource(2))
        assert a.keypair.public != b.keypair.public

    def test_empty_list_rejected(self):
        with pytest.raises(ParameterError):
            Insurer.setup([])

    def test_persistence_roundtrip(self, tmp_path, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        log = str(tmp_path / "insurer.log")
        persisted = Insurer.setup(CERTS, rng=RandomSource(11), log_path=log)
        request = _registration(RandomSource(12))[2]
        persisted.register(request, NOW)
        c = persisted.contracts[1]
        kp = crypto.generate_sig_keypair(rng=RandomSource(12))
        _run_cycle(persisted, kp, c, NOW + 10)
        persisted.update_cert_list([b"cert-delta"], [])
        snapshot = persisted.snapshot_bytes()
        persisted.close()

        reloaded = Insurer.load(log)
        assert reloaded.snapshot_bytes() == snapshot
        reloaded.close()


class TestRegistration:
    def test_valid_application(self, insurer):
        _, _, request = _registration(RandomSource(3))
        contract = insurer.register(request, NOW)
        assert contract.customer == 1
        assert contract.pk_in == insurer.keypair.public
        assert contract.t0 == NOW

    def test_two_registrations_distinct_customers(self, insurer):
        c1 = insurer.register(_registration(RandomSource(3))[2], NOW)
        c2 = insurer.register(_registration(RandomSource(4))[2], NOW)
        assert c1.customer != c2.customer

    def test_proof_for_different_key_rejected(self, insurer):
        rng = RandomSource(5)
        keypair, chameleon, request = _registration(rng)
        other = crypto.generate_chameleon_keypair(crypto.TOY_GROUP, rng)
        bad = RegistrationRequest(
            request.pk_a, other.public, request.trapdoor_proof, 86_400
        )
        with pytest.raises(RegistrationRejected):
            insurer.register(bad, NOW)


class TestCycleStateMachine:
    def test_first_cycle_succeeds(self, enrolled):
        insurer, _, _, contract, _ = enrolled
        certs, cycleid = insurer.begin_cycle(contract.customer, NOW + 5)
        assert certs == CERTS
        assert len(cycleid) == 32

    def test_second_begin_without_submission(self, enrolled):
        insurer, _, _, contract, _ = enrolled
        insurer.begin_cycle(contract.customer, NOW + 5)
        with pytest.raises(SequencingError):
            insurer.begin_cycle(contract.customer, NOW + 6)

    def test_submit_before_ack_rejected(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        _, cycleid = insurer.begin_cycle(contract.customer, NOW)
        payload = wire.encode_signed_payload(
            "Vouchers", contract.customer, cycleid, NOW, b"\x00" * 32
        )
        with pytest.raises(SequencingError):
            insurer.accept_vouchers(
                contract.customer, cycleid, NOW, b"\x00" * 32,
                crypto.sign(keypair, payload), NOW,
            )

    def test_expired_contract_rejected(self, enrolled):
        insurer, _, _, contract, _ = enrolled
        with pytest.raises(ExpiredContractError):
            insurer.begin_cycle(contract.customer, contract.t_end + 1)

    def test_full_cycle_closes(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        sig, covered = _run_cycle(insurer, keypair, contract, NOW + 10)
        assert covered
        assert contract.customer not in insurer.open_cycles


class TestAckCertificates:
    def test_honest_flow_returns_valid_signature(self, enrolled):
        insurer, keypair, chameleon, contract, _ = enrolled
        certs, cycleid = insurer.begin_cycle(contract.customer, NOW)
        payload = _ack_payload(contract, cycleid, NOW, certs)
        chsig = insurer.ack_certificates(
            contract.customer, cycleid, NOW, crypto.sign(keypair, payload), NOW
        )
        assert crypto.chameleon_verify(
            insurer.keypair.public, chameleon.public, payload, chsig,
            context=chameleon_context(contract.customer, "Certificates"),
        )

    def test_stale_timestamp_rejected(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        certs, cycleid = insurer.begin_cycle(contract.customer, NOW)
        stale = NOW - 301
        payload = _ack_payload(contract, cycleid, stale, certs)
        with pytest.raises(RecencyError):
            insurer.ack_certificates(
                contract.customer, cycleid, stale, crypto.sign(keypair, payload), NOW
            )

    def test_bad_signature_rejected(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        _, cycleid = insurer.begin_cycle(contract.customer, NOW)
        with pytest.raises(SignatureInvalid):
            insurer.ack_certificates(contract.customer, cycleid, NOW, b"junk", NOW)

    def test_unknown_cycleid_rejected(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        insurer.begin_cycle(contract.customer, NOW)
        with pytest.raises(SequencingError):
            insurer.ack_certificates(contract.customer, b"\xff" * 32, NOW, b"sig", NOW)

    def test_cross_customer_replay_rejected(self, insurer):
        """A signature issued by one customer never acks another's cycle."""
        rng_a, rng_b = RandomSource(21), RandomSource(22)
        kp_a, _, req_a = _registration(rng_a)
        kp_b, _, req_b = _registration(rng_b)
        alice = insurer.register(req_a, NOW)
        bob = insurer.register(req_b, NOW)
        certs_a, cid_a = insurer.begin_cycle(alice.customer, NOW)
        certs_b, cid_b = insurer.begin_cycle(bob.customer, NOW)
        sig_alice = crypto.sign(kp_a, _ack_payload(alice, cid_a, NOW, certs_a))
        with pytest.raises(SignatureInvalid):
            insurer.ack_certificates(bob.customer, cid_b, NOW, sig_alice, NOW)


class TestAcceptVouchers:
    def test_boundary_covered(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        _, covered = _run_cycle(
            insurer, keypair, contract, NOW, t_prime=NOW + contract.delta_t
        )
        assert covered is True

    def test_boundary_plus_one_uncovered_but_accepted(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        sig, covered = _run_cycle(
            insurer, keypair, contract, NOW, t_prime=NOW + contract.delta_t + 1
        )
        assert covered is False
        assert sig is not None  # the cycle still closed

    def test_wrong_cycleid_rejected(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        certs, cycleid = insurer.begin_cycle(contract.customer, NOW)
        payload = _ack_payload(contract, cycleid, NOW, certs)
        insurer.ack_certificates(
            contract.customer, cycleid, NOW, crypto.sign(keypair, payload), NOW
        )
        with pytest.raises(SequencingError):
            insurer.accept_vouchers(
                contract.customer, b"\xee" * 32, NOW, b"\x00" * 32, b"sig", NOW
            )


class TestUpdateCertList:
    def test_add_one(self, insurer):
        insurer.update_cert_list([b"cert-new"], [])
        assert len(insurer.certs) == 4

    def test_remove_restores(self, insurer):
        insurer.update_cert_list([b"cert-new"], [])
        insurer.update_cert_list([], [b"cert-new"])
        assert insurer.certs == CERTS

    def test_remove_nonmember_rejected(self, insurer):
        with pytest.raises(NotFoundError):
            insurer.update_cert_list([], [b"never-there"])

    def test_cycles_pin_their_snapshot(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        certs1, cycleid1 = insurer.begin_cycle(contract.customer, NOW)
        insurer.update_cert_list([b"cert-new"], [])
        # the open cycle still acks against its own snapshot
        payload = _ack_payload(contract, cycleid1, NOW, certs1)
        insurer.ack_certificates(
            contract.customer, cycleid1, NOW, crypto.sign(keypair, payload), NOW
        )
        submit = wire.encode_signed_payload(
            "Vouchers", contract.customer, cycleid1, NOW, b"\x00" * 32
        )
        insurer.accept_vouchers(
            contract.customer, cycleid1, NOW, b"\x00" * 32,
            crypto.sign(keypair, submit), NOW,
        )
        certs2, _ = insurer.begin_cycle(contract.customer, NOW)
        assert certs2 == CERTS + [b"cert-new"]


class TestRecordLog:
    def test_recorded_message_found(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        _run_cycle(insurer, keypair, contract, NOW)
        record = insurer.records[-1]
        assert insurer.lookup_record(ch=record.ch) == (record.message, record.r)
        assert insurer.lookup_record(
            message_digest=crypto.hash_h(record.message)
        ) == (record.message, record.r)

    def test_never_signed_message_absent(self, insurer):
        assert insurer.lookup_record(ch=b"\x00" * 10) is None
        assert insurer.lookup_record(message_digest=b"\x00" * 32) is None

    def test_forged_collision_finds_original(self, enrolled):
        """The record log lets the judge uncover trapdoor forgeries."""
        insurer, keypair, chameleon, contract, _ = enrolled
        _run_cycle(insurer, keypair, contract, NOW)
        record = insurer.records[-1]
        forged_message = b"entirely-different-bytes"
        forged_r = crypto.find_collision(
            chameleon, record.message, record.r, forged_message
        )
        forged_ch = chameleon.params.element_bytes(
            crypto.chameleon_hash(
                chameleon.params, chameleon.y, forged_message, forged_r
            )
        )
        found = insurer.lookup_record(ch=forged_ch)
        assert found == (record.message, record.r)
        assert found[0] != forged_message

    def test_log_monotonic(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        lengths = [len(insurer.records)]
        _run_cycle(insurer, keypair, contract, NOW)
        lengths.append(len(insurer.records))
        _run_cycle(insurer, keypair, contract, NOW + 400)
        lengths.append(len(insurer.records))
        assert lengths == sorted(lengths) and lengths[-1] == 4

    def test_every_signature_has_one_record(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        _run_cycle(insurer, keypair, contract, NOW)
        assert len(insurer.records) == 2  # one ack + one submission


class TestCycleidUniqueness:
    def test_many_cycles_all_distinct(self, enrolled):
        insurer, keypair, _, contract, _ = enrolled
        seen = set()
        for i in range(500):
            _, cycleid = insurer.begin_cycle(contract.customer, NOW + i)
            assert cycleid not in seen
            seen.add(cycleid)
            certs = insurer.open_cycles[contract.customer].certs
            t = NOW + i
            payload = _ack_payload(contract, cycleid, t, certs)
            insurer.ack_certificates(
                contract.customer, cycleid, t, crypto.sign(keypair, payload), t
            )
            submit = wire.encode_signed_payload(
                "Vouchers", contract.customer, cycleid, t, b"\x00" * 32
            )
            insurer.accept_vouchers(
                contract.customer, cycleid, t, b"\x00" * 32,
                crypto.sign(keypair, submit), t,
            )


class TestEndpointSurfaces:
    """Drive the wire-level endpoints with raw frames."""

    def test_register_endpoint(self, insurer):
        _, _, request = _registration(RandomSource(31))
        response = handle_request(insurer, request.to_bytes(), NOW)
        tag, body, _ = wire.unpack(response)
        assert tag == wire.RESP_OK
        from conninsure.model import Contract

        contract = Contract.from_bytes(body)
        assert contract.customer == 1

    def test_begin_ack_submit_lookup_endpoints(self, insurer):
        keypair, chameleon, request = _registration(RandomSource(32))
        handle_request(insurer, request.to_bytes(), NOW)
        contract = insurer.contracts[1]

        begin = wire.pack(
            wire.REQ_BEGIN_CYCLE, wire.pack(wire.TAG_UINT, wire.u64(1))
        )
        tag, body, _ = wire.unpack(handle_request(insurer, begin, NOW))
        assert tag == wire.RESP_OK
        raw = wire.fields(body, wire.TAG_BYTES, wire.TAG_LIST)
        cycleid = raw[0]
        certs = wire.decode_list(wire.pack(wire.TAG_LIST, raw[1]))
        assert certs == CERTS

        payload = _ack_payload(contract, cycleid, NOW, certs)
        ack = wire.pack(
            wire.REQ_ACK_CERTS,
            wire.pack(wire.TAG_UINT, wire.u64(1))
            + wire.pack(wire.TAG_BYTES, cycleid)
            + wire.pack(wire.TAG_UINT, wire.u64(NOW))
            + wire.pack(wire.TAG_BYTES, crypto.sign(keypair, payload)),
        )
        tag, body, _ = wire.unpack(handle_request(insurer, ack, NOW))
        assert tag == wire.RESP_OK
        chsig = wire.decode_chameleon_signature(body)
        assert crypto.chameleon_verify(
            insurer.keypair.public, chameleon.public, payload, chsig
        )

        root = b"\x07" * 32
        submit_payload = wire.encode_signed_payload("Vouchers", 1, cycleid, NOW, root)
        submit = wire.pack(
            wire.REQ_SUBMIT_VOUCHERS,
            wire.pack(wire.TAG_UINT, wire.u64(1))
            + wire.pack(wire.TAG_BYTES, cycleid)
            + wire.pack(wire.TAG_UINT, wire.u64(NOW))
            + wire.pack(wire.TAG_BYTES, root)
            + wire.pack(wire.TAG_BYTES, crypto.sign(keypair, submit_payload)),
        )
        tag, body, _ = wire.unpack(handle_request(insurer, submit, NOW))
        assert tag == wire.RESP_OK
        raw = wire.fields(body, wire.TAG_CHAMELEON_SIG, wire.TAG_UINT)
        assert wire.decode_u64(raw[1]) == 1  # covered

        record = insurer.records[-1]
        lookup = wire.pack(
            wire.REQ_LOOKUP_RECORD,
            wire.pack(wire.TAG_UINT, wire.u64(0)) + wire.pack(wire.TAG_BYTES, record.ch),
        )
        tag, body, _ = wire.unpack(handle_request(insurer, lookup, NOW))
        assert tag == wire.RESP_OK
        raw = wire.fields(body, wire.TAG_UINT, wire.TAG_BYTES, wire.TAG_INT)
        assert wire.decode_u64(raw[0]) == 1
        assert raw[1] == record.message

    def test_error_response_carries_code(self, insurer):
        begin = wire.pack(
            wire.REQ_BEGIN_CYCLE, wire.pack(wire.TAG_UINT, wire.u64(999))
        )
        tag, body, _ = wire.unpack(handle_request(insurer, begin, NOW))
        assert tag == wire.RESP_ERR
        raw = wire.fields(body, wire.TAG_UINT, wire.TAG_TEXT)
        from conninsure.insurer import ERR_NOT_FOUND

        assert wire.decode_u64(raw[0]) == ERR_NOT_FOUND

    def test_unknown_endpoint_is_encoding_error(self, insurer):
        bogus = wire.pack(0x7F, b"")
        tag, body, _ = wire.unpack(handle_request(insurer, bogus, NOW))
        assert tag == wire.RESP_ERR
