import random

import pytest

from fairex.chain import CHAIN_ID
from fairex.criteria import AttributeSet, Criterion, Equals
from fairex.crypto_suite import SigKeyPair, SymKey, hash_data
from fairex.errors import DuplicateBid, DuplicateSid, IgnoreReason
from fairex.parties import (
    MULTICAST,
    Buyer,
    CertificateMutation,
    KeyDirectory,
    KeyGuessingSeller,
    Notary,
    OutputKind,
    Seller,
    TamperingNotary,
    WithholdingSeller,
    build_corrupted_notary,
    build_corrupted_seller,
    certificate_problem,
)
from fairex.wire import (
    Buying,
    Cert,
    Channel,
    ContractClose,
    ContractOpen,
    LedgerUpdate,
    OfferId,
    Selling,
    SessionId,
)

pytestmark = pytest.mark.unit


def _cert(notary: Notary, sid: SessionId, plaintext: bytes, attrs: AttributeSet) -> Cert:
    reaction = notary.certify(sid, "seller", plaintext, attrs, random.Random("cert"))
    message = reaction.sends[0].message
    assert isinstance(message, Cert)
    return message


@pytest.fixture
def cert(notary: Notary, sid: SessionId, plaintext: bytes, attributes: AttributeSet) -> Cert:
    return _cert(notary, sid, plaintext, attributes)


@pytest.fixture
def seller(directory: KeyDirectory) -> Seller:
    return Seller("seller", directory)


@pytest.fixture
def buyer(directory: KeyDirectory) -> Buyer:
    return Buyer("buyer", directory)


def _selling(seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion) -> Selling:
    seller.handle_cert(cert)
    seller.handle_offer(Buying(bid, criterion))
    reaction = seller.sell(cert.sid, bid)
    message = reaction.sends[0].message
    assert isinstance(message, Selling)
    return message


class TestNotary:
    def test_certify_sends_confidential_cert(
        self, notary: Notary, sid: SessionId, plaintext: bytes, attributes: AttributeSet
    ) -> None:
        reaction = notary.certify(sid, "seller", plaintext, attributes, random.Random(1))
        (send,) = reaction.sends
        assert send.receiver == "seller"
        assert send.channel is Channel.CONFIDENTIAL
        cert = send.message
        assert isinstance(cert, Cert)
        assert cert.key_hash == hash_data(cert.key.raw)
        assert cert.ciphertext_hash == hash_data(cert.ciphertext.to_bytes())

    def test_duplicate_sid(
        self, notary: Notary, sid: SessionId, attributes: AttributeSet
    ) -> None:
        notary.certify(sid, "seller", b"m", attributes, random.Random(1))
        with pytest.raises(DuplicateSid):
            notary.certify(sid, "seller", b"m", attributes, random.Random(1))

    def test_foreign_sid(self, notary: Notary, attributes: AttributeSet) -> None:
        with pytest.raises(ValueError):
            notary.certify(
                SessionId.from_label("other", "x"), "seller", b"m", attributes, random.Random(1)
            )

    def test_ignores_network(self, notary: Notary, bid: OfferId, criterion: Criterion) -> None:
        reaction = notary.handle("buyer", Buying(bid, criterion))
        assert reaction.ignored is IgnoreReason.UNEXPECTED_MESSAGE


class TestCertificateChecks:
    def test_honest_certificate_passes(self, cert: Cert, notary_keypair: SigKeyPair) -> None:
        assert certificate_problem(cert, notary_keypair.verify_key) is None

    @pytest.mark.parametrize(
        ("mutation", "reason"),
        [
            (CertificateMutation.BAD_SIGNATURE, IgnoreReason.CERT_BAD_SIGNATURE),
            (CertificateMutation.CIPHERTEXT_HASH, IgnoreReason.CERT_CIPHERTEXT_HASH_MISMATCH),
            (CertificateMutation.KEY_HASH, IgnoreReason.CERT_KEY_HASH_MISMATCH),
            (CertificateMutation.PLAINTEXT_MISMATCH, IgnoreReason.CERT_PLAINTEXT_MISMATCH),
        ],
    )
    def test_each_mutation_fails_one_check(
        self,
        mutation: CertificateMutation,
        reason: IgnoreReason,
        notary_keypair: SigKeyPair,
        directory: KeyDirectory,
        sid: SessionId,
        plaintext: bytes,
        attributes: AttributeSet,
    ) -> None:
        bad = _cert(TamperingNotary("notary", notary_keypair, mutation), sid, plaintext, attributes)
        assert certificate_problem(bad, notary_keypair.verify_key) is reason
        seller = Seller("seller", directory)
        assert seller.handle_cert(bad).ignored is reason
        assert sid not in seller.certificates

    def test_false_plaintext_is_consistent(
        self,
        notary_keypair: SigKeyPair,
        sid: SessionId,
        plaintext: bytes,
        attributes: AttributeSet,
    ) -> None:
        notary = TamperingNotary(
            "notary", notary_keypair, CertificateMutation.FALSE_PLAINTEXT, b"fake"
        )
        cert = _cert(notary, sid, plaintext, attributes)
        assert cert.plaintext == b"fake"
        assert certificate_problem(cert, notary_keypair.verify_key) is None

    def test_unknown_notary(self, cert: Cert) -> None:
        seller = Seller("seller", KeyDirectory())
        assert seller.handle_cert(cert).ignored is IgnoreReason.CERT_UNKNOWN_NOTARY

    def test_non_notary_key_is_not_trusted(self, cert: Cert, notary_keypair: SigKeyPair) -> None:
        keys = KeyDirectory()
        keys.register("notary", notary_keypair.verify_key, notary=False)
        assert keys.retrieve("notary") == notary_keypair.verify_key
        assert keys.notary_key("notary") is None
        assert Seller("seller", keys).handle_cert(cert).ignored is IgnoreReason.CERT_UNKNOWN_NOTARY
        with pytest.raises(ValueError):
            keys.register("notary", notary_keypair.verify_key)


class TestSeller:
    def test_cert_received_once(self, seller: Seller, cert: Cert) -> None:
        first = seller.handle_cert(cert)
        assert [o.kind for o in first.outputs] == [OutputKind.CERT_RECEIVED]
        assert first.outputs[0].ref == "notary/cert-1"
        assert seller.handle_cert(cert).ignored is IgnoreReason.CERT_DUPLICATE_SID

    def test_offer_received_once(self, seller: Seller, bid: OfferId, criterion: Criterion) -> None:
        assert seller.handle_offer(Buying(bid, criterion)).outputs[0].kind is OutputKind.OFFER_RECEIVED
        again = seller.handle_offer(Buying(bid, Criterion(())))
        assert again.ignored is IgnoreReason.OFFER_DUPLICATE_BID
        assert seller.offers[bid] == criterion

    def test_sell_order_of_checks(
        self, seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        assert seller.sell(cert.sid, bid).ignored is IgnoreReason.SELL_UNKNOWN_CERT
        seller.handle_cert(cert)
        assert seller.sell(cert.sid, bid).ignored is IgnoreReason.SELL_UNKNOWN_OFFER
        seller.handle_offer(Buying(bid, criterion))
        reaction = seller.sell(cert.sid, bid)
        (send,) = reaction.sends
        assert send.receiver == "buyer"
        assert send.channel is Channel.CONFIDENTIAL
        assert seller.sell(cert.sid, bid).ignored is IgnoreReason.SELL_BID_COMMITTED
        other = OfferId.from_label("buyer", "offer-2")
        seller.handle_offer(Buying(other, criterion))
        assert seller.sell(cert.sid, other).ignored is IgnoreReason.SELL_CERT_COMMITTED

    def test_sell_criterion_mismatch(self, seller: Seller, cert: Cert, bid: OfferId) -> None:
        seller.handle_cert(cert)
        seller.handle_offer(Buying(bid, Criterion((Equals("smoker", True),))))
        assert seller.sell(cert.sid, bid).ignored is IgnoreReason.SELL_CRITERION_MISMATCH
        assert bid not in seller.pending

    def test_open_reveals_key_once(
        self, seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        _selling(seller, cert, bid, criterion)
        event = ContractOpen(bid, cert.key_hash, 1)
        (send,) = seller.handle(CHAIN_ID, event).sends
        assert send.receiver == CHAIN_ID
        assert send.channel is Channel.PUBLIC
        assert send.message == ContractClose(bid, cert.key)
        assert seller.handle(CHAIN_ID, event).ignored is IgnoreReason.OPEN_ALREADY_ANSWERED

    def test_open_with_wrong_terms(
        self, seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        _selling(seller, cert, bid, criterion)
        wrong_lock = ContractOpen(bid, hash_data(b"other"), 1)
        assert seller.handle(CHAIN_ID, wrong_lock).ignored is IgnoreReason.OPEN_TERMS_MISMATCH
        wrong_price = ContractOpen(bid, cert.key_hash, 2)
        assert seller.handle(CHAIN_ID, wrong_price).ignored is IgnoreReason.OPEN_TERMS_MISMATCH

    def test_open_not_pending(self, seller: Seller, bid: OfferId) -> None:
        event = ContractOpen(bid, hash_data(b"x"), 1)
        assert seller.handle(CHAIN_ID, event).ignored is IgnoreReason.OPEN_NOT_PENDING

    def test_tape_event_from_non_chain_ignored(
        self, seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        _selling(seller, cert, bid, criterion)
        forged = ContractOpen(bid, cert.key_hash, 1)
        assert seller.handle("adversary", forged).ignored is IgnoreReason.UNEXPECTED_MESSAGE
        assert bid not in seller.answered

    def test_payment_reported_once(
        self, seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        _selling(seller, cert, bid, criterion)
        seller.handle(CHAIN_ID, ContractOpen(bid, cert.key_hash, 1))
        update = LedgerUpdate(bid, "seller", 1, (("buyer", 0), ("seller", 1)))
        (output,) = seller.handle(CHAIN_ID, update).outputs
        assert output.kind is OutputKind.PAYMENT_RECEIVED
        assert seller.handle(CHAIN_ID, update).ignored is IgnoreReason.LEDGER_ALREADY_REPORTED

    def test_payment_to_someone_else(
        self, seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        _selling(seller, cert, bid, criterion)
        seller.handle(CHAIN_ID, ContractOpen(bid, cert.key_hash, 1))
        update = LedgerUpdate(bid, "adversary", 1, (("adversary", 1), ("buyer", 0)))
        assert seller.handle(CHAIN_ID, update).ignored is IgnoreReason.LEDGER_NO_PAYMENT


class TestBuyer:
    def test_offer_is_public_multicast(self, buyer: Buyer, bid: OfferId, criterion: Criterion) -> None:
        (send,) = buyer.make_offer(bid, criterion).sends
        assert send.receiver == MULTICAST
        assert send.channel is Channel.PUBLIC
        with pytest.raises(DuplicateBid):
            buyer.make_offer(bid, criterion)

    def test_foreign_bid(self, buyer: Buyer, criterion: Criterion) -> None:
        with pytest.raises(ValueError):
            buyer.make_offer(OfferId.from_label("someone", "x"), criterion)

    def test_valid_selling_opens_contract_once(
        self, buyer: Buyer, seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        buyer.make_offer(bid, criterion)
        selling = _selling(seller, cert, bid, criterion)
        (send,) = buyer.handle("seller", selling).sends
        assert send.receiver == CHAIN_ID
        assert send.message == ContractOpen(bid, cert.key_hash, 1)
        assert buyer.handle("seller", selling).ignored is IgnoreReason.SELLING_ALREADY_OPENED

    def test_selling_checks(
        self, buyer: Buyer, seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        selling = _selling(seller, cert, bid, criterion)
        assert buyer.handle("seller", selling).ignored is IgnoreReason.SELLING_UNKNOWN_OFFER
        buyer.make_offer(bid, Criterion((Equals("smoker", True),)))
        assert (
            buyer.handle("seller", selling).ignored is IgnoreReason.SELLING_CRITERION_MISMATCH
        )

    def test_selling_with_bad_hash_or_signature(
        self, buyer: Buyer, seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        buyer.make_offer(bid, criterion)
        selling = _selling(seller, cert, bid, criterion)
        unknown = Selling(
            selling.bid, "ghost", selling.ciphertext, selling.attributes,
            selling.ciphertext_hash, selling.key_hash, selling.signature,
        )
        assert buyer.handle("seller", unknown).ignored is IgnoreReason.SELLING_UNKNOWN_NOTARY
        forged = Selling(
            selling.bid, selling.notary_id, selling.ciphertext,
            AttributeSet.of({"age": 40, "country": "NL"}),
            selling.ciphertext_hash, selling.key_hash, selling.signature,
        )
        assert buyer.handle("seller", forged).ignored is IgnoreReason.SELLING_BAD_SIGNATURE

    def test_close_decrypts(
        self, buyer: Buyer, seller: Seller, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        buyer.make_offer(bid, criterion)
        buyer.handle("seller", _selling(seller, cert, bid, criterion))
        assert buyer.handle("seller", ContractClose(bid, cert.key)).ignored is (
            IgnoreReason.UNEXPECTED_MESSAGE
        )
        wrong = ContractClose(bid, SymKey(b"\x00" * 32))
        assert buyer.handle(CHAIN_ID, wrong).ignored is IgnoreReason.CLOSE_KEY_MISMATCH
        (output,) = buyer.handle(CHAIN_ID, ContractClose(bid, cert.key)).outputs
        assert output.kind is OutputKind.MESSAGE
        assert output.payload == cert.plaintext
        assert not output.failed
        assert (
            buyer.handle(CHAIN_ID, ContractClose(bid, cert.key)).ignored
            is IgnoreReason.CLOSE_ALREADY_COMPLETE
        )

    def test_close_without_purchase(self, buyer: Buyer, bid: OfferId) -> None:
        close = ContractClose(bid, SymKey(b"\x00" * 32))
        assert buyer.handle(CHAIN_ID, close).ignored is IgnoreReason.CLOSE_NOT_PENDING


class TestCorruptedSellers:
    def test_key_guessing_sends_wrong_keys_first(
        self, directory: KeyDirectory, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        seller = KeyGuessingSeller("seller", directory, random.Random(3), wrong_keys=3)
        _selling(seller, cert, bid, criterion)
        sends = seller.handle(CHAIN_ID, ContractOpen(bid, cert.key_hash, 1)).sends
        keys = [s.message.key for s in sends if isinstance(s.message, ContractClose)]
        assert len(keys) == 4
        assert keys[-1] == cert.key
        assert all(hash_data(k.raw) != cert.key_hash for k in keys[:-1])

    def test_withholding_sends_nothing(
        self, directory: KeyDirectory, cert: Cert, bid: OfferId, criterion: Criterion
    ) -> None:
        seller = WithholdingSeller("seller", directory)
        _selling(seller, cert, bid, criterion)
        assert seller.handle(CHAIN_ID, ContractOpen(bid, cert.key_hash, 1)).sends == []

    def test_factories(self, directory: KeyDirectory, notary_keypair: SigKeyPair) -> None:
        seller = build_corrupted_seller(
            "seller", directory, "wrong-keys", {"wrong_keys": 2}, random.Random(0)
        )
        assert isinstance(seller, KeyGuessingSeller)
        assert seller.wrong_keys == 2
        notary = build_corrupted_notary(
            "notary", notary_keypair, "false-plaintext", {"replacement_hex": "abcd"}
        )
        assert isinstance(notary, TamperingNotary)
        assert notary.replacement == b"\xab\xcd"
        with pytest.raises(ValueError):
            build_corrupted_seller("seller", directory, "lie", {}, random.Random(0))
        with pytest.raises(ValueError):
            build_corrupted_notary("notary", notary_keypair, "lie", {})
