"""
Notary, seller and buyer state machines.

Each party is a single-threaded deterministic state machine. Handlers never
touch the network: they return a ``Reaction`` listing the messages to send,
the outputs to report to the environment, and, when the input was dropped,
the ``IgnoreReason``. The simulator applies reactions.

The Byzantine replacements used for static corruption live at the bottom of
this module.
"""

from __future__ import annotations

import logging
import random
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from fairex.chain import CHAIN_ID
from fairex.criteria import AttributeSet, Criterion, eval_criterion
from fairex.crypto_suite import (
    Ciphertext,
    Digest,
    SigKeyPair,
    Signature,
    SymKey,
    decrypt,
    encrypt,
    gen_key,
    hash_data,
    sign,
    verify,
)
from fairex.errors import (
    AuthenticationFailure,
    DuplicateBid,
    DuplicateSid,
    IgnoreReason,
    MalformedKey,
)
from fairex.wire import (
    Buying,
    Cert,
    Channel,
    ContractClose,
    ContractOpen,
    LedgerUpdate,
    Message,
    OfferId,
    Selling,
    SessionId,
    encode_cert_body,
)

logger = logging.getLogger(__name__)

# Receiver of a multicast; the simulator fans it out to every seller
MULTICAST = "*"


class Role(str, Enum):
    NOTARY = "notary"
    SELLER = "seller"
    BUYER = "buyer"


class OutputKind(str, Enum):
    CERT_RECEIVED = "CertReceived"
    OFFER_RECEIVED = "OfferReceived"
    MESSAGE = "Message"
    PAYMENT_RECEIVED = "PaymentReceived"


@dataclass(frozen=True)
class PartyOutput:
    """
    An output a party hands to its environment.

    ``payload`` is only set for Message outputs; ``failed`` marks the
    Message(bid, ⊥) case where the published key did not decrypt C.
    """

    party: str
    kind: OutputKind
    ref: str
    payload: bytes | None = None
    failed: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "party": self.party,
            "kind": self.kind.value,
            "ref": self.ref,
            "payload": self.payload.hex() if self.payload is not None else None,
            "failed": self.failed,
        }


@dataclass(frozen=True)
class Outbound:
    """A message a party wants sent."""

    receiver: str
    channel: Channel
    message: Message


@dataclass
class Reaction:
    """Everything a handler produced for one input."""

    sends: list[Outbound] = field(default_factory=list)
    outputs: list[PartyOutput] = field(default_factory=list)
    ignored: IgnoreReason | None = None

    @classmethod
    def ignore(cls, reason: IgnoreReason) -> Reaction:
        return cls(ignored=reason)


class KeyDirectory:
    """
    Static registry of verify keys, filled before a run starts.

    Stands in for the certification authority: parties look up the notary's
    verify key here instead of trusting a key carried in a message.
    """

    def __init__(self) -> None:
        self._keys: dict[str, bytes] = {}
        self._notaries: set[str] = set()

    def register(self, party_id: str, verify_key: bytes, notary: bool = False) -> None:
        """
        Register a party's verify key.

        Raises:
            ValueError: If the party already registered a key
        """
        if party_id in self._keys:
            raise ValueError(f"party {party_id} already registered")
        self._keys[party_id] = verify_key
        if notary:
            self._notaries.add(party_id)

    def retrieve(self, party_id: str) -> bytes | None:
        return self._keys.get(party_id)

    def notary_key(self, party_id: str) -> bytes | None:
        """Verify key of ``party_id`` if it is a registered notary."""
        return self._keys.get(party_id) if party_id in self._notaries else None

    def notaries(self) -> dict[str, bytes]:
        return {party: self._keys[party] for party in sorted(self._notaries)}


def signature_valid(
    verify_key: bytes,
    attributes: AttributeSet,
    ciphertext_hash: Digest,
    key_hash: Digest,
    signature: Signature,
) -> bool:
    """Check a notary signature over CertBody(s, Y, X); malformed keys fail."""
    message = encode_cert_body(attributes, ciphertext_hash, key_hash)
    try:
        return verify(verify_key, message, signature)
    except MalformedKey:
        return False


def certificate_problem(cert: Cert, verify_key: bytes) -> IgnoreReason | None:
    """
    Run the four certificate checks of the seller, in order.

    Args:
        cert: Certificate as received
        verify_key: The issuing notary's verify key

    Returns:
        None when the signature is valid, Y = H(C), X = H(K) and
        Dec(K, C) = M; otherwise the reason of the first failing check
    """
    if not signature_valid(
        verify_key, cert.attributes, cert.ciphertext_hash, cert.key_hash, cert.signature
    ):
        return IgnoreReason.CERT_BAD_SIGNATURE
    if hash_data(cert.ciphertext.to_bytes()) != cert.ciphertext_hash:
        return IgnoreReason.CERT_CIPHERTEXT_HASH_MISMATCH
    if hash_data(cert.key.raw) != cert.key_hash:
        return IgnoreReason.CERT_KEY_HASH_MISMATCH
    try:
        plaintext = decrypt(cert.key, cert.ciphertext)
    except AuthenticationFailure:
        return IgnoreReason.CERT_PLAINTEXT_MISMATCH
    if plaintext != cert.plaintext:
        return IgnoreReason.CERT_PLAINTEXT_MISMATCH
    return None


class Notary:
    """
    The notary: encrypts the seller's data under a fresh key and signs the
    commitments (s, H(C), H(K)).

    Args:
        party_id: The notary's id; every sid it certifies is (party_id, suffix)
        keypair: Signing key pair whose verify key is in the key directory
    """

    role = Role.NOTARY

    def __init__(self, party_id: str, keypair: SigKeyPair) -> None:
        self.party_id = party_id
        self.keypair = keypair
        self.used_sids: set[SessionId] = set()

    def certify(
        self,
        sid: SessionId,
        seller_id: str,
        plaintext: bytes,
        attributes: AttributeSet,
        rng: random.Random,
    ) -> Reaction:
        """
        Certify ``plaintext`` and ``attributes`` for ``seller_id``.

        Args:
            sid: Fresh session id owned by this notary
            seller_id: Seller the certificate is sent to
            plaintext: The data M
            attributes: The seller attribute set s
            rng: Seeded randomness for K and the encryption nonce

        Returns:
            Reaction sending Cert(sid, K, M, C, s, Y, X, sigma) to the seller
            over a confidential channel

        Raises:
            DuplicateSid: If this notary already used ``sid``
            ValueError: If ``sid`` does not belong to this notary
        """
        if sid.notary_id != self.party_id:
            raise ValueError(f"sid {sid} is not owned by notary {self.party_id}")
        if sid in self.used_sids:
            raise DuplicateSid(f"sid {sid} was already certified")
        self.used_sids.add(sid)
        cert = self._build_certificate(sid, plaintext, attributes, rng)
        logger.debug("Notary %s certified %s for %s", self.party_id, sid, seller_id)
        return Reaction(sends=[Outbound(seller_id, Channel.CONFIDENTIAL, cert)])

    def handle(self, sender: str, message: Message) -> Reaction:
        """The notary reacts to no network message."""
        return Reaction.ignore(IgnoreReason.UNEXPECTED_MESSAGE)

    def _build_certificate(
        self,
        sid: SessionId,
        plaintext: bytes,
        attributes: AttributeSet,
        rng: random.Random,
    ) -> Cert:
        key = gen_key(rng)
        ciphertext = encrypt(key, plaintext, rng)
        ciphertext_hash = hash_data(ciphertext.to_bytes())
        key_hash = hash_data(key.raw)
        return Cert(
            sid=sid,
            key=key,
            plaintext=plaintext,
            ciphertext=ciphertext,
            attributes=attributes,
            ciphertext_hash=ciphertext_hash,
            key_hash=key_hash,
            signature=self._sign(attributes, ciphertext_hash, key_hash),
        )

    def _sign(
        self, attributes: AttributeSet, ciphertext_hash: Digest, key_hash: Digest
    ) -> Signature:
        return sign(
            self.keypair.signing_key,
            encode_cert_body(attributes, ciphertext_hash, key_hash),
        )


class Seller:
    """
    The seller: stores verified certificates and offers, answers matching
    offers, and reveals K once the buyer's contract is on the chain.

    Args:
        party_id: The seller's id
        directory: Key directory used to look up the notary's verify key
        price: Contract amount the seller expects for one sale
    """

    role = Role.SELLER

    def __init__(self, party_id: str, directory: KeyDirectory, price: int = 1) -> None:
        self.party_id = party_id
        self.directory = directory
        self.price = price
        self.certificates: dict[SessionId, Cert] = {}
        self.offers: dict[OfferId, Criterion] = {}
        # One pending sale per certificate: K is consumed by settlement
        self.pending: dict[OfferId, SessionId] = {}
        self.committed: dict[SessionId, OfferId] = {}
        self.answered: set[OfferId] = set()
        self.paid: set[OfferId] = set()

    def handle(self, sender: str, message: Message) -> Reaction:
        """Dispatch a delivered message to its handler."""
        if isinstance(message, Cert):
            return self.handle_cert(message)
        if isinstance(message, Buying):
            return self.handle_offer(message)
        # Tape events are only believed when they come from the chain
        if isinstance(message, ContractOpen) and sender == CHAIN_ID:
            return self.handle_open(message)
        if isinstance(message, LedgerUpdate) and sender == CHAIN_ID:
            return self.handle_ledger(message)
        return Reaction.ignore(IgnoreReason.UNEXPECTED_MESSAGE)

    def handle_cert(self, cert: Cert) -> Reaction:
        """
        Validate and store a certificate.

        Returns:
            Reaction with a CertReceived(sid) output, or the reason the
            certificate was ignored
        """
        if cert.sid in self.certificates:
            return Reaction.ignore(IgnoreReason.CERT_DUPLICATE_SID)
        verify_key = self.directory.notary_key(cert.sid.notary_id)
        if verify_key is None:
            return Reaction.ignore(IgnoreReason.CERT_UNKNOWN_NOTARY)
        problem = certificate_problem(cert, verify_key)
        if problem is not None:
            logger.debug("Seller %s rejected certificate %s: %s", self.party_id, cert.sid, problem.value)
            return Reaction.ignore(problem)
        self.certificates[cert.sid] = cert
        return Reaction(
            outputs=[PartyOutput(self.party_id, OutputKind.CERT_RECEIVED, str(cert.sid))]
        )

    def handle_offer(self, offer: Buying) -> Reaction:
        """Store the first offer seen for each bid."""
        if offer.bid in self.offers:
            return Reaction.ignore(IgnoreReason.OFFER_DUPLICATE_BID)
        self.offers[offer.bid] = offer.criterion
        return Reaction(
            outputs=[PartyOutput(self.party_id, OutputKind.OFFER_RECEIVED, str(offer.bid))]
        )

    def sell(self, sid: SessionId, bid: OfferId) -> Reaction:
        """
        Answer offer ``bid`` with certificate ``sid`` if the criterion matches.

        Returns:
            Reaction sending Selling to the buyer over a confidential channel,
            or the reason nothing was sent
        """
        cert = self.certificates.get(sid)
        if cert is None:
            return Reaction.ignore(IgnoreReason.SELL_UNKNOWN_CERT)
        criterion = self.offers.get(bid)
        if criterion is None:
            return Reaction.ignore(IgnoreReason.SELL_UNKNOWN_OFFER)
        if bid in self.pending:
            return Reaction.ignore(IgnoreReason.SELL_BID_COMMITTED)
        if sid in self.committed:
            return Reaction.ignore(IgnoreReason.SELL_CERT_COMMITTED)
        if not eval_criterion(cert.attributes, criterion):
            return Reaction.ignore(IgnoreReason.SELL_CRITERION_MISMATCH)

        self.pending[bid] = sid
        self.committed[sid] = bid
        selling = Selling(
            bid=bid,
            notary_id=sid.notary_id,
            ciphertext=cert.ciphertext,
            attributes=cert.attributes,
            ciphertext_hash=cert.ciphertext_hash,
            key_hash=cert.key_hash,
            signature=cert.signature,
        )
        return Reaction(sends=[Outbound(bid.buyer_id, Channel.CONFIDENTIAL, selling)])

    def handle_open(self, event: ContractOpen) -> Reaction:
        """
        Reveal K for a pending sale once its contract is on the tape.

        Returns:
            Reaction sending ContractClose(bid, K) to the chain, at most once
            per bid
        """
        sid = self.pending.get(event.bid)
        if sid is None:
            return Reaction.ignore(IgnoreReason.OPEN_NOT_PENDING)
        if event.bid in self.answered:
            return Reaction.ignore(IgnoreReason.OPEN_ALREADY_ANSWERED)
        cert = self.certificates[sid]
        if event.condition != cert.key_hash or event.amount != self.price:
            return Reaction.ignore(IgnoreReason.OPEN_TERMS_MISMATCH)
        self.answered.add(event.bid)
        return Reaction(sends=self._close_messages(event.bid, cert.key))

    def handle_ledger(self, update: LedgerUpdate) -> Reaction:
        """Report PaymentReceived(bid) once the ledger shows this seller was paid."""
        if update.bid not in self.answered or update.payee != self.party_id:
            return Reaction.ignore(IgnoreReason.LEDGER_NO_PAYMENT)
        if update.bid in self.paid:
            return Reaction.ignore(IgnoreReason.LEDGER_ALREADY_REPORTED)
        self.paid.add(update.bid)
        return Reaction(
            outputs=[
                PartyOutput(self.party_id, OutputKind.PAYMENT_RECEIVED, str(update.bid))
            ]
        )

    def _close_messages(self, bid: OfferId, key: SymKey) -> list[Outbound]:
        return [Outbound(CHAIN_ID, Channel.PUBLIC, ContractClose(bid, key))]


@dataclass(frozen=True)
class Purchase:
    """What the buyer keeps after opening a contract: C and the lock X."""

    ciphertext: Ciphertext
    key_hash: Digest


class Buyer:
    """
    The buyer: publishes offers, pays into a hash-locked contract for a
    verified matching answer, and decrypts once the key is on the tape.

    Args:
        party_id: The buyer's id
        directory: Key directory used to look up notary verify keys
        price: Amount locked in each contract
    """

    role = Role.BUYER

    def __init__(self, party_id: str, directory: KeyDirectory, price: int = 1) -> None:
        self.party_id = party_id
        self.directory = directory
        self.price = price
        self.offers: dict[OfferId, Criterion] = {}
        self.purchases: dict[OfferId, Purchase] = {}
        self.completed: set[OfferId] = set()

    def handle(self, sender: str, message: Message) -> Reaction:
        """Dispatch a delivered message to its handler."""
        if isinstance(message, Selling):
            return self.handle_selling(message)
        if isinstance(message, ContractClose) and sender == CHAIN_ID:
            return self.handle_close(message)
        return Reaction.ignore(IgnoreReason.UNEXPECTED_MESSAGE)

    def make_offer(self, bid: OfferId, criterion: Criterion) -> Reaction:
        """
        Publish an offer.

        Returns:
            Reaction multicasting Buying(bid, b) on the public channel

        Raises:
            DuplicateBid: If this buyer already used ``bid``
            ValueError: If ``bid`` does not belong to this buyer
        """
        if bid.buyer_id != self.party_id:
            raise ValueError(f"bid {bid} is not owned by buyer {self.party_id}")
        if bid in self.offers:
            raise DuplicateBid(f"bid {bid} was already offered")
        self.offers[bid] = criterion
        return Reaction(sends=[Outbound(MULTICAST, Channel.PUBLIC, Buying(bid, criterion))])

    def handle_selling(self, selling: Selling) -> Reaction:
        """
        Check a seller's answer and, if it holds up, lock the price on chain.

        Returns:
            Reaction sending ContractOpen(bid, X, price) to the chain, at most
            once per bid, or the reason the answer was ignored
        """
        criterion = self.offers.get(selling.bid)
        if criterion is None:
            return Reaction.ignore(IgnoreReason.SELLING_UNKNOWN_OFFER)
        if selling.bid in self.purchases:
            return Reaction.ignore(IgnoreReason.SELLING_ALREADY_OPENED)
        verify_key = self.directory.notary_key(selling.notary_id)
        if verify_key is None:
            return Reaction.ignore(IgnoreReason.SELLING_UNKNOWN_NOTARY)
        if not signature_valid(
            verify_key,
            selling.attributes,
            selling.ciphertext_hash,
            selling.key_hash,
            selling.signature,
        ):
            return Reaction.ignore(IgnoreReason.SELLING_BAD_SIGNATURE)
        if hash_data(selling.ciphertext.to_bytes()) != selling.ciphertext_hash:
            return Reaction.ignore(IgnoreReason.SELLING_CIPHERTEXT_HASH_MISMATCH)
        if not eval_criterion(selling.attributes, criterion):
            return Reaction.ignore(IgnoreReason.SELLING_CRITERION_MISMATCH)

        self.purchases[selling.bid] = Purchase(selling.ciphertext, selling.key_hash)
        open_message = ContractOpen(selling.bid, selling.key_hash, self.price)
        return Reaction(sends=[Outbound(CHAIN_ID, Channel.PUBLIC, open_message)])

    def handle_close(self, event: ContractClose) -> Reaction:
        """
        Decrypt the purchased data with the key published on the tape.

        Returns:
            Reaction with one Message(bid, plaintext) output per purchase, or
            Message(bid, ⊥) when the key matches X but does not decrypt C
        """
        purchase = self.purchases.get(event.bid)
        if purchase is None:
            return Reaction.ignore(IgnoreReason.CLOSE_NOT_PENDING)
        if event.bid in self.completed:
            return Reaction.ignore(IgnoreReason.CLOSE_ALREADY_COMPLETE)
        if hash_data(event.key.raw) != purchase.key_hash:
            return Reaction.ignore(IgnoreReason.CLOSE_KEY_MISMATCH)
        self.completed.add(event.bid)
        try:
            plaintext = decrypt(event.key, purchase.ciphertext)
        except AuthenticationFailure:
            logger.warning("Key for %s opened the contract but not the data", event.bid)
            output = PartyOutput(self.party_id, OutputKind.MESSAGE, str(event.bid), failed=True)
        else:
            output = PartyOutput(
                self.party_id, OutputKind.MESSAGE, str(event.bid), payload=plaintext
            )
        return Reaction(outputs=[output])


# --- Byzantine replacements ---


class CertificateMutation(str, Enum):
    """How a corrupted notary bends the certificate it sends."""

    BAD_SIGNATURE = "bad-signature"
    CIPHERTEXT_HASH = "ciphertext-hash"
    KEY_HASH = "key-hash"
    PLAINTEXT_MISMATCH = "plaintext-mismatch"
    FALSE_PLAINTEXT = "false-plaintext"


class TamperingNotary(Notary):
    """
    Corrupted notary. Each mutation except ``false-plaintext`` breaks exactly
    one of the seller's four certificate checks and re-signs where needed so
    the others still pass. ``false-plaintext`` issues a fully consistent
    certificate over ``replacement`` instead of the requested data.

    Args:
        party_id: The notary's id
        keypair: The notary's genuine signing key pair
        mutation: Which mutation to apply
        replacement: Data certified instead of M under ``false-plaintext``
    """

    def __init__(
        self,
        party_id: str,
        keypair: SigKeyPair,
        mutation: CertificateMutation,
        replacement: bytes = b"",
    ) -> None:
        super().__init__(party_id, keypair)
        self.mutation = mutation
        self.replacement = replacement

    def _build_certificate(
        self,
        sid: SessionId,
        plaintext: bytes,
        attributes: AttributeSet,
        rng: random.Random,
    ) -> Cert:
        if self.mutation is CertificateMutation.FALSE_PLAINTEXT:
            return super()._build_certificate(sid, self.replacement, attributes, rng)

        honest = super()._build_certificate(sid, plaintext, attributes, rng)
        if self.mutation is CertificateMutation.BAD_SIGNATURE:
            flipped = bytes([honest.signature.raw[0] ^ 0x01]) + honest.signature.raw[1:]
            return _replace_cert(honest, signature=Signature(flipped))
        if self.mutation is CertificateMutation.CIPHERTEXT_HASH:
            bad_y = hash_data(honest.ciphertext.to_bytes() + b"\x00")
            return _replace_cert(
                honest,
                ciphertext_hash=bad_y,
                signature=self._sign(attributes, bad_y, honest.key_hash),
            )
        if self.mutation is CertificateMutation.KEY_HASH:
            bad_x = hash_data(honest.key.raw + b"\x00")
            return _replace_cert(
                honest,
                key_hash=bad_x,
                signature=self._sign(attributes, honest.ciphertext_hash, bad_x),
            )
        # PLAINTEXT_MISMATCH: M is not signed, so only Dec(K, C) = M fails
        return _replace_cert(honest, plaintext=plaintext + b"\x00")


def _replace_cert(cert: Cert, **changes: Any) -> Cert:
    fields = {
        "sid": cert.sid,
        "key": cert.key,
        "plaintext": cert.plaintext,
        "ciphertext": cert.ciphertext,
        "attributes": cert.attributes,
        "ciphertext_hash": cert.ciphertext_hash,
        "key_hash": cert.key_hash,
        "signature": cert.signature,
    }
    fields.update(changes)
    return Cert(**fields)


class KeyGuessingSeller(Seller):
    """
    Corrupted seller that submits ``wrong_keys`` random keys before the real
    one whenever it answers an open contract.

    Args:
        party_id: The seller's id
        directory: Key directory
        rng: Randomness for the wrong keys
        wrong_keys: How many wrong keys precede the real one
        price: Expected contract amount
    """

    def __init__(
        self,
        party_id: str,
        directory: KeyDirectory,
        rng: random.Random,
        wrong_keys: int = 100,
        price: int = 1,
    ) -> None:
        super().__init__(party_id, directory, price)
        self.rng = rng
        self.wrong_keys = wrong_keys

    def _close_messages(self, bid: OfferId, key: SymKey) -> list[Outbound]:
        guesses = []
        while len(guesses) < self.wrong_keys:
            guess = gen_key(self.rng)
            if guess != key:
                guesses.append(Outbound(CHAIN_ID, Channel.PUBLIC, ContractClose(bid, guess)))
        return guesses + super()._close_messages(bid, key)


class WithholdingSeller(Seller):
    """Corrupted seller that takes the buyer's escrow hostage by never revealing K."""

    def _close_messages(self, bid: OfferId, key: SymKey) -> list[Outbound]:
        logger.debug("Seller %s withholds the key for %s", self.party_id, bid)
        return []


NOTARY_BEHAVIORS = frozenset(mutation.value for mutation in CertificateMutation)
SELLER_BEHAVIORS = frozenset({"wrong-keys", "withhold-key"})


def build_corrupted_notary(
    party_id: str, keypair: SigKeyPair, behavior: str, params: Mapping[str, Any]
) -> Notary:
    """
    Build the replacement state machine for a corrupted notary.

    Args:
        party_id: Notary id
        keypair: The notary's key pair
        behavior: One of NOTARY_BEHAVIORS
        params: Behaviour parameters; ``replacement`` (UTF-8 text) or
            ``replacement_hex`` for ``false-plaintext``

    Raises:
        ValueError: For an unknown behaviour
    """
    if behavior not in NOTARY_BEHAVIORS:
        raise ValueError(f"unknown notary behavior {behavior!r}")
    if "replacement_hex" in params:
        replacement = bytes.fromhex(str(params["replacement_hex"]))
    else:
        replacement = str(params.get("replacement", "substituted data")).encode("utf-8")
    return TamperingNotary(party_id, keypair, CertificateMutation(behavior), replacement)


def build_corrupted_seller(
    party_id: str,
    directory: KeyDirectory,
    behavior: str,
    params: Mapping[str, Any],
    rng: random.Random,
    price: int = 1,
) -> Seller:
    """
    Build the replacement state machine for a corrupted seller.

    Args:
        party_id: Seller id
        directory: Key directory
        behavior: One of SELLER_BEHAVIORS
        params: ``wrong_keys`` (default 100) for ``wrong-keys``
        rng: Randomness owned by the corrupted party
        price: Expected contract amount

    Raises:
        ValueError: For an unknown behaviour
    """
    if behavior == "wrong-keys":
        return KeyGuessingSeller(
            party_id, directory, rng, int(params.get("wrong_keys", 100)), price
        )
    if behavior == "withhold-key":
        return WithholdingSeller(party_id, directory, price)
    raise ValueError(f"unknown seller behavior {behavior!r}")
