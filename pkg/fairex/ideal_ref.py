"""
The ideal data-exchange functionality, executable, and the real-vs-ideal oracle.

``ideal_apply`` is the trusted-party version of the exchange: it stores the
seller's data, hands offers to whoever the adversary picks, checks the
audience predicate itself and moves one price from buyer to seller. No
cryptography is involved.

``project_schedule`` translates a real transcript into the ideal events the
adversary's actions correspond to, re-checking certificates and hash locks
on its own rather than trusting the real parties. ``equivalent`` then runs
the ideal functionality on that schedule and compares each honest party's
outputs and the ledger with the real run.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from fairex.chain import CHAIN_ID
from fairex.criteria import AttributeSet, Criterion, eval_criterion
from fairex.crypto_suite import Digest, SymKey, decrypt, hash_data, verify
from fairex.errors import (
    AuthenticationFailure,
    InvalidEvent,
    MalformedEncoding,
    MalformedKey,
    UnmappableTranscript,
)
from fairex.harness.transcript import Transcript
from fairex.parties import OutputKind, PartyOutput, Role
from fairex.wire import ContractClose as CloseMessage
from fairex.wire import (
    Buying,
    Cert,
    CertifyInput,
    ContractOpen,
    LedgerUpdate,
    OfferId,
    SessionId,
    decode,
    encode_cert_body,
)

logger = logging.getLogger(__name__)


# --- ideal events ---


@dataclass(frozen=True)
class Certify:
    sid: SessionId
    seller: str
    plaintext: bytes
    attributes: AttributeSet


@dataclass(frozen=True)
class CertReceivedAck:
    sid: SessionId


@dataclass(frozen=True)
class Buy:
    bid: OfferId
    criterion: Criterion


@dataclass(frozen=True)
class DeliverOffer:
    bid: OfferId
    party: str


@dataclass(frozen=True)
class Sell:
    bid: OfferId
    sid: SessionId
    seller: str


@dataclass(frozen=True)
class ContractClose:
    """Settlement of ``bid`` with the sale made from certificate ``sid``."""

    bid: OfferId
    sid: SessionId


@dataclass(frozen=True)
class Finished:
    """
    The buyer learns the data. ``substitute`` is the M' a corrupted notary
    certified instead; ``failed`` is the corrupted-notary case where
    nothing decrypts.
    """

    bid: OfferId
    substitute: Optional[bytes] = None
    failed: bool = False


@dataclass(frozen=True)
class PaymentNotice:
    """The seller sees its payment on the ledger."""

    bid: OfferId
    party: str


IdealEvent = Union[
    Certify,
    CertReceivedAck,
    Buy,
    DeliverOffer,
    Sell,
    ContractClose,
    Finished,
    PaymentNotice,
]

_EVENT_NAMES: dict[type, str] = {
    Certify: "Certify",
    CertReceivedAck: "CertReceivedAck",
    Buy: "Buy",
    DeliverOffer: "DeliverOffer",
    Sell: "Sell",
    ContractClose: "ContractClose",
    Finished: "Finished",
    PaymentNotice: "PaymentNotice",
}


def describe_event(event: IdealEvent) -> dict[str, Any]:
    """Compact JSON form of an event: its name and the ids it refers to."""
    out: dict[str, Any] = {"event": _EVENT_NAMES[type(event)]}
    for name in ("sid", "bid", "party", "seller"):
        value = getattr(event, name, None)
        if value is not None:
            out[name] = str(value)
    if isinstance(event, Finished) and (event.substitute is not None or event.failed):
        out["substitute"] = None if event.failed else (event.substitute or b"").hex()
    return out


# --- ideal state ---


@dataclass
class IdealState:
    """
    State of the ideal functionality.

    Attributes:
        price: Amount moved per settlement
        sellers: Ids that receive offers as sellers
        corrupted_notaries: Notaries whose certificates may carry M'
        certificates: sid -> the Certify input
        acked: sids whose CertReceived went out
        offers: bid -> criterion
        delivered_offers: (bid, party) pairs the adversary delivered
        sales: sid -> bid it was sold to (at most one)
        seller_bids: (seller, bid) pairs already answered
        settled: bid -> sid it was settled with
        finished: bids whose buyer got its Message
        notified: (bid, party) PaymentReceived already reported
        ledger: party -> tokens
    """

    price: int
    sellers: frozenset[str]
    corrupted_notaries: frozenset[str] = frozenset()
    certificates: dict[SessionId, Certify] = field(default_factory=dict)
    acked: set[SessionId] = field(default_factory=set)
    offers: dict[OfferId, Criterion] = field(default_factory=dict)
    delivered_offers: set[tuple[OfferId, str]] = field(default_factory=set)
    sales: dict[SessionId, OfferId] = field(default_factory=dict)
    seller_bids: set[tuple[str, OfferId]] = field(default_factory=set)
    settled: dict[OfferId, SessionId] = field(default_factory=dict)
    finished: set[OfferId] = field(default_factory=set)
    notified: set[tuple[OfferId, str]] = field(default_factory=set)
    ledger: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_header(cls, header: dict[str, Any]) -> IdealState:
        """Initial ideal state for the run a transcript header describes."""
        parties = header["parties"]
        corruption = header.get("corruption")
        notaries = {p["id"] for p in parties if p["role"] == Role.NOTARY.value}
        corrupted = (
            frozenset({corruption["party"]})
            if corruption and corruption["party"] in notaries
            else frozenset()
        )
        return cls(
            price=int(header["price"]),
            sellers=frozenset(p["id"] for p in parties if p["role"] == Role.SELLER.value),
            corrupted_notaries=corrupted,
            ledger={p["id"]: int(p["balance"]) for p in parties},
        )

    def total(self) -> int:
        return sum(self.ledger.values())


def ideal_apply(
    state: IdealState, event: IdealEvent
) -> tuple[IdealState, list[PartyOutput]]:
    """
    Apply one event to the ideal functionality.

    Args:
        state: Ideal state, updated in place
        event: The event

    Returns:
        The state and the party outputs the event produces

    Raises:
        InvalidEvent: If the event is out of order (for example a
            ContractClose without a valid Sell)
    """
    if isinstance(event, Certify):
        if event.sid in state.certificates:
            raise InvalidEvent(f"sid {event.sid} certified twice")
        state.certificates[event.sid] = event
        return state, []

    if isinstance(event, CertReceivedAck):
        certify = state.certificates.get(event.sid)
        if certify is None:
            raise InvalidEvent(f"ack for unknown sid {event.sid}")
        if event.sid in state.acked:
            return state, []
        state.acked.add(event.sid)
        return state, [PartyOutput(certify.seller, OutputKind.CERT_RECEIVED, str(event.sid))]

    if isinstance(event, Buy):
        if event.bid in state.offers:
            raise InvalidEvent(f"bid {event.bid} offered twice")
        state.offers[event.bid] = event.criterion
        return state, []

    if isinstance(event, DeliverOffer):
        if event.bid not in state.offers:
            raise InvalidEvent(f"delivery of unknown offer {event.bid}")
        key = (event.bid, event.party)
        if key in state.delivered_offers:
            return state, []
        state.delivered_offers.add(key)
        if event.party not in state.sellers:
            return state, []
        return state, [PartyOutput(event.party, OutputKind.OFFER_RECEIVED, str(event.bid))]

    if isinstance(event, Sell):
        return _apply_sell(state, event), []

    if isinstance(event, ContractClose):
        if state.sales.get(event.sid) != event.bid:
            raise InvalidEvent(f"settlement of {event.bid} without a valid sale of {event.sid}")
        if event.bid in state.settled:
            raise InvalidEvent(f"{event.bid} settled twice")
        buyer = event.bid.buyer_id
        seller = state.certificates[event.sid].seller
        if state.ledger.get(buyer, 0) < state.price:
            raise InvalidEvent(f"buyer {buyer} cannot pay for {event.bid}")
        state.ledger[buyer] -= state.price
        state.ledger[seller] = state.ledger.get(seller, 0) + state.price
        state.settled[event.bid] = event.sid
        return state, []

    if isinstance(event, Finished):
        sid = state.settled.get(event.bid)
        if sid is None:
            raise InvalidEvent(f"{event.bid} finished before settlement")
        substituted = event.substitute is not None or event.failed
        if substituted and sid.notary_id not in state.corrupted_notaries:
            raise InvalidEvent(f"substitute data for {event.bid} from an honest notary")
        # Abort is scoped to this bid: other bids stay processable
        if event.bid in state.finished:
            return state, []
        state.finished.add(event.bid)
        if event.failed:
            payload = None
        elif event.substitute is not None:
            payload = event.substitute
        else:
            payload = state.certificates[sid].plaintext
        output = PartyOutput(
            event.bid.buyer_id,
            OutputKind.MESSAGE,
            str(event.bid),
            payload=payload,
            failed=event.failed,
        )
        return state, [output]

    if isinstance(event, PaymentNotice):
        sid = state.settled.get(event.bid)
        if sid is None:
            raise InvalidEvent(f"payment notice for unsettled {event.bid}")
        key = (event.bid, event.party)
        if event.party != state.certificates[sid].seller or key in state.notified:
            return state, []
        state.notified.add(key)
        return state, [PartyOutput(event.party, OutputKind.PAYMENT_RECEIVED, str(event.bid))]

    raise InvalidEvent(f"unknown event {event!r}")


def _apply_sell(state: IdealState, event: Sell) -> IdealState:
    certify = state.certificates.get(event.sid)
    if certify is None or event.bid not in state.offers:
        raise InvalidEvent(f"sell of unknown {event.sid} or {event.bid}")
    ready = (
        certify.seller == event.seller
        and event.sid in state.acked
        and (event.bid, event.seller) in state.delivered_offers
    )
    if not ready or event.sid in state.sales or (event.seller, event.bid) in state.seller_bids:
        return state
    if not eval_criterion(certify.attributes, state.offers[event.bid]):
        return state
    state.sales[event.sid] = event.bid
    state.seller_bids.add((event.seller, event.bid))
    return state


# --- projection ---


@dataclass(frozen=True)
class Divergence:
    """
    First point where the real run and the ideal run disagree.

    ``party`` is a party id or ``ledger``. For a party, ``index`` is the
    position in that party's output sequence; for the ledger it counts the
    ledger snapshots compared so far.
    """

    party: str
    index: int
    step: Optional[int]
    real: Any
    ideal: Any

    def to_json(self) -> dict[str, Any]:
        return {
            "party": self.party,
            "index": self.index,
            "step": self.step,
            "real": self.real,
            "ideal": self.ideal,
        }


@dataclass
class EquivalenceReport:
    """Result of ``equivalent``; truthy when the runs match."""

    divergence: Optional[Divergence]
    schedule: list[IdealEvent]
    ideal_outputs: dict[str, list[PartyOutput]]

    @property
    def ok(self) -> bool:
        return self.divergence is None

    def __bool__(self) -> bool:
        return self.ok


def _payload(record: dict[str, Any]) -> bytes:
    return bytes.fromhex(record["payload"])


def _certificate_sound(cert: Cert, verify_key: bytes) -> bool:
    """
    The four certificate checks the ideal-world simulator makes before it
    acks: signature over (s, Y, X), Y = H(C), X = H(K) and Dec(K, C) = M.
    Does not use ``parties.certificate_problem``.
    """
    body = encode_cert_body(cert.attributes, cert.ciphertext_hash, cert.key_hash)
    try:
        if not verify(verify_key, body, cert.signature):
            return False
    except MalformedKey:
        return False
    if hash_data(cert.ciphertext.to_bytes()) != cert.ciphertext_hash:
        return False
    if hash_data(cert.key.raw) != cert.key_hash:
        return False
    try:
        return decrypt(cert.key, cert.ciphertext) == cert.plaintext
    except AuthenticationFailure:
        return False


class _Projector:
    """Walks a transcript, emitting ideal events and applying them as it goes."""

    def __init__(self, transcript: Transcript) -> None:
        header = transcript.header
        self.state = IdealState.from_header(header)
        self.parties = {p["id"] for p in header["parties"]}
        self.notary_keys = {
            party: bytes.fromhex(key) for party, key in header["notary_keys"].items()
        }
        self.messages: dict[int, dict[str, Any]] = {}
        self.certs: dict[SessionId, Cert] = {}
        self.conditions: dict[OfferId, Digest] = {}
        self.keys: dict[OfferId, SymKey] = {}
        self.events: list[tuple[int, IdealEvent]] = []
        self.outputs: dict[str, list[tuple[int, PartyOutput]]] = defaultdict(list)
        self.ledger_divergence: Optional[Divergence] = None
        self._ledger_checks = 0

    def run(self, transcript: Transcript) -> None:
        for record in transcript:
            kind = record["type"]
            if kind == "env":
                self._on_env(record)
            elif kind == "enqueue":
                self.messages[record["msg_id"]] = record
            elif kind == "action":
                self._on_action(record)
            elif kind == "chain":
                self._on_chain(record)
            elif kind in ("ledger", "final"):
                self._check_ledger(record)

    def emit(self, step: int, event: IdealEvent) -> None:
        try:
            _, outputs = ideal_apply(self.state, event)
        except InvalidEvent as e:
            logger.error("Transcript does not map onto the ideal run: %s", e)
            raise UnmappableTranscript(str(e), step) from e
        self.events.append((step, event))
        for output in outputs:
            self.outputs[output.party].append((step, output))

    def _on_env(self, record: dict[str, Any]) -> None:
        step = record["step"]
        if record["input"] == "certify":
            certify = decode(_payload(record))
            if not isinstance(certify, CertifyInput):
                raise UnmappableTranscript("certify input is not a CertifyInput", step)
            self.emit(
                step,
                Certify(certify.sid, certify.seller_id, certify.plaintext, certify.attributes),
            )
        elif record["input"] == "buy":
            buying = decode(_payload(record))
            if not isinstance(buying, Buying):
                raise UnmappableTranscript("buy input is not a Buying", step)
            self.emit(step, Buy(buying.bid, buying.criterion))
        elif record["input"] == "sell":
            self.emit(
                step,
                Sell(OfferId.parse(record["bid"]), SessionId.parse(record["sid"]), record["party"]),
            )

    def _on_action(self, record: dict[str, Any]) -> None:
        if record["action"] not in ("deliver", "replay", "inject"):
            return
        message_record = self.messages.get(record["msg_id"])
        if message_record is None:
            raise UnmappableTranscript(f"action on unknown message #{record['msg_id']}", record["step"])
        receiver = record.get("to") or message_record["receiver"]
        try:
            message = decode(_payload(message_record))
        except MalformedEncoding:
            return
        step = record["step"]
        sender = message_record["sender"]

        if isinstance(message, Cert):
            self._on_cert(step, message, receiver)
        elif isinstance(message, Buying):
            self._on_offer(step, message, receiver)
        elif isinstance(message, CloseMessage) and sender == CHAIN_ID:
            self._on_close_seen(step, message, receiver)
        elif isinstance(message, LedgerUpdate) and sender == CHAIN_ID:
            sid = self.state.settled.get(message.bid)
            if sid is not None and (message.bid, receiver) not in self.state.notified:
                if receiver == self.state.certificates[sid].seller:
                    self.emit(step, PaymentNotice(message.bid, receiver))

    def _on_cert(self, step: int, cert: Cert, receiver: str) -> None:
        certify = self.state.certificates.get(cert.sid)
        if certify is None:
            raise UnmappableTranscript(f"certificate for uncertified {cert.sid}", step)
        if receiver != certify.seller or cert.sid in self.state.acked:
            return
        verify_key = self.notary_keys.get(cert.sid.notary_id)
        if verify_key is None or not _certificate_sound(cert, verify_key):
            return
        honest_notary = cert.sid.notary_id not in self.state.corrupted_notaries
        if honest_notary and (
            cert.plaintext != certify.plaintext or cert.attributes != certify.attributes
        ):
            raise UnmappableTranscript(f"honest notary certified other data for {cert.sid}", step)
        self.certs[cert.sid] = cert
        self.emit(step, CertReceivedAck(cert.sid))

    def _on_offer(self, step: int, buying: Buying, receiver: str) -> None:
        if receiver not in self.parties:
            return
        criterion = self.state.offers.get(buying.bid)
        if criterion is None or criterion != buying.criterion:
            raise UnmappableTranscript(f"offer {buying.bid} was never made by its buyer", step)
        if (buying.bid, receiver) not in self.state.delivered_offers:
            self.emit(step, DeliverOffer(buying.bid, receiver))

    def _on_chain(self, record: dict[str, Any]) -> None:
        step = record["step"]
        event = decode(_payload(record))
        if isinstance(event, ContractOpen):
            self.conditions.setdefault(event.bid, event.condition)
            return
        if not isinstance(event, CloseMessage) or event.bid in self.state.settled:
            return
        condition = self.conditions.get(event.bid)
        if condition is None:
            raise UnmappableTranscript(f"close of {event.bid} before any open", step)
        if hash_data(event.key.raw) != condition:
            # No ideal counterpart: the chain paid out without a preimage
            logger.error("Chain accepted a key for %s that does not open its lock", event.bid)
            return
        for sid, bid in self.state.sales.items():
            cert = self.certs.get(sid)
            if bid == event.bid and cert is not None and cert.key_hash == condition:
                self.keys[event.bid] = event.key
                self.emit(step, ContractClose(event.bid, sid))
                return
        raise UnmappableTranscript(f"{event.bid} closed without a matching sale", step)

    def _on_close_seen(self, step: int, close: CloseMessage, receiver: str) -> None:
        bid = close.bid
        if receiver != bid.buyer_id or bid in self.state.finished:
            return
        sid = self.state.settled.get(bid)
        if sid is None or hash_data(close.key.raw) != self.certs[sid].key_hash:
            return
        if sid.notary_id not in self.state.corrupted_notaries:
            self.emit(step, Finished(bid))
            return
        try:
            substitute = decrypt(close.key, self.certs[sid].ciphertext)
        except AuthenticationFailure:
            self.emit(step, Finished(bid, failed=True))
        else:
            self.emit(step, Finished(bid, substitute=substitute))

    def _check_ledger(self, record: dict[str, Any]) -> None:
        self._ledger_checks += 1
        if self.ledger_divergence is not None:
            return
        real = {party: int(count) for party, count in record["owned"].items()}
        ideal = dict(self.state.ledger)
        parties = set(real) | set(ideal)
        if any(real.get(p, 0) != ideal.get(p, 0) for p in parties):
            self.ledger_divergence = Divergence(
                party="ledger",
                index=self._ledger_checks - 1,
                step=record.get("step"),
                real=dict(sorted(real.items())),
                ideal=dict(sorted(ideal.items())),
            )


def _project(transcript: Transcript) -> _Projector:
    projector = _Projector(transcript)
    projector.run(transcript)
    return projector


def project_schedule(transcript: Transcript) -> list[IdealEvent]:
    """
    Translate a real transcript into the ideal event schedule.

    Raises:
        UnmappableTranscript: If the real run reached a state the ideal
            functionality cannot express
    """
    return [event for _, event in _project(transcript).events]


def _output_divergence(
    party: str,
    real: list[tuple[int, dict[str, Any]]],
    ideal: list[tuple[int, dict[str, Any]]],
) -> Optional[Divergence]:
    for index in range(max(len(real), len(ideal))):
        real_item = real[index] if index < len(real) else None
        ideal_item = ideal[index] if index < len(ideal) else None
        if real_item is not None and ideal_item is not None and real_item[1] == ideal_item[1]:
            continue
        steps = [item[0] for item in (real_item, ideal_item) if item is not None]
        return Divergence(
            party=party,
            index=index,
            step=min(steps),
            real=real_item[1] if real_item else None,
            ideal=ideal_item[1] if ideal_item else None,
        )
    return None


def equivalent(transcript: Transcript) -> EquivalenceReport:
    """
    Compare a real run with the ideal run on its projected schedule.

    Each honest party's output sequence must match value for value, and the
    real ledger (spendable plus escrowed tokens) must match the ideal ledger
    after every chain step and at the end.

    Returns:
        Report whose ``divergence`` is the earliest mismatch, or None

    Raises:
        UnmappableTranscript: From ``project_schedule``
    """
    projector = _project(transcript)
    header = transcript.header
    corrupted = header["corruption"]["party"] if header.get("corruption") else None
    honest = [p["id"] for p in header["parties"] if p["id"] != corrupted]

    real_outputs: dict[str, list[tuple[int, dict[str, Any]]]] = defaultdict(list)
    for record in transcript.outputs():
        body = {k: v for k, v in record.items() if k not in ("type", "step")}
        real_outputs[record["party"]].append((record["step"], body))

    candidates: list[Divergence] = []
    if projector.ledger_divergence is not None:
        candidates.append(projector.ledger_divergence)
    for party in honest:
        ideal = [(step, out.to_json()) for step, out in projector.outputs.get(party, [])]
        found = _output_divergence(party, real_outputs.get(party, []), ideal)
        if found is not None:
            candidates.append(found)

    first = min(
        candidates,
        key=lambda d: (d.step if d.step is not None else -1, d.party),
        default=None,
    )
    if first is not None:
        logger.info("Real and ideal runs diverge: %s", first.to_json())
    return EquivalenceReport(
        divergence=first,
        schedule=[event for _, event in projector.events],
        ideal_outputs={
            party: [out for _, out in outputs] for party, outputs in projector.outputs.items()
        },
    )
